"""Run configuration: parsing, defaulting and validation with field paths."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

from ..model import ModelConfig, toy_config
from ..tasks import TASKS, CorpusConfig, MixtureSpec
from ..tasks.mixture import HIGH_RES_WEIGHTS, PRETRAIN_WEIGHTS
from ..tasks.vocab import default_tokenizer
from ..training import FINETUNE_PRESETS, PhaseConfig, Schedule
from ..eval import EVAL_TASKS


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field, e.g. ``phases[1].steps``."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


MODEL_DEFAULTS = {"preset": "toy", "d_model": 64, "layers": 2, "max_text_len": 64, "dtype": "float32"}
CORPUS_DEFAULTS = {"path": "corpus", "n_scenes": 1000, "seed": None, "keep_fraction": 0.1,
                   "noise_fraction": 0.5, "image_resolution": 56, "embed_resolution": 112,
                   "hamming_threshold": 4, "tasks": list(TASKS), "eval_sets": []}
PHASE_DEFAULTS = {"name": None, "resolution": 56, "frozen_prefixes": [], "mixture": None, "steps": 100,
                  "batch_size": 16, "schedule": None}
SCHEDULE_DEFAULTS = {"kind": "warmup_inv_sqrt", "warmup_steps": 100, "peak_lr": 1e-3, "total_steps": None}
FINETUNE_DEFAULTS = {"preset": "coco-like", "data": "caption_scenes", "n_examples": 256, "tasks": ["cap"],
                     "peak_lr": None, "steps": None, "batch_size": None, "dropout": None}
EVAL_SET_DEFAULTS = {"task": "vqa", "n": 32, "seed": None}
EVAL_DEFAULTS = {"datasets": [], "generate": [], "max_len": None}
TOP_DEFAULTS = {"seed": 0, "output_dir": "run", "threads": None, "model": None, "corpus": None,
                "phases": None, "finetune": None, "eval": None}


def _fill(data: Any, path: str, defaults: Mapping[str, Any]) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0],
                          f"unknown field; allowed: {sorted(defaults)}")
    return {k: data.get(k, v) for k, v in defaults.items()}


def _join(path: str, key) -> str:
    return f"{path}[{key}]" if isinstance(key, int) else (f"{path}.{key}" if path else key)


def _int(v, path: str, lo: int | None = None, optional: bool = False):
    if v is None and optional:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    return v


def _num(v, path: str, lo: float | None = None, hi: float | None = None, optional: bool = False):
    if v is None and optional:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(path, f"must lie in [{lo}, {hi}], got {v}")
    return float(v)


def _str(v, path: str, choices=None, optional: bool = False):
    if v is None and optional:
        return None
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    if choices is not None and v not in choices:
        raise ConfigError(path, f"must be one of {sorted(choices)}, got {v!r}")
    return v


def _list(v, path: str) -> list:
    if not isinstance(v, (list, tuple)):
        raise ConfigError(path, f"expected a list, got {type(v).__name__}")
    return list(v)


def _built(path: str, ctor, *args, **kwargs):
    try:
        return ctor(*args, **kwargs)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(path, str(e).strip("\"'")) from None


def _model(data, path: str) -> dict:
    m = _fill(data, path, MODEL_DEFAULTS)
    _str(m["preset"], _join(path, "preset"), {"toy"})
    _int(m["d_model"], _join(path, "d_model"), 4)
    _int(m["layers"], _join(path, "layers"), 1)
    _int(m["max_text_len"], _join(path, "max_text_len"), 8)
    _str(m["dtype"], _join(path, "dtype"), {"float32", "float64"})
    _built(path, model_config, m, 56)
    return m


def model_config(m: Mapping, resolution: int) -> ModelConfig:
    return toy_config(vocab_size=default_tokenizer().vocab_size, resolution=resolution, d_model=m["d_model"],
                      layers=m["layers"], max_text_len=m["max_text_len"], dtype=m["dtype"])


def _mixture(v, path: str, default: Mapping) -> dict:
    w = dict(default) if v is None else v
    if not isinstance(w, Mapping):
        raise ConfigError(path, "expected a mapping of task -> weight")
    for k, x in w.items():
        _num(x, _join(path, k), 0)
    _built(path, MixtureSpec, w)
    return {k: w[k] for k in sorted(w)}


def _schedule(v, path: str) -> dict:
    s = _fill(v, path, SCHEDULE_DEFAULTS)
    _built(path, Schedule, **s)
    return s


def _phase(data, path: str, index: int) -> dict:
    p = _fill(data, path, PHASE_DEFAULTS)
    p["name"] = _str(p["name"] or f"phase{index + 1}", _join(path, "name"))
    _int(p["resolution"], _join(path, "resolution"), 14)
    _int(p["steps"], _join(path, "steps"), 0)
    _int(p["batch_size"], _join(path, "batch_size"), 1)
    p["frozen_prefixes"] = [_str(x, _join(_join(path, "frozen_prefixes"), i))
                            for i, x in enumerate(_list(p["frozen_prefixes"], _join(path, "frozen_prefixes")))]
    p["mixture"] = _mixture(p["mixture"], _join(path, "mixture"), PRETRAIN_WEIGHTS if index == 0 else HIGH_RES_WEIGHTS)
    p["schedule"] = _schedule(p["schedule"], _join(path, "schedule"))
    _built(path, PhaseConfig.from_dict, p)
    if p["resolution"] % 14:
        raise ConfigError(_join(path, "resolution"), f"must be a multiple of the patch size 14, got {p['resolution']}")
    return p


def default_phases() -> list[dict]:
    return [{"name": "phase1", "resolution": 56, "frozen_prefixes": ["vit."], "steps": 200, "batch_size": 16},
            {"name": "phase2", "resolution": 112, "frozen_prefixes": [], "steps": 50, "batch_size": 16,
             "schedule": {"kind": "warmup_inv_sqrt", "warmup_steps": 10, "peak_lr": 5e-4}}]


def _corpus(data, path: str, seed: int) -> dict:
    c = _fill(data, path, CORPUS_DEFAULTS)
    _str(c["path"], _join(path, "path"))
    c["seed"] = seed if c["seed"] is None else _int(c["seed"], _join(path, "seed"), 0)
    c["tasks"] = [_str(t, _join(_join(path, "tasks"), i), set(TASKS)) for i, t in enumerate(_list(c["tasks"], _join(path, "tasks")))]
    c["eval_sets"] = [_str(x, _join(_join(path, "eval_sets"), i)) for i, x in enumerate(_list(c["eval_sets"], _join(path, "eval_sets")))]
    _built(path, corpus_config, c)
    return c


def corpus_config(c: Mapping) -> CorpusConfig:
    return CorpusConfig(n_scenes=c["n_scenes"], seed=c["seed"], keep_fraction=c["keep_fraction"],
                        noise_fraction=c["noise_fraction"], image_resolution=c["image_resolution"],
                        embed_resolution=c["embed_resolution"], hamming_threshold=c["hamming_threshold"],
                        tasks=tuple(c["tasks"]))


def _finetune(data, path: str) -> dict:
    f = _fill(data, path, FINETUNE_DEFAULTS)
    _str(f["preset"], _join(path, "preset"), set(FINETUNE_PRESETS))
    _str(f["data"], _join(path, "data"), {"caption_scenes", "corpus"})
    _int(f["n_examples"], _join(path, "n_examples"), 1)
    f["tasks"] = [_str(t, _join(_join(path, "tasks"), i), set(TASKS)) for i, t in enumerate(_list(f["tasks"], _join(path, "tasks")))]
    _num(f["peak_lr"], _join(path, "peak_lr"), 0, optional=True)
    _int(f["steps"], _join(path, "steps"), 1, optional=True)
    _int(f["batch_size"], _join(path, "batch_size"), 1, optional=True)
    _num(f["dropout"], _join(path, "dropout"), 0, 1, optional=True)
    return f


def _eval(data, path: str, seed: int) -> dict:
    e = _fill(data, path, EVAL_DEFAULTS)
    e["datasets"] = [_str(x, _join(_join(path, "datasets"), i))
                     for i, x in enumerate(_list(e["datasets"], _join(path, "datasets")))]
    gens = []
    for i, g in enumerate(_list(e["generate"], _join(path, "generate"))):
        gp = _join(_join(path, "generate"), i)
        g = _fill(g, gp, EVAL_SET_DEFAULTS)
        _str(g["task"], _join(gp, "task"), set(EVAL_TASKS))
        _int(g["n"], _join(gp, "n"), 1)
        g["seed"] = seed if g["seed"] is None else _int(g["seed"], _join(gp, "seed"), 0)
        gens.append(g)
    e["generate"] = gens
    _int(e["max_len"], _join(path, "max_len"), 1, optional=True)
    return e


def validate(data: Any, base_dir: str | Path | None = None) -> dict:
    """Return the effective (fully defaulted) config or raise ConfigError.

    Relative input paths resolve against ``base_dir``; listed input files
    (corpus eval sets, eval datasets) must exist.
    """
    top = _fill(data, "", TOP_DEFAULTS)
    seed = _int(top["seed"], "seed", 0)
    _str(top["output_dir"], "output_dir")
    _int(top["threads"], "threads", 1, optional=True)
    top["model"] = _model(top["model"], "model")
    top["corpus"] = _corpus(top["corpus"], "corpus", seed)
    phases = default_phases() if top["phases"] is None else _list(top["phases"], "phases")
    if len(phases) != 2:
        raise ConfigError("phases", f"expected exactly 2 phases (frozen low-res, then high-res), got {len(phases)}")
    top["phases"] = [_phase(p, f"phases[{i}]", i) for i, p in enumerate(phases)]
    if top["phases"][1]["resolution"] < top["phases"][0]["resolution"]:
        raise ConfigError("phases[1].resolution", "must be >= phases[0].resolution")
    top["finetune"] = _finetune(top["finetune"], "finetune")
    top["eval"] = _eval(top["eval"], "eval", seed)
    base = Path(base_dir) if base_dir is not None else None
    for field_path, items in (("corpus.eval_sets", top["corpus"]["eval_sets"]), ("eval.datasets", top["eval"]["datasets"])):
        for i, p in enumerate(items):
            full = resolve(p, base)
            if not full.exists():
                raise ConfigError(f"{field_path}[{i}]", f"file {str(full)!r} does not exist")
    return top


def load_config_file(path: str | Path) -> Any:
    """Parse a YAML or JSON config file (JSON is read as YAML's subset)."""
    import yaml

    text = Path(path).read_text(encoding="utf-8")
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"cannot parse {path}: {e}".replace("\n", " ")) from None


def dump_effective(cfg: Mapping) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def resolve(path: str | Path, base_dir: str | Path | None) -> Path:
    p = Path(path)
    return p if base_dir is None or p.is_absolute() else Path(base_dir) / p


def phase_configs(cfg: Mapping, steps_divisor: int = 1) -> list[PhaseConfig]:
    out = []
    for p in cfg["phases"]:
        d = dict(p)
        d["steps"] = max(1, d["steps"] // steps_divisor) if d["steps"] else 0
        sched = dict(d["schedule"])
        if sched["total_steps"] is not None:
            sched["total_steps"] = max(sched["warmup_steps"] + 1, sched["total_steps"] // steps_divisor)
        d["schedule"] = sched
        out.append(PhaseConfig.from_dict(d))
    return out



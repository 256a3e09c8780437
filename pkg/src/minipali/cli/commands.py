"""Subcommand implementations. Each takes parsed args plus the effective config."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..eval import (CLASSIFY_CLASSES, TextModel, caption_training_set, eval_images, evaluate, load_eval_set,
                    make_eval_set, write_eval_set, zero_shot_classify)
from ..model import Checkpoint, init_params, load_checkpoint, resize_positional_embeddings, save_checkpoint
from ..tasks import build_corpus, load_corpus, render_scene, random_scene, write_corpus
from ..tasks.corpus import dumps
from ..tasks.templates import caption_prompt
from ..training import MetricsLog, finetune, run_pretraining, soup_checkpoints
from .config import corpus_config, model_config, phase_configs, resolve


class MissingArtifact(FileNotFoundError):
    def __init__(self, path, what: str):
        self.path = str(path)
        super().__init__(f"{what} not found: {self.path}")


def need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(p, what)
    return p


def _checkpoint(path, resolution: int | None = None) -> Checkpoint:
    ckpt = load_checkpoint(need(path, "checkpoint"))
    if resolution is not None and resolution != ckpt.config.vit.image_resolution:
        ckpt = replace(ckpt, config=ckpt.config.with_resolution(resolution),
                       params=resize_positional_embeddings(ckpt.params, resolution))
    return ckpt


def _model(args) -> TextModel:
    ckpt = _checkpoint(args.checkpoint, args.resolution)
    return TextModel(replace(ckpt.config, dropout=0.0), ckpt.params)


def _image(args, resolution: int, dtype: str) -> tuple[np.ndarray, str]:
    if args.image is not None:
        img = Image.open(need(args.image, "image")).convert("RGB")
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        return np.asarray(img, dtype=dtype) / 255.0, str(args.image)
    scene = random_scene(args.scene_seed, language="EN")
    return np.asarray(render_scene(scene, resolution).data, dtype=dtype), f"scene:{args.scene_seed}"


def _decode(args) -> tuple[str, int]:
    return ("beam", args.beam) if args.beam and args.beam > 1 else ("greedy", 1)


def _write_json(path: Path, obj) -> Path:
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    return path


# -- commands ---------------------------------------------------------------------------------

def build_corpus_cmd(args, cfg, out: Path) -> str:
    c = cfg["corpus"]
    cc = corpus_config(c)
    evals = [r for p in c["eval_sets"] for r in load_eval_set(need(p, "eval set"))]
    corpus = build_corpus(cc, eval_images(evals, cc.image_resolution))
    write_corpus(corpus, out)
    m = corpus.manifest
    return (f"kept {m['kept_after_quality']}/{m['n_candidates']} scenes, dedup removed {m['dedup_removed']}, "
            f"{m['n_records']} records -> {out}")


def pretrain_cmd(args, cfg, out: Path) -> str:
    corpus_dir = need(args.corpus or cfg["corpus"]["path"], "corpus")
    need(corpus_dir / "manifest.json", "corpus manifest")
    corpus = load_corpus(corpus_dir)
    ph1, ph2 = phase_configs(cfg, args.steps_divisor)
    if args.resolution is not None:
        ph2 = replace(ph2, resolution=args.resolution)
    mc = model_config(cfg["model"], ph1.resolution)
    params = init_params(mc, cfg["seed"])
    log = MetricsLog(out / "train_metrics.jsonl")
    c1, c2 = run_pretraining(mc, params, ph1, ph2, corpus, seed=cfg["seed"], out_dir=out, log=log)
    return f"{ph1.name}: {ph1.steps} steps, {ph2.name}: {ph2.steps} steps -> {out}"


def finetune_cmd(args, cfg, out: Path) -> str:
    ckpt = _checkpoint(args.checkpoint, args.resolution)
    f = cfg["finetune"]
    res = ckpt.config.vit.image_resolution
    if f["data"] == "caption_scenes":
        data = caption_training_set(f["n_examples"], cfg["seed"], res)
    else:
        corpus = load_corpus(need(args.corpus or cfg["corpus"]["path"], "corpus"))
        data = [corpus.example(r, res) for r in corpus.records if r.task in f["tasks"]][:f["n_examples"]]
        if not data:
            raise ValueError(f"corpus has no records for tasks {f['tasks']}")
    overrides = {k: f[k] for k in ("peak_lr", "steps", "batch_size", "dropout")}
    if overrides["steps"] is not None:
        overrides["steps"] = max(1, overrides["steps"] // args.steps_divisor)
    log = MetricsLog(out / "finetune_metrics.jsonl")
    tuned = finetune(ckpt, data, f["preset"], steps_divisor=args.steps_divisor, seed=cfg["seed"], log=log,
                     **overrides)
    save_checkpoint(out / "finetune.ckpt", tuned)
    return f"fine-tuned {len(data)} examples for {tuned.step - ckpt.step} steps -> {out / 'finetune.ckpt'}"


def soup_cmd(args, cfg, out: Path) -> str:
    ckpts = [_checkpoint(p) for p in args.checkpoints]
    save_checkpoint(out / "soup.ckpt", soup_checkpoints(ckpts))
    return f"souped {len(ckpts)} checkpoints -> {out / 'soup.ckpt'}"


def generate_cmd(args, cfg, out: Path) -> str:
    model = _model(args)
    image, ref = _image(args, model.resolution, model.cfg.dtype)
    mode, k = _decode(args)
    prompt = args.prompt or caption_prompt("EN", 0)
    text = model.generate_text(image, prompt, mode=mode, k=k)
    _write_json(out / "generation.json", {"image": ref, "prompt": prompt, "output": text,
                                          "decode_mode": "greedy" if k == 1 else f"beam{k}"})
    return text


def classify_cmd(args, cfg, out: Path) -> str:
    model = _model(args)
    image, ref = _image(args, model.resolution, model.cfg.dtype)
    names = [c.strip() for c in args.classes.split(",")] if args.classes else list(CLASSIFY_CLASSES)
    ranking = zero_shot_classify(model, image, names)
    _write_json(out / "classification.json", {"image": ref, "ranking": [[n, s] for n, s in ranking]})
    return " ".join(n for n, _ in ranking[:5])


def make_eval_cmd(args, cfg, out: Path) -> str:
    specs = ([{"task": args.task, "n": args.n, "seed": cfg["seed"]}] if args.task
             else cfg["eval"]["generate"])
    if not specs:
        raise ValueError("nothing to generate: pass --task or list eval.generate in the config")
    paths = [write_eval_set(make_eval_set(s["task"], s["n"], s["seed"]), out / f"{s['task']}.jsonl") for s in specs]
    return " ".join(str(p) for p in paths)


def evaluate_cmd(args, cfg, out: Path) -> str:
    model = _model(args)
    mode, k = _decode(args)
    sets = [(Path(p).stem, load_eval_set(need(p, "eval set"))) for p in (args.data or cfg["eval"]["datasets"])]
    sets += [(f"{g['task']}-generated-{i}", make_eval_set(g["task"], g["n"], g["seed"]))
             for i, g in enumerate(cfg["eval"]["generate"])]
    if not sets:
        raise ValueError("no eval data: pass --data or set eval.datasets / eval.generate")
    summary = []
    for name, recs in sets:
        res = evaluate(model, recs, mode=mode, beam=k, seed=cfg["seed"], max_len=cfg["eval"]["max_len"])
        res.write(out / name)
        summary.append({"dataset": name, **res.metrics})
    _write_json(out / "metrics.json", summary)
    return " ".join(f"{s['dataset']}:{s['metric_name']}={s['value']:.4f}" for s in summary)


COMMANDS = {
    "build-corpus": build_corpus_cmd,
    "pretrain": pretrain_cmd,
    "finetune": finetune_cmd,
    "soup": soup_cmd,
    "generate": generate_cmd,
    "classify": classify_cmd,
    "make-eval": make_eval_cmd,
    "evaluate": evaluate_cmd,
}


def absolutize(cfg: dict, base_dir: Path | None) -> dict:
    """Input paths in the effective config are made absolute so it revalidates anywhere."""
    cfg = json.loads(json.dumps(cfg))
    cfg["corpus"]["path"] = str(resolve(cfg["corpus"]["path"], base_dir).resolve())
    cfg["corpus"]["eval_sets"] = [str(resolve(p, base_dir).resolve()) for p in cfg["corpus"]["eval_sets"]]
    cfg["eval"]["datasets"] = [str(resolve(p, base_dir).resolve()) for p in cfg["eval"]["datasets"]]
    return cfg

"""Training: batches, one optimizer step, the two-phase pre-training run, fine-tuning and souping."""

from __future__ import annotations

import json
from itertools import zip_longest
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..model import (Checkpoint, ModelConfig, bind, resize_positional_embeddings, save_checkpoint,
                     sequence_loss)
from ..model.params import is_frozen
from ..numerics import Tape, backward
from ..tasks import (HIGH_RES_MIXTURE, PRETRAIN_MIXTURE, Corpus, Example, MixtureSpec, Tokenizer,
                     default_tokenizer, sample_mixture)
from ..tasks.corpus import dumps
from .optim import AdafactorState, adafactor_update
from .schedule import Schedule, lr_at_step


class ResolutionMismatch(ValueError):
    pass


class SoupError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseConfig:
    resolution: int
    frozen_prefixes: tuple[str, ...] = ()
    mixture: MixtureSpec = PRETRAIN_MIXTURE
    steps: int = 100
    batch_size: int = 8
    schedule: Schedule = field(default_factory=Schedule)
    name: str = "phase1"

    def __post_init__(self):
        object.__setattr__(self, "frozen_prefixes", tuple(self.frozen_prefixes))
        if self.resolution < 1 or self.steps < 0 or self.batch_size < 1:
            raise ValueError("resolution and batch_size must be >= 1 and steps >= 0")

    def check(self, cfg: ModelConfig) -> None:
        if self.resolution % cfg.vit.patch_size:
            raise ResolutionMismatch(
                f"{self.name}: resolution {self.resolution} not divisible by patch size {cfg.vit.patch_size}")

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "frozen_prefixes": list(self.frozen_prefixes),
                "mixture": self.mixture.to_dict(), "steps": self.steps, "batch_size": self.batch_size,
                "schedule": self.schedule.to_dict(), "name": self.name}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhaseConfig":
        d = dict(d)
        if "mixture" in d:
            d["mixture"] = MixtureSpec(d["mixture"])
        if "schedule" in d:
            d["schedule"] = Schedule(**d["schedule"])
        return cls(**d)


def phase2_default(phase1: PhaseConfig, resolution: int, steps: int) -> PhaseConfig:
    """High-resolution phase: everything trainable, OCR/captioning/VQA equally weighted."""
    sched = replace(phase1.schedule, warmup_steps=min(phase1.schedule.warmup_steps, max(steps // 10, 1)))
    return PhaseConfig(resolution, (), HIGH_RES_MIXTURE, steps, phase1.batch_size, sched, "phase2")


# -- batches --------------------------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray   # [B, R, R, 3]
    prompts: np.ndarray  # [B, Tp] int, PAD-padded
    targets: np.ndarray  # [B, Tt] int, each row ends in EOS before padding
    tasks: tuple[str, ...] = ()

    @property
    def resolution(self) -> int:
        return int(self.images.shape[1])

    @property
    def n_target_tokens(self) -> int:
        return int((self.targets != 0).sum())


def _pad(rows: Sequence[Sequence[int]]) -> np.ndarray:
    out = np.zeros((len(rows), max((len(r) for r in rows), default=0)), dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def make_batch(examples: Sequence[Example], tokenizer: Tokenizer | None = None, dtype=np.float64,
               image_cache: dict | None = None) -> Batch:
    tok = tokenizer or default_tokenizer()
    images = []
    for ex in examples:
        key = (ex.scene, ex.resolution)
        if image_cache is not None and key in image_cache:
            images.append(image_cache[key])
            continue
        img = ex.image.data
        if image_cache is not None:
            image_cache[key] = img
        images.append(img)
    return Batch(np.stack(images).astype(dtype, copy=False),
                 _pad([tok.tokenize(ex.input_text) for ex in examples]),
                 _pad([tok.encode_target(ex.target_text) for ex in examples]),
                 tuple(ex.task for ex in examples))


class CorpusSampler:
    """Batches drawn task-first from the phase mixture, then a uniform record of that task.

    Tasks absent from the corpus are dropped and the remaining weights renormalized.
    """

    def __init__(self, corpus: Corpus, mixture: MixtureSpec, resolution: int, seed: int,
                 tokenizer: Tokenizer | None = None, dtype=np.float64):
        self.corpus = corpus
        self.by_task = corpus.by_task()
        weights = {t: w for t, w in mixture.weights.items() if w > 0 and self.by_task.get(t)}
        if not weights:
            raise ValueError("corpus holds no records for any task in the mixture")
        self.mixture = MixtureSpec(weights)
        self.resolution = resolution
        self.rng = np.random.default_rng([seed, resolution, 0xBA7C])
        self.tokenizer = tokenizer
        self.dtype = dtype
        self._cache: dict = {}

    def __call__(self, batch_size: int) -> Batch:
        tasks = sample_mixture(self.mixture, self.rng, size=batch_size)
        examples = []
        for t in tasks:
            recs = self.by_task[t]
            examples.append(self.corpus.example(recs[int(self.rng.integers(len(recs)))], self.resolution))
        return make_batch(examples, self.tokenizer, self.dtype, self._cache)


class ExampleSampler:
    """Shuffled passes over a fixed example list."""

    def __init__(self, examples: Sequence[Example], resolution: int, seed: int,
                 tokenizer: Tokenizer | None = None, dtype=np.float64):
        if not examples:
            raise ValueError("dataset is empty")
        self.examples = [ex.with_resolution(resolution) for ex in examples]
        self.rng = np.random.default_rng([seed, 0xF17E])
        self.order: list[int] = []
        self.tokenizer = tokenizer
        self.dtype = dtype
        self._cache: dict = {}

    def __call__(self, batch_size: int) -> Batch:
        picked = []
        while len(picked) < batch_size:
            if not self.order:
                self.order = self.rng.permutation(len(self.examples)).tolist()
            picked.append(self.examples[self.order.pop()])
        return make_batch(picked, self.tokenizer, self.dtype, self._cache)


# -- one step ---------------------------------------------------------------------------------

def loss_and_grads(cfg: ModelConfig, params: Mapping[str, np.ndarray], batch: Batch,
                   frozen_prefixes: Sequence[str] = (), rng=None):
    with Tape() as tape:
        p = bind(params, tape, frozen_prefixes)
        loss, logits = sequence_loss(cfg, p, batch.images, batch.prompts, batch.targets, rng=rng)
    return float(loss.data), backward(tape, loss), logits


def train_step(cfg: ModelConfig, params: Mapping[str, np.ndarray], batch: Batch, phase: PhaseConfig,
               state: AdafactorState, rng=None) -> tuple[dict[str, np.ndarray], AdafactorState, float]:
    """Forward, backward and one Adafactor update at ``lr_at_step(schedule, state.step + 1)``.

    Parameters under ``phase.frozen_prefixes`` are never watched, so they get
    no gradient and are returned as the very same arrays.
    """
    if batch.resolution != phase.resolution:
        raise ResolutionMismatch(f"batch images are {batch.resolution}px, phase expects {phase.resolution}px")
    if cfg.vit.image_resolution != phase.resolution:
        raise ResolutionMismatch(
            f"model is configured for {cfg.vit.image_resolution}px, phase expects {phase.resolution}px")
    loss, grads, _ = loss_and_grads(cfg, params, batch, phase.frozen_prefixes, rng)
    grads = {k: g for k, g in grads.items() if not is_frozen(k, phase.frozen_prefixes)}
    lr = lr_at_step(phase.schedule, state.step + 1)
    new_params, new_state = adafactor_update(state, params, grads, lr)
    return new_params, new_state, loss


# -- logging ------------------------------------------------------------------------------------

class MetricsLog:
    """One JSON record per step: {step, lr, loss, tokens_seen, phase}."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, **record) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(dumps(record) + "\n")


def run_phase(cfg: ModelConfig, params: Mapping[str, np.ndarray], phase: PhaseConfig,
              sample: Callable[[int], Batch], state: AdafactorState | None = None, seed: int = 0,
              log: MetricsLog | None = None, tokens_seen: int = 0, dropout_rng: bool = False):
    """Run ``phase.steps`` updates; returns (params, optimizer state, tokens seen)."""
    phase.check(cfg)
    state = AdafactorState() if state is None else replace(state, step=0)
    rng = np.random.default_rng([seed, 0xD20]) if dropout_rng and cfg.dropout > 0 else None
    params = dict(params)
    for _ in range(phase.steps):
        batch = sample(phase.batch_size)
        params, state, loss = train_step(cfg, params, batch, phase, state, rng)
        tokens_seen += batch.n_target_tokens
        if log is not None:
            log.append(step=state.step, lr=lr_at_step(phase.schedule, state.step), loss=loss,
                       tokens_seen=tokens_seen, phase=phase.name)
    return params, state, tokens_seen


def run_pretraining(cfg: ModelConfig, params: Mapping[str, np.ndarray], phase1: PhaseConfig,
                    phase2: PhaseConfig, corpus: Corpus, seed: int = 0, out_dir: str | Path | None = None,
                    log: MetricsLog | None = None) -> tuple[Checkpoint, Checkpoint]:
    """Frozen-vision phase 1, positional-grid resize, then an all-parameter phase 2.

    Returns one checkpoint per phase (also written to ``out_dir`` when given).
    """
    if phase2.resolution < phase1.resolution:
        raise ValueError("phase 2 resolution must be >= phase 1 resolution")
    dtype = np.dtype(cfg.dtype)
    cfg1 = cfg.with_resolution(phase1.resolution)
    params = dict(params)
    if params["vit.pos"].shape[0] != phase1.resolution // cfg.vit.patch_size:
        params = resize_positional_embeddings(params, phase1.resolution)
    sampler = CorpusSampler(corpus, phase1.mixture, phase1.resolution, seed, dtype=dtype)
    params, state, seen = run_phase(cfg1, params, phase1, sampler, None, seed, log)
    ckpt1 = Checkpoint(cfg1, params, phase1.steps, state.flat(),
                       {"phase": phase1.name, "tokens_seen": seen, "phase_config": phase1.to_dict(), "seed": seed})

    cfg2 = cfg.with_resolution(phase2.resolution)
    params2 = resize_positional_embeddings(params, phase2.resolution)
    sampler2 = CorpusSampler(corpus, phase2.mixture, phase2.resolution, seed + 1, dtype=dtype)
    params2, state2, seen = run_phase(cfg2, params2, phase2, sampler2, state, seed + 1, log, seen)
    ckpt2 = Checkpoint(cfg2, params2, phase1.steps + phase2.steps, state2.flat(),
                       {"phase": phase2.name, "tokens_seen": seen, "phase_config": phase2.to_dict(), "seed": seed})
    if out_dir is not None:
        out = Path(out_dir)
        save_checkpoint(out / f"{phase1.name}.ckpt", ckpt1)
        save_checkpoint(out / f"{phase2.name}.ckpt", ckpt2)
    return ckpt1, ckpt2


# -- fine-tuning --------------------------------------------------------------------------------

@dataclass(frozen=True)
class FinetunePreset:
    peak_lr: float
    steps: int
    dropout: float = 0.1
    batch_size: int = 256
    schedule_kind: str = "linear_to_zero"

    def resolve(self, steps_divisor: int = 1, **overrides) -> "FinetunePreset":
        if steps_divisor < 1:
            raise ValueError("steps divisor must be >= 1")
        p = replace(self, steps=max(1, self.steps // steps_divisor))
        return replace(p, **{k: v for k, v in overrides.items() if v is not None})

    def schedule(self) -> Schedule:
        return Schedule(self.schedule_kind, 0, self.peak_lr, self.steps)


FINETUNE_PRESETS = {
    "coco-like": FinetunePreset(peak_lr=3e-5, steps=20_000),
    "vqa-like": FinetunePreset(peak_lr=1e-4, steps=10_000),
}


def get_preset(name: str) -> FinetunePreset:
    try:
        return FINETUNE_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown fine-tuning preset {name!r}; known presets: {sorted(FINETUNE_PRESETS)}") from None


def finetune(ckpt: Checkpoint, dataset: Sequence[Example], preset: str | FinetunePreset = "coco-like",
             steps_divisor: int = 1, seed: int = 0, log: MetricsLog | None = None,
             **overrides) -> Checkpoint:
    """Train every parameter on ``dataset`` with dropout and linear decay to zero.

    ``overrides`` may replace preset fields (``peak_lr``, ``batch_size``,
    ``steps``, ``dropout``) for desk-scale runs.
    """
    base = get_preset(preset) if isinstance(preset, str) else preset
    p = base.resolve(steps_divisor, **overrides)
    cfg = replace(ckpt.config, dropout=p.dropout)
    res = cfg.vit.image_resolution
    phase = PhaseConfig(res, (), MixtureSpec({"cap": 1}), p.steps, p.batch_size, p.schedule(), "finetune")
    sampler = ExampleSampler(dataset, res, seed, dtype=np.dtype(cfg.dtype))
    params, state, seen = run_phase(cfg, ckpt.params, phase, sampler, AdafactorState(), seed, log,
                                    dropout_rng=True)
    meta = {"phase": "finetune", "preset": asdict(p), "tokens_seen": seen, "seed": seed,
            "parent_step": ckpt.step}
    return Checkpoint(cfg, params, ckpt.step + p.steps, state.flat(), meta)


# -- souping ------------------------------------------------------------------------------------

def soup(param_sets: Sequence[Mapping[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Per-parameter arithmetic mean of two or more parameter sets with identical manifests."""
    if len(param_sets) < 2:
        raise SoupError("souping needs at least two parameter sets")
    ref = sorted((k, np.shape(v)) for k, v in param_sets[0].items())
    for i, other in enumerate(param_sets[1:], start=1):
        man = sorted((k, np.shape(v)) for k, v in other.items())
        for a, b in zip_longest(ref, man):
            if a != b:
                raise SoupError(f"parameter set {i} differs from set 0 at entry {b or a}: expected {a}, got {b}")
    n = len(param_sets)
    return {k: sum(np.asarray(ps[k]) for ps in param_sets) / n for k, _ in ref}


def soup_checkpoints(ckpts: Sequence[Checkpoint]) -> Checkpoint:
    """Souped parameters with the first checkpoint's config; optimizer state starts fresh."""
    configs = {json.dumps(c.config.to_dict(), sort_keys=True) for c in ckpts}
    if len(configs) > 1:
        raise SoupError("checkpoints have different model configs")
    return Checkpoint(ckpts[0].config, soup([c.params for c in ckpts]), max(c.step for c in ckpts), {},
                      {"souped_from": len(ckpts)})

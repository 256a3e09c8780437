"""Task mixture weights and sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .templates import TASKS

# Millions of examples per task in the pre-training mixture.
PRETRAIN_WEIGHTS = {"span": 100, "split_cap": 1000, "ocr": 100, "cap": 100,
                    "vqa": 100, "vqg": 100, "oa": 50, "det": 16}
# High-resolution phase: OCR, captioning and VQA, equally weighted.
HIGH_RES_WEIGHTS = {"ocr": 1, "cap": 1, "vqa": 1}


class MixtureError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    weights: Mapping[str, float] = field(default_factory=lambda: dict(PRETRAIN_WEIGHTS))

    def __post_init__(self):
        w = dict(self.weights)
        for task, v in w.items():
            if task not in TASKS:
                raise MixtureError(f"unknown task {task!r} in mixture")
            if not np.isfinite(v) or v < 0:
                raise MixtureError(f"weight for {task} must be finite and >= 0, got {v}")
        if sum(w.values()) <= 0:
            raise MixtureError("mixture needs at least one positive weight")
        object.__setattr__(self, "weights", w)

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(t for t in TASKS if self.weights.get(t, 0) > 0)

    @property
    def total(self) -> float:
        return float(sum(self.weights.values()))

    def probabilities(self) -> dict[str, float]:
        return {t: self.weights[t] / self.total for t in self.tasks}

    def to_dict(self) -> dict:
        return {t: self.weights[t] for t in TASKS if t in self.weights}


PRETRAIN_MIXTURE = MixtureSpec(PRETRAIN_WEIGHTS)
HIGH_RES_MIXTURE = MixtureSpec(HIGH_RES_WEIGHTS)


def sample_mixture(mix: MixtureSpec, rng, size: int | None = None):
    """One task name, or an array of ``size`` task names, drawn with P(task) = weight / total."""
    tasks = mix.tasks
    p = np.array([mix.weights[t] for t in tasks], dtype=np.float64)
    idx = rng.choice(len(tasks), size=size, p=p / p.sum())
    if size is None:
        return tasks[int(idx)]
    return np.array(tasks, dtype=object)[idx]

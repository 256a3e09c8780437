"""Learning-rate schedules: linear warmup, then inverse square root or linear decay to zero."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

KINDS = ("warmup_inv_sqrt", "linear_to_zero")


@dataclass(frozen=True)
class Schedule:
    kind: str = "warmup_inv_sqrt"
    warmup_steps: int = 1000
    peak_lr: float = 1e-2
    total_steps: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if self.warmup_steps < 0 or self.peak_lr < 0:
            raise ValueError("warmup_steps and peak_lr must be >= 0")
        if self.kind == "linear_to_zero" and (self.total_steps is None or self.total_steps <= self.warmup_steps):
            raise ValueError("linear_to_zero needs total_steps > warmup_steps")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at_step(s: Schedule, step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    w = s.warmup_steps
    if step <= w:
        return s.peak_lr * step / w if w else s.peak_lr
    if s.kind == "warmup_inv_sqrt":
        return s.peak_lr * math.sqrt(w / step) if w else s.peak_lr / math.sqrt(step)
    if step >= s.total_steps:
        return 0.0
    # Linear from the peak at the end of warmup down to zero at total_steps;
    # with no warmup this is peak * (1 - step / total).
    return s.peak_lr * (s.total_steps - step) / (s.total_steps - w)

"""Adafactor without momentum, with a constant second-moment decay.

Matrices (and stacks of matrices) keep row and column statistics of g^2
over their last two axes; vectors and scalars keep a full accumulator. The
per-step update is g / sqrt(v_hat + eps), scaled down whenever its RMS
exceeds the clipping threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

DECAY = 0.8
EPS = 1e-30
CLIP_THRESHOLD = 1.0


@dataclass
class AdafactorState:
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0
    decay: float = DECAY
    eps: float = EPS
    clip_threshold: float = CLIP_THRESHOLD

    def flat(self) -> dict[str, np.ndarray]:
        """Arrays keyed ``<param>/<slot>`` plus the step counter, for checkpoints."""
        out = {f"{name}/{k}": v for name, s in self.slots.items() for k, v in s.items()}
        out["__step__"] = np.array(self.step, dtype=np.int64)
        return out

    @classmethod
    def from_flat(cls, flat: Mapping[str, np.ndarray]) -> "AdafactorState":
        state = cls(step=int(flat.get("__step__", 0)))
        for key, v in flat.items():
            if key == "__step__":
                continue
            name, slot = key.rsplit("/", 1)
            state.slots.setdefault(name, {})[slot] = np.array(v)
        return state


def factored(shape: tuple[int, ...]) -> bool:
    return len(shape) >= 2


def init_slots(shape: tuple[int, ...], dtype=np.float64) -> dict[str, np.ndarray]:
    if factored(shape):
        return {"r": np.zeros(shape[:-1], dtype), "c": np.zeros(shape[:-2] + shape[-1:], dtype)}
    return {"v": np.zeros(shape, dtype)}


def adafactor_init(params: Mapping[str, np.ndarray], trainable=None) -> AdafactorState:
    names = params if trainable is None else trainable
    return AdafactorState({n: init_slots(np.shape(params[n]), np.asarray(params[n]).dtype) for n in names})


def _second_moment(slots, g2, decay):
    if "v" in slots:
        v = decay * slots["v"] + (1 - decay) * g2
        return {"v": v}, v
    r = decay * slots["r"] + (1 - decay) * g2.mean(axis=-1)
    c = decay * slots["c"] + (1 - decay) * g2.mean(axis=-2)
    row_mean = r.mean(axis=-1, keepdims=True)
    scaled = np.divide(r, row_mean, out=np.zeros_like(r), where=row_mean > 0)
    return {"r": r, "c": c}, scaled[..., :, None] * c[..., None, :]


def adafactor_update(state: AdafactorState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                     lr: float) -> tuple[dict[str, np.ndarray], AdafactorState]:
    """Apply one step to every parameter in ``grads``; all others pass through unchanged.

    Returns new dicts; neither the input params nor the input state are mutated.
    """
    new_params = dict(params)
    new_slots = dict(state.slots)
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g, dtype=np.asarray(p).dtype)
        if g.shape != np.shape(p):
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {np.shape(p)}")
        slots = state.slots.get(name)
        if slots is None or any(s.shape != e.shape for s, e in zip(slots.values(), init_slots(g.shape).values())):
            slots = init_slots(g.shape, g.dtype)
        new_slots[name], v_hat = _second_moment(slots, g * g, state.decay)
        u = g / np.sqrt(v_hat + state.eps)
        rms = np.sqrt(np.mean(u * u)) if u.size else 0.0
        u = u / max(1.0, rms / state.clip_threshold)
        new_params[name] = p - lr * u
    return new_params, AdafactorState(new_slots, state.step + 1, state.decay, state.eps, state.clip_threshold)

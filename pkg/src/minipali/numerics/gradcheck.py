"""Central finite differences, kept independent of the tape machinery."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np


class NondeterministicFunctionError(RuntimeError):
    pass


def finite_difference_grad(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-6,
    indices: Mapping[str, Sequence[int]] | None = None,
) -> dict[str, np.ndarray]:
    """Estimate df/dp with ``(f(p+eps) - f(p-eps)) / (2 eps)`` one coordinate at a time.

    ``f`` receives a dict of arrays and must return a float. With ``indices``
    only the listed flat coordinates are perturbed and each entry of the
    result is a 1-D array aligned with ``indices[name]``; otherwise every
    coordinate is perturbed and results have the parameter's shape.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    work = {k: np.array(v, dtype=np.float64 if np.asarray(v).dtype.kind != "f" else np.asarray(v).dtype, copy=True)
            for k, v in params.items()}
    base1 = float(f(work))
    base2 = float(f(work))
    if base1 != base2:
        raise NondeterministicFunctionError(
            f"f returned {base1!r} then {base2!r} for identical inputs")

    names = list(indices) if indices is not None else list(work)
    out: dict[str, np.ndarray] = {}
    for name in names:
        arr = work[name]
        flat = arr.reshape(-1)
        coords = range(flat.size) if indices is None else indices[name]
        vals = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(work))
            flat[i] = orig - eps
            fm = float(f(work))
            flat[i] = orig
            vals[j] = (fp - fm) / (2.0 * eps)
        out[name] = vals.reshape(arr.shape) if indices is None else vals
    return out


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)

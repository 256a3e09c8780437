"""Align-corners bilinear resampling of [H, W, D] grids."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _lerp(a, b, t):
    # exact at t == 0, t == 1 and when a == b
    return np.where(t == 1.0, b, a + t * (b - a))


def _sample_axis(n_in: int, n_out: int):
    pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    return lo, pos - lo


def bilinear_resize_grid(grid, new_h: int, new_w: int):
    """Resize a [H, W, D] grid so output corners coincide with input corners.

    Each channel is resized independently. Returns the same kind of object
    it was given (Tensor or ndarray).
    """
    is_tensor = isinstance(grid, Tensor)
    g = grid.data if is_tensor else np.asarray(grid)
    if g.ndim != 3:
        raise ValueError(f"expected a [H, W, D] grid, got shape {g.shape}")
    H, W, _ = g.shape
    if min(H, W) < 2 or min(new_h, new_w) < 2:
        raise ValueError(f"grid extents must be >= 2, got ({H}, {W}) -> ({new_h}, {new_w})")
    if (H, W) == (new_h, new_w):
        out = g.copy()
    else:
        y0, fy = _sample_axis(H, new_h)
        x0, fx = _sample_axis(W, new_w)
        fy = fy[:, None, None]
        fx = fx[None, :, None]
        top = _lerp(g[y0][:, x0], g[y0][:, x0 + 1], fx)
        bottom = _lerp(g[y0 + 1][:, x0], g[y0 + 1][:, x0 + 1], fx)
        out = _lerp(top, bottom, fy).astype(g.dtype, copy=False)
    return Tensor(out, name=grid.name) if is_tensor else out

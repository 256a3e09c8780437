"""Transformer building blocks shared by the image and text stacks."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..numerics import Tensor, ops


def layer_norm(p: Mapping[str, Tensor], prefix: str, x: Tensor, eps: float) -> Tensor:
    return ops.layer_norm(x, p[f"{prefix}.scale"], p[f"{prefix}.bias"], eps=eps)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, T, D = x.shape
    return ops.transpose(ops.reshape(x, (B, T, heads, D // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (B, T, H * dh))


def attention(p: Mapping[str, Tensor], prefix: str, xq: Tensor, xkv: Tensor, heads: int,
              mask: np.ndarray | None = None, bias: Tensor | None = None, biased: bool = False,
              weights_out: list | None = None) -> Tensor:
    """Multi-head attention; ``mask`` broadcasts to [B, heads, Tq, Tk]."""
    def proj(x, w):
        b = p[f"{prefix}.b{w[-1]}"] if biased else None
        return ops.linear(x, p[f"{prefix}.{w}"], b)

    q = _split_heads(proj(xq, "wq"), heads)
    k = _split_heads(proj(xkv, "wk"), heads)
    v = _split_heads(proj(xkv, "wv"), heads)
    out, w = ops.scaled_dot_product_attention(q, k, v, mask=mask, bias=bias, return_weights=True)
    if weights_out is not None:
        weights_out.append(w.data)
    return proj(_merge_heads(out), "wo")


def mlp(p: Mapping[str, Tensor], prefix: str, x: Tensor, biased: bool = False) -> Tensor:
    h = ops.gelu(ops.linear(x, p[f"{prefix}.w1"], p.get(f"{prefix}.b1") if biased else None))
    return ops.linear(h, p[f"{prefix}.w2"], p.get(f"{prefix}.b2") if biased else None)


def relative_position_bucket(relative_position: np.ndarray, bidirectional: bool,
                             num_buckets: int = 32, max_distance: int = 128) -> np.ndarray:
    """Bucket ``key_pos - query_pos`` offsets: exact for short ranges, log-spaced beyond."""
    n = -np.asarray(relative_position, dtype=np.int64)
    ret = np.zeros_like(n)
    if bidirectional:
        num_buckets //= 2
        ret += (n < 0).astype(np.int64) * num_buckets
        n = np.abs(n)
    else:
        n = np.maximum(n, 0)
    max_exact = num_buckets // 2
    is_small = n < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (
            np.log(np.maximum(n, 1) / max_exact) / math.log(max_distance / max_exact)
            * (num_buckets - max_exact)).astype(np.int64)
    large = np.minimum(large, num_buckets - 1)
    return ret + np.where(is_small, n, large)


def relative_bias(table: Tensor, q_len: int, k_len: int, bidirectional: bool,
                  num_buckets: int, max_distance: int) -> Tensor:
    """Learned per-bucket bias, shaped [heads, q_len, k_len]."""
    rel = np.arange(k_len)[None, :] - np.arange(q_len)[:, None]
    buckets = relative_position_bucket(rel, bidirectional, num_buckets, max_distance)
    return ops.transpose(ops.embedding(table, buckets), (2, 0, 1))


def drop(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    return ops.dropout(x, rate, rng) if rng is not None else x

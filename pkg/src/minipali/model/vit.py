"""Vision Transformer that emits every patch feature (no class token, no pooling)."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..numerics import Tensor, bilinear_resize_grid, ops
from .config import ViTConfig
from .layers import attention, drop, layer_norm, mlp


class PositionalGridMismatch(ValueError):
    pass


def patchify(image, patch_size: int) -> np.ndarray:
    """Split [R, R, 3] (or [B, R, R, 3]) into row-major flattened patches [.., N, P*P*3]."""
    img = np.asarray(image.data if isinstance(image, Tensor) else image)
    single = img.ndim == 3
    if single:
        img = img[None]
    B, H, W, C = img.shape
    if H % patch_size or W % patch_size:
        raise ValueError(f"image {H}x{W} not divisible by patch size {patch_size}")
    gh, gw = H // patch_size, W // patch_size
    x = img.reshape(B, gh, patch_size, gw, patch_size, C).transpose(0, 1, 3, 2, 4, 5)
    x = x.reshape(B, gh * gw, patch_size * patch_size * C)
    return x[0] if single else x


def patch_size_of(params: Mapping) -> int:
    rows = params["vit.patch.w"].shape[0]
    p = int(round((rows / 3) ** 0.5))
    return p


def vit_forward(cfg: ViTConfig, p: Mapping[str, Tensor], images, eps: float = 1e-6,
                dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Patch features [B, N, width] for images [B, R, R, 3] (or [N, width] for one image)."""
    imgs = np.asarray(images.data if isinstance(images, Tensor) else images)
    single = imgs.ndim == 3
    if single:
        imgs = imgs[None]
    pos = p["vit.pos"]
    R = imgs.shape[1]
    grid = R // cfg.patch_size
    if imgs.shape[1] != imgs.shape[2] or tuple(pos.shape[:2]) != (grid, grid):
        raise PositionalGridMismatch(
            f"image resolution {imgs.shape[1]}x{imgs.shape[2]} needs a {grid}x{grid} positional grid but "
            f"the model has {pos.shape[0]}x{pos.shape[1]}; call resize_positional_embeddings first")
    patches = Tensor._wrap(patchify(imgs.astype(pos.dtype, copy=False), cfg.patch_size))
    x = ops.linear(patches, p["vit.patch.w"], p["vit.patch.b"])
    x = ops.add(x, ops.reshape(pos, (grid * grid, cfg.width)))
    for i in range(cfg.depth):
        b = f"vit.block{i}"
        y = layer_norm(p, f"{b}.ln1", x, eps)
        h = attention(p, f"{b}.attn", y, y, cfg.heads, biased=True)
        x = ops.add(x, drop(h, dropout, rng))
        h = mlp(p, f"{b}.mlp", layer_norm(p, f"{b}.ln2", x, eps), biased=True)
        x = ops.add(x, drop(h, dropout, rng))
    x = layer_norm(p, "vit.ln_final", x, eps)
    return x[0] if single else x


def resize_positional_embeddings(params: Mapping[str, np.ndarray], new_resolution: int) -> dict:
    """Upsample the 2D positional grid so the model accepts ``new_resolution`` images.

    The patch size is unchanged, so the grid grows to new_resolution / patch_size
    per side. Every other parameter is passed through untouched.
    """
    ps = patch_size_of(params)
    if new_resolution % ps:
        raise ValueError(f"resolution {new_resolution} not divisible by patch size {ps}")
    g = new_resolution // ps
    out = dict(params)
    pos = params["vit.pos"]
    if pos.shape[:2] != (g, g):
        out["vit.pos"] = bilinear_resize_grid(np.asarray(pos), g, g)
    return out

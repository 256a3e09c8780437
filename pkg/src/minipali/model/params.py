"""Parameter naming, shapes and initialisation.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by dotted paths
such as ``vit.block1.attn.wq`` or ``encdec.dec.block0.cross.wk``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..numerics import Tape, Tensor
from .config import ModelConfig, ViTConfig

ModelParams = dict  # name -> np.ndarray


@dataclass(frozen=True)
class Parameter:
    name: str
    value: np.ndarray
    trainable: bool


def vit_shapes(vit: ViTConfig, prefix: str = "vit") -> dict[str, tuple[int, ...]]:
    w, m, p = vit.width, vit.mlp_dim, vit.patch_size
    s = {
        f"{prefix}.patch.w": (p * p * 3, w),
        f"{prefix}.patch.b": (w,),
        f"{prefix}.pos": (vit.grid, vit.grid, w),
    }
    for i in range(vit.depth):
        b = f"{prefix}.block{i}"
        s.update({
            f"{b}.ln1.scale": (w,), f"{b}.ln1.bias": (w,),
            f"{b}.attn.wq": (w, w), f"{b}.attn.bq": (w,),
            f"{b}.attn.wk": (w, w), f"{b}.attn.bk": (w,),
            f"{b}.attn.wv": (w, w), f"{b}.attn.bv": (w,),
            f"{b}.attn.wo": (w, w), f"{b}.attn.bo": (w,),
            f"{b}.ln2.scale": (w,), f"{b}.ln2.bias": (w,),
            f"{b}.mlp.w1": (w, m), f"{b}.mlp.b1": (m,),
            f"{b}.mlp.w2": (m, w), f"{b}.mlp.b2": (w,),
        })
    s[f"{prefix}.ln_final.scale"] = (w,)
    s[f"{prefix}.ln_final.bias"] = (w,)
    return s


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.{k}": (d, d) for k in ("wq", "wk", "wv", "wo")}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    ed = cfg.encdec
    d, f = ed.d_model, ed.ffn_dim
    s = vit_shapes(cfg.vit)
    s["projector.w"] = (cfg.vit.width, d)
    s["projector.b"] = (d,)
    s["encdec.embed"] = (ed.vocab_size, d)
    s["encdec.enc.relbias"] = (ed.rel_buckets, ed.heads)
    s["encdec.dec.relbias"] = (ed.rel_buckets, ed.heads)
    for i in range(ed.enc_layers):
        b = f"encdec.enc.block{i}"
        s.update({f"{b}.ln1.scale": (d,), f"{b}.ln1.bias": (d,)})
        s.update(_attn_shapes(f"{b}.attn", d))
        s.update({f"{b}.ln2.scale": (d,), f"{b}.ln2.bias": (d,),
                  f"{b}.mlp.w1": (d, f), f"{b}.mlp.w2": (f, d)})
    s.update({"encdec.enc.ln_final.scale": (d,), "encdec.enc.ln_final.bias": (d,)})
    for i in range(ed.dec_layers):
        b = f"encdec.dec.block{i}"
        s.update({f"{b}.ln1.scale": (d,), f"{b}.ln1.bias": (d,)})
        s.update(_attn_shapes(f"{b}.self", d))
        s.update({f"{b}.ln2.scale": (d,), f"{b}.ln2.bias": (d,)})
        s.update(_attn_shapes(f"{b}.cross", d))
        s.update({f"{b}.ln3.scale": (d,), f"{b}.ln3.bias": (d,),
                  f"{b}.mlp.w1": (d, f), f"{b}.mlp.w2": (f, d)})
    s.update({"encdec.dec.ln_final.scale": (d,), "encdec.dec.ln_final.bias": (d,)})
    if not ed.tie_embeddings:
        s["encdec.out"] = (d, ed.vocab_size)
    return s


def count_params(shapes: Mapping[str, tuple[int, ...]]) -> int:
    return int(sum(np.prod(s) for s in shapes.values()))


def _init_one(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "scale":
        return np.ones(shape)
    if leaf in ("bias", "relbias") or (leaf.startswith("b") and len(shape) == 1):
        return np.zeros(shape)
    if leaf == "pos":
        return rng.normal(scale=0.5, size=shape)
    if leaf == "embed":
        return rng.normal(scale=1.0, size=shape)
    return rng.normal(scale=shape[0] ** -0.5, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh parameters; each tensor draws from its own name-keyed stream."""
    dtype = np.dtype(cfg.dtype)
    out = {}
    for name, shape in param_shapes(cfg).items():
        key = np.frombuffer(name.encode(), dtype=np.uint8).astype(np.uint32)
        rng = np.random.default_rng([seed, *key.tolist()])
        out[name] = _init_one(name, shape, rng).astype(dtype)
    return out


def is_frozen(name: str, frozen_prefixes: Iterable[str]) -> bool:
    return any(name.startswith(p) for p in frozen_prefixes)


def parameters(params: Mapping[str, np.ndarray], frozen_prefixes: Iterable[str] = ()) -> list[Parameter]:
    frozen_prefixes = tuple(frozen_prefixes)
    return [Parameter(k, v, not is_frozen(k, frozen_prefixes)) for k, v in params.items()]


def bind(params: Mapping[str, np.ndarray], tape: Tape | None = None,
         frozen_prefixes: Iterable[str] = ()) -> dict[str, Tensor]:
    """Wrap arrays as tensors; trainable ones become watched leaves on ``tape``."""
    frozen_prefixes = tuple(frozen_prefixes)
    out = {}
    for name, value in params.items():
        if tape is not None and not is_frozen(name, frozen_prefixes):
            out[name] = tape.watch(name, Tensor._wrap(value))
        else:
            t = Tensor._wrap(value)
            t.name = name
            out[name] = t
    return out

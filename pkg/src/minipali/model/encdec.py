"""Text encoder-decoder fed with projected visual tokens.

The encoder sees ``[visual tokens ; embedded prompt]`` as one sequence with
full bidirectional attention (pad positions masked as keys). The decoder
attends causally to its own prefix and to all encoder states through
cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..numerics import Tensor, ops
from .config import EOS_ID, PAD_ID, ModelConfig
from .layers import attention, drop, layer_norm, mlp, relative_bias
from .vit import vit_forward


class TextTooLong(ValueError):
    pass


class MissingEOS(ValueError):
    pass


@dataclass(frozen=True)
class VisualTokens:
    tokens: Tensor  # [N, d_model] or [B, N, d_model], after projection
    source_resolution: int


def as_batch(tokens) -> np.ndarray:
    """Int array [B, T] from one sequence, a list of sequences, or an array (right-padded with PAD)."""
    if isinstance(tokens, np.ndarray) and tokens.ndim == 2:
        return tokens.astype(np.int64, copy=False)
    seqs = list(tokens)
    if not seqs or np.isscalar(seqs[0]) or isinstance(seqs[0], (int, np.integer)):
        seqs = [seqs]
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def visual_tokens(cfg: ModelConfig, p: Mapping[str, Tensor], images, rng=None) -> VisualTokens:
    feats = vit_forward(cfg.vit, p, images, eps=cfg.ln_eps, dropout=cfg.dropout, rng=rng)
    res = np.asarray(images.data if isinstance(images, Tensor) else images).shape[-2]
    return VisualTokens(ops.linear(feats, p["projector.w"], p["projector.b"]), res)


def _check_len(cfg: ModelConfig, n: int, what: str) -> None:
    if n > cfg.encdec.max_text_len:
        raise TextTooLong(f"{what} has {n} tokens, max_text_len is {cfg.encdec.max_text_len}")


def encode(cfg: ModelConfig, p: Mapping[str, Tensor], text: np.ndarray, visual: Tensor,
           rng=None, attn_weights: list | None = None) -> tuple[Tensor, np.ndarray]:
    """Encoder states [B, N+T, D] and the key-validity mask [B, N+T]."""
    ed = cfg.encdec
    text = as_batch(text) if not (isinstance(text, np.ndarray) and text.ndim == 2) else text
    _check_len(cfg, text.shape[1], "prompt")
    B, N = visual.shape[0], visual.shape[1]
    if text.shape[0] != B:
        raise ValueError(f"batch mismatch: {text.shape[0]} prompts for {B} images")
    parts = [visual]
    if text.shape[1]:
        parts.append(ops.embedding(p["encdec.embed"], text))
    x = ops.concat(parts, axis=1) if len(parts) > 1 else visual
    valid = np.concatenate([np.ones((B, N), bool), text != PAD_ID], axis=1)
    L = x.shape[1]
    bias = relative_bias(p["encdec.enc.relbias"], L, L, True, ed.rel_buckets, ed.rel_max_distance)
    mask = valid[:, None, None, :]
    for i in range(ed.enc_layers):
        b = f"encdec.enc.block{i}"
        y = layer_norm(p, f"{b}.ln1", x, cfg.ln_eps)
        h = attention(p, f"{b}.attn", y, y, ed.heads, mask=mask, bias=bias, weights_out=attn_weights)
        x = ops.add(x, drop(h, cfg.dropout, rng))
        h = mlp(p, f"{b}.mlp", layer_norm(p, f"{b}.ln2", x, cfg.ln_eps))
        x = ops.add(x, drop(h, cfg.dropout, rng))
    return layer_norm(p, "encdec.enc.ln_final", x, cfg.ln_eps), valid


def encode_multimodal(cfg: ModelConfig, p: Mapping[str, Tensor], text_tokens, visual: VisualTokens,
                      attn_weights: list | None = None) -> Tensor:
    """Encoder output [N+T, d_model] for a single example."""
    toks = np.asarray(list(text_tokens), dtype=np.int64)[None, :]
    vis = visual.tokens if visual.tokens.ndim == 3 else ops.reshape(visual.tokens, (1,) + visual.tokens.shape)
    states, _ = encode(cfg, p, toks.reshape(1, -1), vis, attn_weights=attn_weights)
    return states[0]


def shift_right(targets: np.ndarray) -> np.ndarray:
    out = np.full_like(targets, PAD_ID)
    out[:, 1:] = targets[:, :-1]
    return out


def decoder_logits(cfg: ModelConfig, p: Mapping[str, Tensor], states: Tensor, enc_valid: np.ndarray,
                   dec_inputs: np.ndarray, rng=None) -> Tensor:
    """Logits [B, T, V] given decoder input ids [B, T] (already shifted)."""
    ed = cfg.encdec
    T = dec_inputs.shape[1]
    x = ops.embedding(p["encdec.embed"], dec_inputs)
    bias = relative_bias(p["encdec.dec.relbias"], T, T, False, ed.rel_buckets, ed.rel_max_distance)
    causal = np.tril(np.ones((T, T), bool))[None, None]
    cross_mask = enc_valid[:, None, None, :]
    for i in range(ed.dec_layers):
        b = f"encdec.dec.block{i}"
        y = layer_norm(p, f"{b}.ln1", x, cfg.ln_eps)
        x = ops.add(x, drop(attention(p, f"{b}.self", y, y, ed.heads, mask=causal, bias=bias), cfg.dropout, rng))
        y = layer_norm(p, f"{b}.ln2", x, cfg.ln_eps)
        x = ops.add(x, drop(attention(p, f"{b}.cross", y, states, ed.heads, mask=cross_mask), cfg.dropout, rng))
        x = ops.add(x, drop(mlp(p, f"{b}.mlp", layer_norm(p, f"{b}.ln3", x, cfg.ln_eps)), cfg.dropout, rng))
    x = layer_norm(p, "encdec.dec.ln_final", x, cfg.ln_eps)
    if ed.tie_embeddings:
        return ops.matmul(x, ops.transpose(p["encdec.embed"], (1, 0)))
    return ops.linear(x, p["encdec.out"])


def check_targets(cfg: ModelConfig, targets: np.ndarray) -> None:
    _check_len(cfg, targets.shape[1], "target")
    for row in targets:
        nz = np.flatnonzero(row != PAD_ID)
        if nz.size == 0 or row[nz[-1]] != EOS_ID:
            raise MissingEOS(f"target {row.tolist()} does not end with EOS ({EOS_ID})")


def decode_teacher_forced(cfg: ModelConfig, p: Mapping[str, Tensor], encoder_states: Tensor,
                          target_tokens, enc_valid: np.ndarray | None = None, rng=None) -> Tensor:
    """Teacher-forced logits: [T, V] for one sequence or [B, T, V] for a batch."""
    single = encoder_states.ndim == 2
    states = ops.reshape(encoder_states, (1,) + encoder_states.shape) if single else encoder_states
    targets = as_batch(target_tokens)
    check_targets(cfg, targets)
    if enc_valid is None:
        enc_valid = np.ones(states.shape[:2], bool)
    logits = decoder_logits(cfg, p, states, enc_valid, shift_right(targets), rng=rng)
    return logits[0] if single else logits


def labels_from_targets(targets: np.ndarray, ignore_index: int = -1) -> np.ndarray:
    return np.where(targets == PAD_ID, ignore_index, targets)


def forward_logits(cfg: ModelConfig, p: Mapping[str, Tensor], images, prompts, targets, rng=None) -> Tensor:
    vis = visual_tokens(cfg, p, images, rng=rng)
    tokens = vis.tokens if vis.tokens.ndim == 3 else ops.reshape(vis.tokens, (1,) + vis.tokens.shape)
    states, valid = encode(cfg, p, as_batch(prompts), tokens, rng=rng)
    return decode_teacher_forced(cfg, p, states, targets, enc_valid=valid, rng=rng)


def sequence_loss(cfg: ModelConfig, p: Mapping[str, Tensor], images, prompts, targets,
                  rng=None) -> tuple[Tensor, Tensor]:
    """Mean token cross-entropy over non-pad target positions, plus the logits."""
    targets = as_batch(targets)
    logits = forward_logits(cfg, p, images, prompts, targets, rng=rng)
    return ops.cross_entropy(logits, labels_from_targets(targets)), logits


def token_accuracy(logits, targets) -> float:
    targets = as_batch(targets)
    pred = np.argmax(np.asarray(logits.data if isinstance(logits, Tensor) else logits), axis=-1)
    keep = targets != PAD_ID
    return float((pred[keep] == targets[keep]).mean())

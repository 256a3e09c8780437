"""Open-vocabulary decoding and teacher-forced candidate scoring.

There is no key/value cache: every step re-runs the decoder on the full
prefix. At desk scale that is cheap and keeps one code path for training,
scoring and generation.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from ..numerics import Tensor, ops
from .config import EOS_ID, PAD_ID, ModelConfig
from .encdec import TextTooLong, as_batch, decoder_logits, encode, visual_tokens

LogitsTransform = Callable[[np.ndarray], np.ndarray]


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def encode_inputs(cfg: ModelConfig, p: Mapping[str, Tensor], images, prompts):
    imgs = np.asarray(images)
    if imgs.ndim == 3:
        imgs = imgs[None]
    prompts = as_batch(prompts)
    if prompts.shape[0] == 1 and imgs.shape[0] > 1:
        prompts = np.repeat(prompts, imgs.shape[0], axis=0)
    vis = visual_tokens(cfg, p, imgs)
    return encode(cfg, p, prompts, vis.tokens)


def _tile(states: Tensor, valid: np.ndarray, rows: np.ndarray):
    return Tensor._wrap(states.data[rows]), valid[rows]


def next_token_logprobs(cfg, p, states: Tensor, valid: np.ndarray, prefixes: np.ndarray,
                        transform: LogitsTransform | None = None) -> np.ndarray:
    """log p(next | prefix) for each row: [B, V]."""
    B = prefixes.shape[0]
    dec_in = np.concatenate([np.full((B, 1), PAD_ID, dtype=np.int64), prefixes], axis=1)
    logits = decoder_logits(cfg, p, states, valid, dec_in).data[:, -1, :]
    if transform is not None:
        logits = transform(logits)
    return _log_softmax(logits)


def greedy_decode(cfg, p, states: Tensor, valid: np.ndarray, max_len: int,
                  transform: LogitsTransform | None = None) -> list[list[int]]:
    """Argmax decoding for a batch; ties go to the lowest token id."""
    B = states.shape[0]
    seqs = np.zeros((B, 0), dtype=np.int64)
    done = np.zeros(B, bool)
    lengths = np.full(B, max_len)
    for t in range(max_len):
        lp = next_token_logprobs(cfg, p, states, valid, seqs, transform)
        tok = np.argmax(lp, axis=-1)
        tok = np.where(done, PAD_ID, tok)
        seqs = np.concatenate([seqs, tok[:, None]], axis=1)
        newly = (~done) & (tok == EOS_ID)
        lengths[newly] = t + 1
        done |= newly
        if done.all():
            break
    return [seqs[i, :lengths[i]].tolist() for i in range(B)]


def beam_decode(cfg, p, states: Tensor, valid: np.ndarray, k: int, max_len: int,
                transform: LogitsTransform | None = None,
                length_normalize: bool = False) -> tuple[list[int], float]:
    """Beam search for a single example; returns the best finished hypothesis and its log-prob.

    Every step keeps the top ``k`` continuations over all live beams; those
    ending in EOS leave the beam. Hypotheses still alive at ``max_len`` count
    as finished.
    """
    if k < 1:
        raise ValueError("beam size must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []

    def rank(item):
        seq, score = item
        return score / max(len(seq), 1) if length_normalize else score

    for t in range(max_len):
        prefixes = np.array([s for s, _ in live], dtype=np.int64).reshape(len(live), t)
        st, va = _tile(states, valid, np.zeros(len(live), dtype=np.int64))
        lp = next_token_logprobs(cfg, p, st, va, prefixes, transform)
        V = lp.shape[1]
        scores = np.array([sc for _, sc in live])[:, None] + lp
        order = np.argsort(-scores.ravel(), kind="stable")[:k]
        nxt = []
        for idx in order:
            i, v = divmod(int(idx), V)
            item = (live[i][0] + (v,), float(scores[i, v]))
            (finished if v == EOS_ID else nxt).append(item)
        live = nxt
        if not live:
            break
        if finished and not length_normalize and max(s for _, s in finished) >= max(s for _, s in live):
            live = []
            break
    finished.extend(live)
    best = max(finished, key=rank)
    return list(best[0]), best[1]


def generate(cfg: ModelConfig, p: Mapping[str, Tensor], image, prompt_tokens, mode: str = "greedy",
             k: int = 1, max_len: int | None = None, transform: LogitsTransform | None = None) -> list[int]:
    """Decode one image + prompt. ``mode`` is "greedy" or "beam" (size ``k``)."""
    max_len = cfg.encdec.max_text_len if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    states, valid = encode_inputs(cfg, p, image, [list(prompt_tokens)])
    if mode == "greedy":
        return greedy_decode(cfg, p, states, valid, max_len, transform)[0]
    if mode == "beam":
        return beam_decode(cfg, p, states, valid, k, max_len, transform)[0]
    raise ValueError(f"unknown decode mode {mode!r}")


def score_candidates(cfg: ModelConfig, p: Mapping[str, Tensor], image, prompt_tokens,
                     candidates: Sequence[Sequence[int]], require_eos: bool = True,
                     transform: LogitsTransform | None = None) -> np.ndarray:
    """Sum of per-token log-probabilities of each candidate under teacher forcing."""
    cands = [list(c) for c in candidates]
    for c in cands:
        if not c:
            raise ValueError("candidate must be non-empty")
        if require_eos and c[-1] != EOS_ID:
            raise ValueError(f"candidate {c} does not end with EOS")
        if len(c) > cfg.encdec.max_text_len:
            raise TextTooLong(f"candidate has {len(c)} tokens, max_text_len is {cfg.encdec.max_text_len}")
    states, valid = encode_inputs(cfg, p, image, [list(prompt_tokens)])
    n = len(cands)
    st, va = _tile(states, valid, np.zeros(n, dtype=np.int64))
    T = max(len(c) for c in cands)
    tgt = np.full((n, T), PAD_ID, dtype=np.int64)
    for i, c in enumerate(cands):
        tgt[i, :len(c)] = c
    dec_in = np.concatenate([np.full((n, 1), PAD_ID, dtype=np.int64), tgt[:, :-1]], axis=1)
    logits = decoder_logits(cfg, p, st, va, dec_in).data
    if transform is not None:
        logits = transform(logits)
    lp = _log_softmax(logits)
    gathered = np.take_along_axis(lp, tgt[:, :, None], axis=-1)[:, :, 0]
    lengths = np.array([len(c) for c in cands])
    keep = np.arange(T)[None, :] < lengths[:, None]
    return (gathered * keep).sum(axis=1)


def score_candidate(cfg: ModelConfig, p: Mapping[str, Tensor], image, prompt_tokens, candidate_tokens,
                    require_eos: bool = True, transform: LogitsTransform | None = None) -> float:
    """log p(candidate | image, prompt); always <= 0."""
    return float(score_candidates(cfg, p, image, prompt_tokens, [candidate_tokens],
                                  require_eos=require_eos, transform=transform)[0])

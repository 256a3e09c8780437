"""Exact-match VQA accuracy and CIDEr-D."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def normalize_answer(s: str) -> str:
    """Lowercase, trim, collapse internal whitespace, drop one terminal period."""
    s = " ".join(s.lower().split())
    if s.endswith("."):
        s = s[:-1].rstrip()
    return s


def exact_match_accuracy(preds: Sequence[str], golds: Sequence) -> float:
    """Fraction of predictions whose normalized form is among the normalized gold answers.

    ``golds`` holds either answer lists or records with a ``gold`` attribute.
    """
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} records")
    if not preds:
        raise ValueError("no predictions to score")
    hits = 0
    for p, g in zip(preds, golds):
        answers = getattr(g, "gold", g)
        if isinstance(answers, str):
            answers = [answers]
        hits += normalize_answer(p) in {normalize_answer(a) for a in answers}
    return hits / len(preds)


@dataclass(frozen=True)
class CiderConfig:
    max_n: int = 4
    sigma: float = 6.0
    report_scale: float = 100.0

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


class DegenerateCorpus(ValueError):
    pass


def _ngrams(text: str, max_n: int) -> Counter:
    words = text.lower().split()
    return Counter(tuple(words[i:i + n]) for n in range(1, max_n + 1) for i in range(len(words) - n + 1))


def _vector(counts: Counter, df: Counter, log_n_docs: float, max_n: int):
    vec = [dict() for _ in range(max_n)]
    sq = [0.0] * max_n
    length = 0
    for ng, tf in counts.items():
        n = len(ng) - 1
        w = tf * (log_n_docs - math.log(max(1.0, df[ng])))
        vec[n][ng] = w
        sq[n] += w * w
        if n == 0:
            length += tf
    return vec, sq, length


def _sim(hyp, ref, max_n: int, sigma: float) -> float:
    (vh, sh, lh), (vr, sr, lr) = hyp, ref
    penalty = math.exp(-((lh - lr) ** 2) / (2 * sigma ** 2))
    total = 0.0
    for n in range(max_n):
        val = sum(min(w, vr[n][ng]) * vr[n][ng] for ng, w in vh[n].items() if ng in vr[n])
        if sh[n] != 0 and sr[n] != 0:
            # sqrt of the product, so identical vectors give exactly 1
            val /= math.sqrt(sh[n] * sr[n])
        total += val * penalty
    return total / max_n


def cider_per_candidate(candidates: Sequence[str], references: Sequence[Sequence[str]],
                        cfg: CiderConfig = CiderConfig()) -> np.ndarray:
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates for {len(references)} reference sets")
    refs = [[r] if isinstance(r, str) else list(r) for r in references]
    if any(not rs for rs in refs):
        raise ValueError("every candidate needs at least one reference")
    distinct = {tuple(sorted(rs)) for rs in refs}
    if len(distinct) < 2:
        raise DegenerateCorpus(
            "CIDEr needs at least 2 distinct reference documents: with one, every n-gram has document "
            "frequency equal to the corpus size, so every IDF weight is log(1) = 0")
    ref_counts = [[_ngrams(r, cfg.max_n) for r in rs] for rs in refs]
    df: Counter = Counter()
    for rc in ref_counts:
        df.update(set().union(*(c.keys() for c in rc)))
    log_n = math.log(len(refs))
    scores = []
    for cand, rc in zip(candidates, ref_counts):
        hyp = _vector(_ngrams(cand, cfg.max_n), df, log_n, cfg.max_n)
        s = sum(_sim(hyp, _vector(c, df, log_n, cfg.max_n), cfg.max_n, cfg.sigma) for c in rc) / len(rc)
        scores.append(10.0 * s)
    return np.array(scores)


def cider_score(candidates: Sequence[str], references: Sequence[Sequence[str]],
                cfg: CiderConfig = CiderConfig()) -> float:
    """Corpus CIDEr-D: mean over candidates of 10 x the length-penalized TF-IDF cosine.

    The returned value is before ``cfg.report_scale``; a perfect match is 10.
    """
    return float(np.mean(cider_per_candidate(candidates, references, cfg)))

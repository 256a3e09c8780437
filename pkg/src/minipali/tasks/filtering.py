"""Image-text quality scoring, top-fraction filtering and perceptual-hash dedup.

Both embeddings live in one 64-dim "concept" space so their cosine means
something: 8 colour bins, 16 class bins, one bin for signage, and 39 hashed
bins for every other word. The image side fills colour bins from exact
palette pixel counts and class bins by matching each connected colour blob
against rendered shape templates.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence, TypeVar

import numpy as np
from PIL import Image
from scipy import ndimage

from .lexicon import CIPHERS, CLASSES, COLORS, GLYPH_INK, GLYPH_PAPER
from .scenes import ObjectSpec, SceneSpec, render_array

EMBED_DIM = 64
_COLOR0, _CLASS0, _SIGN, _HASH0 = 0, len(COLORS), len(COLORS) + len(CLASSES), len(COLORS) + len(CLASSES) + 1
_N_HASH = EMBED_DIM - _HASH0
_ENGLISH = {form: w for table in CIPHERS.values() for w, form in table.items()}
_COLOR_IDX = {c: i for i, c in enumerate(COLORS)}
_CLASS_IDX = {c: i for i, c in enumerate(CLASSES)}
_STOPWORDS = frozenset({"a", "of", "and", "with", "near", "the", "Photo"})

T = TypeVar("T")


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def text_embedding(text: str) -> np.ndarray:
    """Hashed bag of (deciphered) content words, L2-normalized."""
    v = np.zeros(EMBED_DIM)
    for word in text.split():
        w = _ENGLISH.get(word, word)
        if w in _STOPWORDS:
            continue
        if w in _COLOR_IDX:
            v[_COLOR0 + _COLOR_IDX[w]] += 1
        elif w in _CLASS_IDX:
            v[_CLASS0 + _CLASS_IDX[w]] += 1
        elif w == "sign":
            v[_SIGN] += 1
        else:
            v[_HASH0 + zlib.crc32(w.encode()) % _N_HASH] += 1
    return _normalize(v)


def _descriptor(mask: np.ndarray) -> np.ndarray:
    rows, cols = np.flatnonzero(mask.any(1)), np.flatnonzero(mask.any(0))
    crop = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    h, w = crop.shape
    ri = np.minimum((np.arange(8) + 0.5) * h / 8, h - 1).astype(int)
    ci = np.minimum((np.arange(8) + 0.5) * w / 8, w - 1).astype(int)
    return np.concatenate([crop[np.ix_(ri, ci)].ravel().astype(float), [math.log(h / w)]])


def _components(mask: np.ndarray, min_area: int):
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    for k in range(1, n + 1):
        comp = labels == k
        area = int(comp.sum())
        if area >= min_area:
            yield comp, area


@lru_cache(maxsize=8)
def _templates(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    descs, owners = [], []
    for ci, cls in enumerate(CLASSES):
        spec = SceneSpec(objects=(ObjectSpec(cls, (72.0, 72.0, 152.0, 152.0), "red"),))
        mask = np.all(render_array(spec, resolution) == COLORS["red"], axis=-1)
        for comp, _ in _components(mask, 1):
            descs.append(_descriptor(comp))
            owners.append(ci)
    return np.array(descs), np.array(owners)


def image_embedding(image) -> np.ndarray:
    """Colour/shape histogram of a rendered scene (uint8 or [0,1] float array), L2-normalized."""
    img = np.asarray(getattr(image, "data", image))
    if img.dtype != np.uint8:
        img = np.round(img * 255).astype(np.uint8)
    res = img.shape[0]
    v = np.zeros(EMBED_DIM)
    descs, owners = _templates(res)
    min_area = max(2, (res // 56) ** 2)
    for name, rgb in COLORS.items():
        mask = np.all(img == rgb, axis=-1)
        if not mask.any():
            continue
        v[_COLOR0 + _COLOR_IDX[name]] += mask.sum()
        for comp, area in _components(mask, min_area):
            d = _descriptor(comp)
            dist = np.abs(descs[:, :-1] - d[:-1]).mean(1) + 0.25 * np.abs(descs[:, -1] - d[-1])
            v[_CLASS0 + owners[int(np.argmin(dist))]] += area
    v[_SIGN] = (np.all(img == GLYPH_INK, -1) | np.all(img == GLYPH_PAPER, -1)).sum()
    return _normalize(v)


@dataclass(frozen=True)
class ScoredPair:
    image_embedding: np.ndarray
    text_embedding: np.ndarray
    score: float

    @classmethod
    def of(cls, u: np.ndarray, v: np.ndarray) -> "ScoredPair":
        return cls(u, v, cosine(u, v))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def score_pair(image, text: str) -> ScoredPair:
    return ScoredPair.of(image_embedding(image), text_embedding(text))


def keep_count(n: int, keep_fraction: float) -> int:
    # round() first so 0.1 * 100 style products do not ceil up on float noise
    return min(n, math.ceil(round(keep_fraction * n, 9)))


def quality_filter(records: Sequence[T], keep_fraction: float = 0.10,
                   score_of: Callable[[T], float] = lambda r: r.score) -> list[T]:
    """The ``ceil(keep_fraction * N)`` best-scoring records, in input order; ties keep the earlier record."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    records = list(records)
    if not records:
        return []
    scores = np.array([score_of(r) for r in records], dtype=np.float64)
    order = np.lexsort((np.arange(len(records)), -scores))
    chosen = np.sort(order[:keep_count(len(records), keep_fraction)])
    return [records[i] for i in chosen]


def phash(image) -> int:
    """64-bit mean hash: grayscale, box-downsample to 8x8, threshold at the mean."""
    raw = np.asarray(getattr(image, "data", image))
    img = raw / 255.0 if raw.dtype == np.uint8 else raw.astype(np.float64)
    gray = img @ np.array([0.299, 0.587, 0.114]) if img.ndim == 3 else img
    small = np.asarray(Image.fromarray(gray.astype(np.float32)).resize((8, 8), Image.BOX),
                       dtype=np.float64)
    bits = (small > small.mean()).ravel()
    return int(sum(1 << i for i, b in enumerate(bits) if b))


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def near_dedup(corpus: Sequence[T], eval_images: Sequence, hamming_threshold: int = 4,
               image_of: Callable[[T], object] = lambda r: r) -> list[T]:
    """Drop every corpus record whose image hash is within the threshold of any eval image."""
    if hamming_threshold < 0:
        raise ValueError("hamming_threshold must be >= 0")
    eval_hashes = [phash(im) for im in eval_images]
    if not eval_hashes:
        return list(corpus)
    return [r for r in corpus
            if min(hamming(phash(image_of(r)), h) for h in eval_hashes) > hamming_threshold]

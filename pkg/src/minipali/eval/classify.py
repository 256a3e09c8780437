"""Zero-shot classification by scoring each class name as a caption continuation."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import LogitsTransform

ZS_TEMPLATE = "Generate alt_text in EN at 2: Photo of <extra_id_0>"


def zero_shot_classify(model, image, class_names: Sequence[str], template: str = ZS_TEMPLATE,
                       transform: LogitsTransform | None = None) -> list[tuple[str, float]]:
    """Rank ``class_names`` by log p(name + EOS | image, template).

    Returns (class, log-prob) pairs, best first; equal scores fall back to
    lexicographic order of the class name.
    """
    names = list(class_names)
    if not names:
        raise ValueError("class_names is empty")
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate class names: {dup}")
    scores = np.asarray(model.score_texts(image, template, names, transform=transform), dtype=np.float64)
    return sorted(((n, float(s)) for n, s in zip(names, scores)), key=lambda t: (-t[1], t[0]))


def top_k_hit(ranking: Sequence[tuple[str, float]], gold: Sequence[str] | str, k: int) -> bool:
    gold = {gold} if isinstance(gold, str) else set(gold)
    return any(name in gold for name, _ in ranking[:k])

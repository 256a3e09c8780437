"""Evaluation records and the scene-generated eval / fine-tuning sets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..numerics import Tensor
from ..tasks.corpus import dumps, load_image
from ..tasks.lexicon import CLASSES, COLORS
from ..tasks.scenes import ObjectSpec, SceneSpec, english_alt_text, random_scene, render_scene
from ..tasks.templates import Example, caption_prompt, gen_caption, gen_split_cap, gen_vqa
from .classify import ZS_TEMPLATE

EVAL_TASKS = ("vqa", "caption", "classify")
# Eval scenes draw from a seed range no corpus seed reaches.
EVAL_SEED_BASE = 1 << 40
CLASSIFY_CLASSES = CLASSES[:8]
COLOR_NAMES = tuple(COLORS)


@dataclass(frozen=True)
class EvalRecord:
    id: str
    image_ref: str
    input_text: str
    gold: tuple[str, ...]
    task: str
    scene: SceneSpec | None = None

    def __post_init__(self):
        if self.task not in EVAL_TASKS:
            raise ValueError(f"unknown eval task {self.task!r}; expected one of {EVAL_TASKS}")
        gold = (self.gold,) if isinstance(self.gold, str) else tuple(self.gold)
        if not gold or any(not isinstance(g, str) or not g.strip() for g in gold):
            raise ValueError(f"record {self.id}: gold must be a non-empty list of non-empty strings")
        object.__setattr__(self, "gold", gold)

    def image(self, resolution: int, root: str | Path | None = None) -> Tensor:
        """Scene rendered at ``resolution``, or the stored raster under ``root``."""
        if self.scene is not None:
            return render_scene(self.scene, resolution)
        if root is None:
            raise ValueError(f"record {self.id} has no scene and no image root was given")
        arr = load_image(root, self.image_ref)
        if arr.shape[:2] != (resolution, resolution):
            raise ValueError(f"record {self.id}: stored image is {arr.shape[:2]}, model wants {resolution}")
        return Tensor(arr)

    def to_dict(self) -> dict:
        return {"id": self.id, "image_ref": self.image_ref, "input_text": self.input_text,
                "gold": list(self.gold), "task": self.task,
                "scene": self.scene.to_dict() if self.scene is not None else None}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        scene = SceneSpec.from_dict(d["scene"]) if d.get("scene") else None
        return cls(str(d["id"]), d["image_ref"], d["input_text"], tuple(d["gold"]), d["task"], scene)


def eval_seed(seed: int, i: int) -> int:
    return EVAL_SEED_BASE + int(seed) * 1_000_003 + i


def _record(task: str, scene: SceneSpec, input_text: str, gold) -> EvalRecord:
    return EvalRecord(f"{task}-{scene.seed}", f"scene:{scene.seed}", input_text, gold, task, scene)


def classification_scene(seed: int, cls: str, size: int = 224) -> SceneSpec:
    """One large object of class ``cls`` (side 55-90% of the frame), random color and offset."""
    rng = np.random.default_rng([int(seed), 0xC1A55])
    side = int(rng.integers(int(0.55 * size), int(0.9 * size) + 1))
    y0, x0 = (int(v) for v in rng.integers(0, size - side + 1, size=2))
    color = COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))]
    return SceneSpec((ObjectSpec(cls, (y0, x0, y0 + side, x0 + side), color),), (), "EN", int(seed), size)


def make_eval_set(task: str, n: int, seed: int = 0, classes: Sequence[str] = CLASSIFY_CLASSES) -> list[EvalRecord]:
    """``n`` English eval records for ``task``, a pure function of (task, n, seed).

    Classification sets cycle through ``classes`` so every class appears
    equally often (up to the remainder).
    """
    if task not in EVAL_TASKS:
        raise ValueError(f"unknown eval task {task!r}; expected one of {EVAL_TASKS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        s = eval_seed(seed, i)
        if task == "classify":
            scene = classification_scene(s, classes[i % len(classes)])
            out.append(_record(task, scene, ZS_TEMPLATE, scene.objects[0].cls))
        elif task == "caption":
            scene = random_scene(s, glyph_prob=0.0, language="EN")
            out.append(_record(task, scene, caption_prompt("EN", 0), english_alt_text(scene)))
        else:
            scene = random_scene(s, language="EN")
            ex = gen_vqa(scene, np.random.default_rng([s, 1]))
            out.append(_record(task, scene, ex.input_text, ex.target_text))
    return out


def caption_training_set(n: int, seed: int, resolution: int,
                         classes: Sequence[str] = CLASSIFY_CLASSES) -> list[Example]:
    """Captioning and split-captioning examples on single-object English scenes.

    Scene seeds come from a range disjoint from ``make_eval_set``.
    """
    out = []
    for i in range(n):
        s = eval_seed(seed + 7_777, i)
        scene = classification_scene(s, classes[i % len(classes)])
        alt = english_alt_text(scene)
        rng = np.random.default_rng([s, 2])
        if rng.random() < 0.5 or len(alt.split()) < 2:
            out.append(gen_caption(alt, "EN", scene, resolution))
        else:
            out.append(gen_split_cap(alt, "EN", rng, scene, resolution))
    return out


def eval_images(records: Sequence[EvalRecord], resolution: int) -> list[np.ndarray]:
    return [np.asarray(r.image(resolution).data) for r in records]


def write_eval_set(records: Sequence[EvalRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(dumps(r.to_dict()) + "\n")
    return path


def load_eval_set(path: str | Path) -> list[EvalRecord]:
    with open(path, encoding="utf-8") as f:
        return [EvalRecord.from_dict(json.loads(line)) for line in f if line.strip()]

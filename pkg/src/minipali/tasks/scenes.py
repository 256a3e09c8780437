"""Procedural scenes: coloured shapes and block-pattern "text" on a grey canvas.

A :class:`SceneSpec` is pure ground truth. Boxes live in a canonical pixel
frame of side ``size``; :func:`render_scene` samples that frame at any
resolution, so the same spec yields consistent images at 56, 112 or 224.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..numerics import Tensor
from .lexicon import BACKGROUND, CLASSES, COLORS, GLYPH_INK, GLYPH_PAPER, GLYPHS, LANGUAGES, translate

Box = tuple[float, float, float, float]  # ymin, xmin, ymax, xmax


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    cls: str
    bbox: Box
    color: str


@dataclass(frozen=True)
class GlyphSpec:
    text: str
    bbox: Box


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectSpec, ...] = ()
    glyphs: tuple[GlyphSpec, ...] = ()
    language: str = "EN"
    seed: int = 0
    size: int = 224
    # Seed of the scene whose caption is paired with this image; None means
    # its own. Mismatched pairs model noisy web alt-text.
    caption_seed: int | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "glyphs", tuple(self.glyphs))
        if self.language not in LANGUAGES:
            raise SceneError(f"unknown language {self.language!r}")
        for o in self.objects:
            if o.cls not in CLASSES:
                raise SceneError(f"unknown class {o.cls!r}")
            if o.color not in COLORS:
                raise SceneError(f"unknown color {o.color!r}")
        for item in (*self.objects, *self.glyphs):
            check_box(item.bbox, self.size)

    @property
    def class_names(self) -> list[str]:
        return [o.cls for o in self.objects]

    def to_dict(self) -> dict:
        return {
            "objects": [[o.cls, list(o.bbox), o.color] for o in self.objects],
            "glyphs": [[g.text, list(g.bbox)] for g in self.glyphs],
            "language": self.language, "seed": self.seed, "size": self.size,
            "caption_seed": self.caption_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            objects=tuple(ObjectSpec(c, tuple(b), col) for c, b, col in d["objects"]),
            glyphs=tuple(GlyphSpec(t, tuple(b)) for t, b in d["glyphs"]),
            language=d["language"], seed=d["seed"], size=d["size"], caption_seed=d.get("caption_seed"),
        )


def check_box(box: Box, size: float) -> None:
    ymin, xmin, ymax, xmax = box
    if not (0 <= ymin < ymax <= size and 0 <= xmin < xmax <= size):
        raise SceneError(f"box {tuple(box)} outside a {size}x{size} image or empty")


def reading_order(items):
    """Sort by (ymin, xmin): top-left to bottom-right."""
    return sorted(items, key=lambda it: (it.bbox[0], it.bbox[1]))


# -- shapes on the unit square (v down, u right) -----------------------------

def _disk(u, v, r=0.5, cu=0.5, cv=0.5):
    return (u - cu) ** 2 + (v - cv) ** 2 <= r * r


def _kite(u, v):
    half = np.where(v < 0.4, 0.5 * v / 0.4, 0.5 * (1 - v) / 0.6)
    return np.abs(u - 0.5) <= half


def _arch(u, v):
    outer = ((u - 0.5) / 0.5) ** 2 + (v - 1.0) ** 2 <= 1.0
    inner = ((u - 0.5) / 0.25) ** 2 + ((v - 1.0) / 0.6) ** 2 < 1.0
    return outer & ~inner


SHAPES: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "ball": lambda u, v: _disk(u, v),
    "cube": lambda u, v: np.ones_like(u, bool),
    "cone": lambda u, v: np.abs(u - 0.5) <= v / 2,
    "ring": lambda u, v: _disk(u, v) & ~_disk(u, v, 0.3),
    "cross": lambda u, v: (np.abs(u - 0.5) < 0.17) | (np.abs(v - 0.5) < 0.17),
    "gem": lambda u, v: np.abs(u - 0.5) + np.abs(v - 0.5) <= 0.5,
    "bar": lambda u, v: (v >= 0.35) & (v <= 0.65),
    "pillar": lambda u, v: (u >= 0.35) & (u <= 0.65),
    "frame": lambda u, v: np.maximum(np.abs(u - 0.5), np.abs(v - 0.5)) >= 0.3,
    "wedge": lambda u, v: u <= v,
    "stripes": lambda u, v: np.floor(v * 4) % 2 == 0,
    "checker": lambda u, v: (np.floor(u * 3) + np.floor(v * 3)) % 2 == 0,
    "dots": lambda u, v: _disk((u * 2) % 1, (v * 2) % 1, 0.4),
    "kite": _kite,
    "arch": _arch,
    "hook": lambda u, v: (u >= 0.65) | ((v >= 0.7) & (u >= 0.0)) | ((u <= 0.3) & (v >= 0.45)),
}


def glyph_bits(text: str) -> np.ndarray:
    """4x4 block pattern: the 16 bits of the two character codes, row-major."""
    codes = text.encode("ascii")[:2].ljust(2, b" ")
    bits = [(codes[i // 8] >> (7 - i % 8)) & 1 for i in range(16)]
    return np.array(bits, bool).reshape(4, 4)


def _coverage(box: Box, size: int, res: int):
    """Pixel-centre coordinates (rows, cols) inside ``box`` and their unit-square (v, u)."""
    scale = size / res
    centers = (np.arange(res) + 0.5) * scale
    ymin, xmin, ymax, xmax = box
    rows = np.flatnonzero((centers >= ymin) & (centers < ymax))
    cols = np.flatnonzero((centers >= xmin) & (centers < xmax))
    v = (centers[rows] - ymin) / (ymax - ymin)
    u = (centers[cols] - xmin) / (xmax - xmin)
    return rows, cols, np.meshgrid(v, u, indexing="ij")


def render_array(spec: SceneSpec, resolution: int) -> np.ndarray:
    """uint8 image [R, R, 3]; pure function of (spec, resolution)."""
    if resolution < 1:
        raise SceneError("resolution must be positive")
    for item in (*spec.objects, *spec.glyphs):
        check_box(item.bbox, spec.size)
    img = np.empty((resolution, resolution, 3), np.uint8)
    img[:] = BACKGROUND
    for o in spec.objects:
        rows, cols, (v, u) = _coverage(o.bbox, spec.size, resolution)
        if rows.size and cols.size:
            mask = SHAPES[o.cls](u, v)
            patch = img[np.ix_(rows, cols)]
            patch[mask] = COLORS[o.color]
            img[np.ix_(rows, cols)] = patch
    for g in spec.glyphs:
        rows, cols, (v, u) = _coverage(g.bbox, spec.size, resolution)
        if rows.size and cols.size:
            bits = glyph_bits(g.text)
            on = bits[np.minimum((v * 4).astype(int), 3), np.minimum((u * 4).astype(int), 3)]
            patch = np.where(on[..., None], np.array(GLYPH_INK, np.uint8), np.array(GLYPH_PAPER, np.uint8))
            img[np.ix_(rows, cols)] = patch
    return img


def render_scene(spec: SceneSpec, resolution: int) -> Tensor:
    """Image tensor [R, R, 3] with values k/255 in [0, 1]."""
    return Tensor(render_array(spec, resolution).astype(np.float64) / 255.0)


# -- random scenes -------------------------------------------------------------

def _overlaps(a: Box, b: Box) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _place(rng, size, lo, hi, taken):
    for _ in range(50):
        h, w = rng.integers(lo, hi + 1, size=2)
        y, x = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        box = (float(y), float(x), float(y + h), float(x + w))
        if not any(_overlaps(box, t) for t in taken):
            return box
    return None


def random_scene(seed: int, size: int = 224, max_objects: int = 3, glyph_prob: float = 0.5,
                 caption_seed: int | None = None, language: str | None = None,
                 classes: tuple[str, ...] = CLASSES) -> SceneSpec:
    """Deterministic scene for ``seed``: 1..max_objects shapes, maybe 1-2 glyphs."""
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    unit = size / 224
    taken: list[Box] = []
    objects = []
    n_obj = int(rng.integers(1, max_objects + 1))
    colors = tuple(COLORS)
    for i in range(n_obj):
        box = _place(rng, size, int(56 * unit), int(100 * unit), taken)
        cls = classes[int(rng.integers(len(classes)))]
        if objects and rng.random() < 0.3:
            cls = objects[-1].cls
        color = colors[int(rng.integers(len(colors)))]
        if box is not None:
            taken.append(box)
            objects.append(ObjectSpec(cls, box, color))
    glyphs = []
    if rng.random() < glyph_prob:
        for _ in range(int(rng.integers(1, 3))):
            box = _place(rng, size, int(40 * unit), int(56 * unit), taken)
            text = GLYPHS[int(rng.integers(len(GLYPHS)))]
            if box is not None:
                taken.append(box)
                glyphs.append(GlyphSpec(text, box))
    if language is None:
        language = "EN" if rng.random() < 0.5 else LANGUAGES[1 + int(rng.integers(len(LANGUAGES) - 1))]
    return SceneSpec(tuple(objects), tuple(glyphs), language, int(seed), size, caption_seed)


# -- alt-text --------------------------------------------------------------------

def english_alt_text(spec: SceneSpec) -> str:
    """Caption of the scene's own content, in English. Deterministic in the seed."""
    rng = np.random.default_rng([int(spec.seed), 0xCA7])
    objs = reading_order(spec.objects)
    if not objs:
        text = "Photo of a sign" if spec.glyphs else "Photo of"
        return text
    if len(objs) == 1:
        o = objs[0]
        form = int(rng.integers(3))
        text = (f"Photo of {o.cls}", f"Photo of a {o.color} {o.cls}", f"a {o.color} {o.cls}")[form]
    else:
        joiner = " and " if rng.random() < 0.5 else " near "
        text = joiner.join(f"a {o.color} {o.cls}" for o in objs)
    if spec.glyphs:
        text += " with a sign"
    return text


def alt_text(spec: SceneSpec) -> str:
    """The alt-text paired with the image, in the scene's language.

    Clean pairs describe the scene itself; pairs with ``caption_seed`` carry
    the caption of another generated scene.
    """
    source = spec
    if spec.caption_seed is not None and spec.caption_seed != spec.seed:
        source = random_scene(spec.caption_seed, size=spec.size)
    return translate(english_alt_text(source), spec.language)

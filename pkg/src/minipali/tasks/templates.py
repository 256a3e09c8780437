"""The eight pre-training task templates over scene ground truth.

Every generator returns an :class:`Example` whose target can be recomputed
from the :class:`SceneSpec` alone; :func:`validate_example` does exactly that.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..numerics import Tensor
from .lexicon import CLASSES, LANGUAGES, translate, untranslate
from .scenes import SceneSpec, alt_text, english_alt_text, random_scene, reading_order, render_scene
from .vocab import sentinel

TASKS = ("span", "split_cap", "cap", "ocr", "vqa", "vqg", "oa", "det")
SLOT = sentinel(0)


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    input_text: str
    target_text: str
    task: str
    language: str
    scene: SceneSpec | None = None  # None for text-only examples (blank canvas)
    resolution: int = 224
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise TaskError(f"unknown task {self.task!r}")
        if self.task != "span" and self.input_text.count(SLOT) > 1:
            raise TaskError(f"{self.task} prompt must hold at most one {SLOT}")

    @property
    def image(self) -> Tensor:
        return render_scene(self.scene if self.scene is not None else SceneSpec(size=self.resolution),
                            self.resolution)

    def with_resolution(self, resolution: int) -> "Example":
        return replace(self, resolution=resolution)


def _words(text: str) -> list[str]:
    return text.split(" ")


# -- span corruption -------------------------------------------------------------

def _random_segmentation(n_items: int, n_segments: int, rng) -> np.ndarray:
    """Split ``n_items`` into ``n_segments`` positive lengths, uniformly over compositions."""
    first = np.zeros(n_items, dtype=np.int64)
    first[rng.choice(np.arange(1, n_items), size=n_segments - 1, replace=False)] = 1
    seg = np.cumsum(first)
    return np.bincount(seg, minlength=n_segments)


def noise_mask(length: int, rate: float, mean_span: float, rng) -> np.ndarray:
    """Boolean mask of corrupted positions: alternating clean/noise spans, clean first."""
    if rate <= 0:
        return np.zeros(length, bool)
    n_noise = int(min(max(round(length * rate), 1), length - 1))
    n_spans = int(min(max(round(n_noise / mean_span), 1), n_noise, length - n_noise))
    noise_lens = _random_segmentation(n_noise, n_spans, rng)
    clean_lens = _random_segmentation(length - n_noise, n_spans, rng)
    mask = np.zeros(length, bool)
    pos = 0
    for c, n in zip(clean_lens, noise_lens):
        pos += c
        mask[pos:pos + n] = True
        pos += n
    return mask


def gen_span_corruption(text: str, rate: float = 0.15, mean_span: float = 3.0, rng=None,
                        language: str = "EN", seed: int = 0, resolution: int = 224) -> Example:
    """Replace word spans by ``<extra_id_k>``; the target lists each sentinel then its span."""
    words = _words(text)
    if len(words) < 2:
        raise TaskError("span corruption needs a text of at least 2 words")
    rng = np.random.default_rng() if rng is None else rng
    mask = noise_mask(len(words), rate, mean_span, rng)
    inp, tgt, k, i = [], [], 0, 0
    while i < len(words):
        if not mask[i]:
            inp.append(words[i])
            i += 1
            continue
        j = i
        while j < len(words) and mask[j]:
            j += 1
        inp.append(sentinel(k))
        tgt += [sentinel(k), *words[i:j]]
        k += 1
        i = j
    return Example(" ".join(inp), " ".join(tgt), "span", language, None, resolution, seed)


_SENT_RE = re.compile(r"<extra_id_(\d+)>")


def splice_spans(input_text: str, target_text: str) -> str:
    """Put the target's spans back at their sentinels."""
    spans: dict[str, str] = {}
    parts = _SENT_RE.split(target_text)
    for idx in range(1, len(parts), 2):
        spans[sentinel(int(parts[idx]))] = parts[idx + 1].strip(" ")
    return " ".join(spans.get(w, w) for w in _words(input_text))


def corruption_fraction(example: Example) -> float:
    n_input = len(_words(example.input_text))
    n_sent = len(_SENT_RE.findall(example.input_text))
    n_target = len(_words(example.target_text)) - n_sent if example.target_text else 0
    return n_target / (n_input - n_sent + n_target)


def text_document(seed: int, min_words: int = 40) -> str:
    """English prose made by chaining scene captions until it has ``min_words`` words."""
    parts, n, i = [], 0, 0
    while n < min_words:
        cap = english_alt_text(random_scene(seed * 1009 + i))
        parts.append(cap)
        n += len(_words(cap))
        i += 1
    return " and ".join(parts)


# -- captioning --------------------------------------------------------------------

def caption_prompt(lang: str, pos: int, prefix: str = "") -> str:
    head = f"Generate the alt_text in {lang} at {pos}:"
    return f"{head} {prefix} {SLOT}" if prefix else f"{head} {SLOT}"


def gen_split_cap(alt: str, lang: str, rng, scene: SceneSpec | None = None, resolution: int = 224) -> Example:
    words = _words(alt)
    if len(words) < 2:
        raise TaskError("split captioning needs at least 2 words; use gen_caption")
    k = int(rng.integers(1, len(words)))
    cap1, cap2 = " ".join(words[:k]), " ".join(words[k:])
    return Example(caption_prompt(lang, k, cap1), cap2, "split_cap", lang, scene, resolution,
                   scene.seed if scene else 0)


def gen_caption(alt: str, lang: str, scene: SceneSpec | None = None, resolution: int = 224) -> Example:
    if not alt.strip():
        raise TaskError("caption text is empty")
    return Example(caption_prompt(lang, 0), alt, "cap", lang, scene, resolution, scene.seed if scene else 0)


# -- OCR -----------------------------------------------------------------------------

def ocr_text(scene: SceneSpec) -> str:
    return " ".join(g.text for g in reading_order(scene.glyphs))


def gen_ocr(scene: SceneSpec, lang: str | None = None, resolution: int | None = None) -> Example:
    if not scene.glyphs:
        raise TaskError("scene has no glyphs to read")
    lang = scene.language if lang is None else lang
    return Example(f"Generate the ocr_text in {lang}: {SLOT}", ocr_text(scene), "ocr", lang, scene,
                   resolution or scene.size, scene.seed)


# -- VQA / VQG -----------------------------------------------------------------------

def questions(scene: SceneSpec) -> list[tuple[str, str]]:
    """All templated (English question, English answer) pairs for the scene."""
    names = scene.class_names
    out = []
    for c in CLASSES:
        n = names.count(c)
        if n == 0:
            continue
        out.append((f"how many {c}", str(n)))
        if n == 1:
            color = next(o.color for o in scene.objects if o.cls == c)
            out.append((f"what color is the {c}", color))
    return out


def answer_question(scene: SceneSpec, question_en: str) -> str:
    m = re.fullmatch(r"how many (\w+)", question_en)
    if m:
        return str(scene.class_names.count(m.group(1)))
    m = re.fullmatch(r"what color is the (\w+)", question_en)
    if m:
        cols = [o.color for o in scene.objects if o.cls == m.group(1)]
        if len(cols) == 1:
            return cols[0]
    raise TaskError(f"question {question_en!r} has no answer in this scene")


def _require_objects(scene: SceneSpec) -> None:
    if not scene.objects:
        raise TaskError("scene has no objects")


def gen_vqa(scene: SceneSpec, rng, resolution: int | None = None) -> Example:
    _require_objects(scene)
    qs = questions(scene)
    q, a = qs[int(rng.integers(len(qs)))]
    lang = scene.language
    return Example(f"Answer in EN: {translate(q, lang)} {SLOT}", a, "vqa", lang, scene,
                   resolution or scene.size, scene.seed)


def gen_vqg(scene: SceneSpec, lang: str | None, rng, resolution: int | None = None) -> Example:
    _require_objects(scene)
    lang = scene.language if lang is None else lang
    qs = questions(scene)
    q, a = qs[int(rng.integers(len(qs)))]
    return Example(f"Generate a question in {lang} for {a}: {SLOT}", translate(q, lang), "vqg", lang,
                   scene, resolution or scene.size, scene.seed)


# -- object-aware QA -------------------------------------------------------------------

def canonical(classes) -> list[str]:
    present = set(classes)
    return [c for c in CLASSES if c in present]


def _oa_list_prompt(objs: Sequence[str]) -> str:
    return ", ".join(objs)


def gen_object_aware(scene: SceneSpec, rng, resolution: int | None = None, kind: int | None = None) -> Example:
    _require_objects(scene)
    present = canonical(scene.class_names)
    absent = [c for c in CLASSES if c not in present]
    kind = int(rng.integers(1, 5)) if kind is None else kind
    if kind == 1:
        prompt, target = f"Answer in EN: List the objects present: {SLOT}", ", ".join(present)
    elif kind == 2:
        pool = present if (rng.random() < 0.5 or not absent) else absent
        obj = pool[int(rng.integers(len(pool)))]
        prompt = f"Answer in EN: Is {obj} in the image? {SLOT}"
        target = "Yes" if obj in present else "No"
    else:
        n = int(rng.integers(2, 4))
        pick = [present[int(rng.integers(len(present)))]]
        others = [c for c in CLASSES if c != pick[0]]
        pick += [others[i] for i in rng.choice(len(others), size=n - 1, replace=False)]
        pick = [pick[i] for i in rng.permutation(len(pick))]
        if kind == 3:
            prompt = f"Answer in EN: Is {_oa_list_prompt(pick)} in the image? {SLOT}"
            target = "Yes" if all(c in present for c in pick) else "No"
        else:
            prompt = f"Answer in EN: Which of {_oa_list_prompt(pick)} are in the image? {SLOT}"
            target = ", ".join(canonical(c for c in pick if c in present))
    return Example(prompt, target, "oa", "EN", scene, resolution or scene.size, scene.seed)


def object_aware_answer(scene: SceneSpec, prompt: str) -> str:
    present = canonical(scene.class_names)
    body = prompt.removeprefix("Answer in EN: ").removesuffix(f" {SLOT}")
    if body == "List the objects present:":
        return ", ".join(present)
    m = re.fullmatch(r"Is (.+) in the image\?", body)
    if m:
        objs = m.group(1).split(", ")
        return "Yes" if all(o in present for o in objs) else "No"
    m = re.fullmatch(r"Which of (.+) are in the image\?", body)
    if m:
        return ", ".join(canonical(o for o in m.group(1).split(", ") if o in present))
    raise TaskError(f"not an object-aware prompt: {prompt!r}")


# -- detection ---------------------------------------------------------------------------

def quantize_coord(p: float, resolution: float) -> int:
    """Pixel coordinate -> bin in 0..999; the tiny epsilon absorbs float noise in exact ratios."""
    return int(min(999, max(0, math.floor(p / resolution * 1000 + 1e-9))))


def dequantize_coord(q: int, resolution: float) -> float:
    """Centre of bin ``q`` in pixels."""
    return (q + 0.5) * resolution / 1000


def format_boxes(items: Sequence[tuple[tuple[float, float, float, float], str]], resolution: float) -> str:
    items = sorted(items, key=lambda it: (it[0][0], it[0][1]))
    return " ".join(" ".join(str(quantize_coord(p, resolution)) for p in box) + f" {name}"
                    for box, name in items)


def parse_boxes(text: str, resolution: float) -> list[tuple[tuple[float, float, float, float], str]]:
    toks = text.split()
    if len(toks) % 5:
        raise TaskError(f"detection string has {len(toks)} fields, not a multiple of 5")
    out = []
    for i in range(0, len(toks), 5):
        coords = tuple(dequantize_coord(int(t), resolution) for t in toks[i:i + 4])
        out.append((coords, toks[i + 4]))
    return out


def detection_target(scene: SceneSpec, resolution: int) -> str:
    scale = resolution / scene.size
    boxes = [(tuple(p * scale for p in o.bbox) if scale != 1 else o.bbox, o.cls) for o in scene.objects]
    return format_boxes(boxes, resolution)


def gen_detection(scene: SceneSpec, rng, resolution: int | None = None) -> Example:
    _require_objects(scene)
    resolution = scene.size if resolution is None else resolution
    pos = canonical(scene.class_names)
    absent = [c for c in CLASSES if c not in pos]
    n_neg = min(int(rng.integers(1, 4)), len(absent))
    neg = [absent[i] for i in rng.choice(len(absent), size=n_neg, replace=False)]
    names = pos + neg
    names = [names[i] for i in rng.permutation(len(names))]
    return Example("detect " + " and ".join(names), detection_target(scene, resolution), "det", "EN",
                   scene, resolution, scene.seed)


# -- dispatch and validation -----------------------------------------------------------------

def supports(scene: SceneSpec, task: str) -> bool:
    if task == "ocr":
        return bool(scene.glyphs)
    if task in ("vqa", "vqg", "oa", "det"):
        return bool(scene.objects)
    if task in ("split_cap", "span"):
        return len(_words(alt_text(scene))) >= 2
    return task in TASKS


def make_example(scene: SceneSpec, task: str, rng, resolution: int | None = None) -> Example:
    """One example of ``task`` for ``scene``; all text in the scene's language where applicable."""
    res = scene.size if resolution is None else resolution
    if task == "span":
        return gen_span_corruption(alt_text(scene), rng=rng, language=scene.language, seed=scene.seed,
                                   resolution=res)
    if task == "split_cap":
        return gen_split_cap(alt_text(scene), scene.language, rng, scene, res)
    if task == "cap":
        return gen_caption(alt_text(scene), scene.language, scene, res)
    if task == "ocr":
        return gen_ocr(scene, resolution=res)
    if task == "vqa":
        return gen_vqa(scene, rng, res)
    if task == "vqg":
        return gen_vqg(scene, None, rng, res)
    if task == "oa":
        return gen_object_aware(scene, rng, res)
    if task == "det":
        return gen_detection(scene, rng, res)
    raise TaskError(f"unknown task {task!r}")


_CAP_RE = re.compile(r"Generate the alt_text in (\w+) at (\d+): (.*)")


def validate_example(ex: Example, scene: SceneSpec) -> None:
    """Recompute the target from the scene and raise TaskError on any mismatch."""

    def check(expected: str) -> None:
        if ex.target_text != expected:
            raise TaskError(f"{ex.task}: target {ex.target_text!r} != recomputed {expected!r}")

    if ex.task == "span":
        if splice_spans(ex.input_text, ex.target_text) != alt_text(scene):
            raise TaskError("span: spliced text differs from the scene's alt-text")
    elif ex.task in ("cap", "split_cap"):
        m = _CAP_RE.fullmatch(ex.input_text)
        if not m or m.group(1) != scene.language:
            raise TaskError(f"{ex.task}: malformed prompt {ex.input_text!r}")
        k, words = int(m.group(2)), _words(alt_text(scene))
        prefix = " ".join(words[:k])
        if m.group(3) != (f"{prefix} {SLOT}" if k else SLOT):
            raise TaskError(f"{ex.task}: prompt prefix does not match the alt-text")
        check(" ".join(words[k:]))
    elif ex.task == "ocr":
        check(ocr_text(scene))
    elif ex.task == "vqa":
        q = ex.input_text.removeprefix("Answer in EN: ").removesuffix(f" {SLOT}")
        check(answer_question(scene, untranslate(q, scene.language)))
    elif ex.task == "vqg":
        m = re.fullmatch(rf"Generate a question in (\w+) for (\w+): {re.escape(SLOT)}", ex.input_text)
        if not m or m.group(1) not in LANGUAGES:
            raise TaskError(f"vqg: malformed prompt {ex.input_text!r}")
        if answer_question(scene, untranslate(ex.target_text, m.group(1))) != m.group(2):
            raise TaskError("vqg: generated question does not have the prompted answer")
    elif ex.task == "oa":
        check(object_aware_answer(scene, ex.input_text))
    elif ex.task == "det":
        names = ex.input_text.removeprefix("detect ").split(" and ")
        if not set(scene.class_names) <= set(names):
            raise TaskError("det: prompt misses a positive class")
        check(detection_target(scene, ex.resolution))
    else:
        raise TaskError(f"unknown task {ex.task!r}")

"""Corpus construction (score, filter, dedup, expand into task examples) and its on-disk form.

Layout of a corpus directory::

    records.jsonl    one example per line {id, seed, task, language, input_text, target_text, image_ref}
    scenes.jsonl     the SceneSpec of every kept image, keyed by seed
    images/<seed>.png
    manifest.json    counts per task and language plus filtering statistics
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .filtering import image_embedding, near_dedup, quality_filter, text_embedding, cosine
from .lexicon import LANGUAGES
from .scenes import SceneSpec, alt_text, random_scene, render_array
from .templates import TASKS, Example, make_example, supports

FORMAT_VERSION = 1


def dumps(obj) -> str:
    """Canonical JSON used for every file we write (stable bytes across runs)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class CorpusConfig:
    n_scenes: int = 1000
    seed: int = 0
    keep_fraction: float = 0.10
    noise_fraction: float = 0.5
    scene_size: int = 224
    image_resolution: int = 224
    embed_resolution: int = 112
    hamming_threshold: int = 4
    tasks: tuple[str, ...] = TASKS

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must be in (0, 1]")
        if not 0 <= self.noise_fraction <= 1:
            raise ValueError("noise_fraction must be in [0, 1]")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks {sorted(unknown)}")
        object.__setattr__(self, "tasks", tuple(self.tasks))


@dataclass
class Record:
    id: int
    seed: int
    task: str
    language: str
    input_text: str
    target_text: str
    image_ref: str | None

    def to_example(self, scene: SceneSpec | None, resolution: int) -> Example:
        return Example(self.input_text, self.target_text, self.task, self.language,
                       scene if self.image_ref is not None else None, resolution, self.seed)


@dataclass
class Corpus:
    scenes: dict[int, SceneSpec]
    records: list[Record]
    manifest: dict = field(default_factory=dict)

    def by_task(self) -> dict[str, list[Record]]:
        out: dict[str, list[Record]] = {}
        for r in self.records:
            out.setdefault(r.task, []).append(r)
        return out

    def example(self, record: Record, resolution: int) -> Example:
        return record.to_example(self.scenes.get(record.seed), resolution)


def scene_seed(corpus_seed: int, i: int) -> int:
    return int(corpus_seed) * 1_000_003 + i


def candidate_scenes(cfg: CorpusConfig) -> list[SceneSpec]:
    """Image/alt-text candidates; a ``noise_fraction`` share carry another scene's caption."""
    seeds = [scene_seed(cfg.seed, i) for i in range(cfg.n_scenes)]
    rng = np.random.default_rng([cfg.seed, 0xF117])
    noisy = rng.random(cfg.n_scenes) < cfg.noise_fraction
    offsets = rng.integers(1, max(cfg.n_scenes, 2), size=cfg.n_scenes)
    out = []
    for i, s in enumerate(seeds):
        cap = seeds[(i + offsets[i]) % cfg.n_scenes] if noisy[i] and cfg.n_scenes > 1 else None
        out.append(random_scene(s, size=cfg.scene_size, caption_seed=cap))
    return out


def pair_score(scene: SceneSpec, resolution: int) -> float:
    return cosine(image_embedding(render_array(scene, resolution)), text_embedding(alt_text(scene)))


def expand(scene: SceneSpec, tasks: Sequence[str], resolution: int) -> list[Example]:
    """One example per applicable task, each with its own seeded stream."""
    out = []
    for ti, task in enumerate(TASKS):
        if task in tasks and supports(scene, task):
            out.append(make_example(scene, task, np.random.default_rng([scene.seed, ti]), resolution))
    return out


def build_corpus(cfg: CorpusConfig, eval_images: Iterable = ()) -> Corpus:
    cands = candidate_scenes(cfg)
    scores = [pair_score(s, cfg.embed_resolution) for s in cands]
    kept = quality_filter(list(zip(cands, scores)), cfg.keep_fraction, score_of=lambda r: r[1])
    kept_scenes = [s for s, _ in kept]
    eval_images = list(eval_images)
    deduped = near_dedup(kept_scenes, eval_images, cfg.hamming_threshold,
                         image_of=lambda s: render_array(s, cfg.image_resolution))
    records: list[Record] = []
    for scene in deduped:
        for ex in expand(scene, cfg.tasks, scene.size):
            records.append(Record(len(records), scene.seed, ex.task, ex.language, ex.input_text,
                                  ex.target_text, None if ex.scene is None else f"images/{scene.seed}.png"))
    per_task = Counter(r.task for r in records)
    per_lang = Counter(r.language for r in records)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": {**asdict(cfg), "tasks": list(cfg.tasks)},
        "n_candidates": len(cands),
        "kept_after_quality": len(kept_scenes),
        "dedup_removed": len(kept_scenes) - len(deduped),
        "n_scenes": len(deduped),
        "n_records": len(records),
        "per_task": {t: per_task.get(t, 0) for t in TASKS},
        "per_language": {lang: per_lang.get(lang, 0) for lang in LANGUAGES},
        "mean_score_kept": float(np.mean([sc for _, sc in kept])) if kept else 0.0,
        "mean_score_all": float(np.mean(scores)),
    }
    return Corpus({s.seed: s for s in deduped}, records, manifest)


def write_corpus(corpus: Corpus, out_dir: str | Path, resolution: int | None = None) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    res = resolution or corpus.manifest.get("config", {}).get("image_resolution", 224)
    for seed in sorted(corpus.scenes):
        Image.fromarray(render_array(corpus.scenes[seed], res)).save(out / "images" / f"{seed}.png",
                                                                     optimize=False)
    with open(out / "scenes.jsonl", "w", encoding="utf-8") as f:
        for seed in sorted(corpus.scenes):
            f.write(dumps(corpus.scenes[seed].to_dict()) + "\n")
    with open(out / "records.jsonl", "w", encoding="utf-8") as f:
        for r in corpus.records:
            f.write(dumps(asdict(r)) + "\n")
    (out / "manifest.json").write_text(dumps(corpus.manifest) + "\n", encoding="utf-8")
    return out


def load_corpus(path: str | Path) -> Corpus:
    root = Path(path)
    if not (root / "records.jsonl").is_file():
        raise FileNotFoundError(f"no corpus at {root} (records.jsonl missing)")
    scenes = {}
    with open(root / "scenes.jsonl", encoding="utf-8") as f:
        for line in f:
            s = SceneSpec.from_dict(json.loads(line))
            scenes[s.seed] = s
    with open(root / "records.jsonl", encoding="utf-8") as f:
        records = [Record(**json.loads(line)) for line in f]
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    return Corpus(scenes, records, manifest)


def load_image(root: str | Path, image_ref: str) -> np.ndarray:
    """Stored raster as float values k/255."""
    return np.asarray(Image.open(Path(root) / image_ref).convert("RGB"), dtype=np.float64) / 255.0

"""Run a model over a task-homogeneous eval set and write metrics + predictions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..tasks.corpus import dumps
from .classify import top_k_hit, zero_shot_classify
from .datasets import EvalRecord
from .metrics import CiderConfig, cider_score, exact_match_accuracy, normalize_answer


class MixedTasks(ValueError):
    pass


@dataclass
class EvalResult:
    metrics: dict
    predictions: list[dict]

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mpath, ppath = out / "metrics.json", out / "predictions.jsonl"
        mpath.write_text(dumps(self.metrics) + "\n", encoding="utf-8")
        with open(ppath, "w", encoding="utf-8") as f:
            for row in self.predictions:
                f.write(dumps(row) + "\n")
        return mpath, ppath


def _image(model, rec: EvalRecord, image_root):
    img = np.asarray(rec.image(model.resolution, image_root).data)
    dtype = getattr(getattr(model, "cfg", None), "dtype", None)
    return img.astype(dtype) if dtype else img


def evaluate(model, records: Sequence[EvalRecord], task: str | None = None, mode: str = "greedy",
             beam: int = 1, seed: int = 0, class_names: Sequence[str] | None = None,
             cider: CiderConfig = CiderConfig(), image_root: str | Path | None = None,
             max_len: int | None = None) -> EvalResult:
    """Exact match for vqa, CIDEr-D for caption, top-1/top-5 for classify.

    ``model`` needs ``resolution``, ``generate_text`` and ``score_texts``.
    Classification ranks ``class_names`` (default: the sorted union of gold
    labels) with the zero-shot template carried by each record.
    """
    records = list(records)
    if not records:
        raise ValueError("empty eval set")
    tasks = sorted({r.task for r in records})
    if len(tasks) > 1:
        raise MixedTasks(f"eval set mixes tasks {tasks}; evaluate one task at a time")
    if task is not None and tasks[0] != task:
        raise MixedTasks(f"eval set holds {tasks[0]!r} records, asked for {task!r}")
    task = tasks[0]
    if mode == "greedy" or (mode == "beam" and beam == 1):
        mode, beam, decode_mode = "greedy", 1, "greedy"
    elif mode == "beam":
        decode_mode = f"beam{beam}"
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    base = {"task": task, "n_records": len(records), "seed": int(seed)}

    if task == "classify":
        names = sorted({g for r in records for g in r.gold}) if class_names is None else list(class_names)
        preds, hits1, hits5 = [], 0, 0
        for r in records:
            ranking = zero_shot_classify(model, _image(model, r, image_root), names, template=r.input_text)
            h1, h5 = top_k_hit(ranking, r.gold, 1), top_k_hit(ranking, r.gold, 5)
            hits1 += h1
            hits5 += h5
            preds.append({"id": r.id, "prediction": ranking[0][0], "gold": list(r.gold), "correct": bool(h1),
                          "top5": [n for n, _ in ranking[:5]]})
        n = len(records)
        metrics = {**base, "metric_name": "top1", "value": hits1 / n, "top1": hits1 / n, "top5": hits5 / n,
                   "decode_mode": "scored", "n_classes": len(names)}
        return EvalResult(metrics, preds)

    texts = [model.generate_text(_image(model, r, image_root), r.input_text, mode=mode, k=beam, max_len=max_len)
             for r in records]
    preds = [{"id": r.id, "prediction": t, "gold": list(r.gold),
              "correct": normalize_answer(t) in {normalize_answer(g) for g in r.gold}}
             for r, t in zip(records, texts)]
    if task == "vqa":
        metrics = {**base, "metric_name": "exact_match", "value": exact_match_accuracy(texts, records),
                   "decode_mode": decode_mode}
    else:
        raw = cider_score(texts, [r.gold for r in records], cider)
        metrics = {**base, "metric_name": "cider", "value": raw * cider.report_scale, "value_unscaled": raw,
                   "decode_mode": decode_mode}
    return EvalResult(metrics, preds)

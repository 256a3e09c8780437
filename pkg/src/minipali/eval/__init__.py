"""Exact-match VQA, CIDEr-D captioning and zero-shot classification."""

from .classify import ZS_TEMPLATE, top_k_hit, zero_shot_classify
from .datasets import (
    CLASSIFY_CLASSES,
    EVAL_TASKS,
    EvalRecord,
    caption_training_set,
    eval_images,
    load_eval_set,
    make_eval_set,
    write_eval_set,
)
from .evaluate import EvalResult, MixedTasks, evaluate
from .metrics import (
    CiderConfig,
    DegenerateCorpus,
    cider_per_candidate,
    cider_score,
    exact_match_accuracy,
    normalize_answer,
)
from .model import TextModel

__all__ = [
    "CLASSIFY_CLASSES", "CiderConfig", "DegenerateCorpus", "EVAL_TASKS", "EvalRecord", "EvalResult",
    "MixedTasks", "TextModel", "ZS_TEMPLATE", "caption_training_set", "cider_per_candidate", "cider_score",
    "eval_images", "evaluate", "exact_match_accuracy", "load_eval_set", "make_eval_set", "normalize_answer",
    "top_k_hit", "write_eval_set", "zero_shot_classify",
]

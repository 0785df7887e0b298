"""Evaluation metrics and the ``mllm-lab`` command line."""

from .metrics import IOU_THRESHOLD, EvalResult, eval_exact_match, eval_rec, iou, normalize_answer

__all__ = [
    "EvalResult",
    "IOU_THRESHOLD",
    "eval_exact_match",
    "eval_rec",
    "iou",
    "normalize_answer",
]

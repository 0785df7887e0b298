"""REC accuracy@0.5 and normalised exact match."""

from __future__ import annotations

from typing import Optional, Sequence, Union

from pydantic import BaseModel, Field, model_validator

from app.core.errors import BoxParseError, InputError
from app.core.logging import get_logger
from app.modules.dialog_data import ConversationRecord, parse_box

logger = get_logger(__name__)

IOU_THRESHOLD = 0.5

Reference = Union[ConversationRecord, str]


class EvalResult(BaseModel):
    metric_name: str
    value: float
    n_samples: int = Field(ge=0)
    per_sample: Optional[list[float]] = None

    @model_validator(mode="after")
    def _bounded(self) -> "EvalResult":
        if self.metric_name in ("rec_acc@0.5", "exact_match") and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"accuracy {self.value} outside [0, 1]")
        return self


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if not (ax1 < ax2 and ay1 < ay2) or not (bx1 < bx2 and by1 < by2):
        logger.warning("degenerate box in IoU: %s vs %s", tuple(a), tuple(b))
        return 0.0
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def _reference_text(ref: Reference) -> str:
    if isinstance(ref, ConversationRecord):
        turns = ref.assistant_turns
        if not turns:
            raise InputError(f"record {ref.id} has no assistant answer to score against")
        return turns[0].text
    return ref


def _check_lengths(references: Sequence[Reference], answers: Sequence[str]) -> None:
    if len(references) != len(answers):
        raise InputError(f"{len(references)} references but {len(answers)} answers")


def eval_rec(references: Sequence[Reference], answers: Sequence[str]) -> EvalResult:
    """Correct iff the answer's first box parses and IoU >= 0.5 with the reference box."""
    _check_lengths(references, answers)
    scores: list[float] = []
    for ref, ans in zip(references, answers):
        truth = parse_box(_reference_text(ref))
        try:
            pred = parse_box(ans)
        except BoxParseError:
            scores.append(0.0)
            continue
        scores.append(1.0 if iou(pred, truth) >= IOU_THRESHOLD else 0.0)
    value = sum(scores) / len(scores) if scores else 0.0
    return EvalResult(metric_name="rec_acc@0.5", value=value, n_samples=len(scores), per_sample=scores)


def normalize_answer(text: str) -> str:
    return " ".join(text.casefold().split())


def eval_exact_match(references: Sequence[Reference], answers: Sequence[str]) -> EvalResult:
    _check_lengths(references, answers)
    scores = [
        1.0 if ans.strip() and normalize_answer(ans) == normalize_answer(_reference_text(ref)) else 0.0
        for ref, ans in zip(references, answers)
    ]
    value = sum(scores) / len(scores) if scores else 0.0
    return EvalResult(metric_name="exact_match", value=value, n_samples=len(scores), per_sample=scores)

"""Task annotations -> ConversationRecord.

Each task family gets one fixed prompt from the versioned template file as the
question; the ground truth, textualised, is the answer. Converters are pure:
identical input gives a byte-identical record.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Sequence

from app.core.errors import RecordValidationError
from app.core.logging import get_logger
from app.modules.dialog_data.coords import (
    DEFAULT_PRECISION,
    textualize_box,
    textualize_point,
    textualize_polygon,
)
from app.modules.dialog_data.models import (
    BoxAnnotation,
    ConversationRecord,
    ImageSegment,
    Keypoint,
    Mark,
    MediaRef,
    RecordTags,
    Role,
    TextSegment,
    Turn,
)

logger = get_logger(__name__)

TEMPLATES_PATH = Path(__file__).with_name("templates.json")


@lru_cache(maxsize=4)
def load_templates(path: Optional[str] = None) -> dict[str, Any]:
    return json.loads(Path(path or TEMPLATES_PATH).read_text(encoding="utf-8"))


def render_template(name: str, **kwargs: str) -> str:
    return load_templates()[name].format(**kwargs)


def _record_id(domain: str, payload: Any) -> str:
    digest = hashlib.sha1(
        json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")
    ).hexdigest()
    return f"{domain}-{digest[:12]}"


def _image_size(image: MediaRef) -> tuple[int, int]:
    if image.width is None or image.height is None:
        raise RecordValidationError(f"media {image.path} needs width and height for coordinates")
    return image.width, image.height


def _user(text: str, *, with_image: bool) -> Turn:
    segs: list = [ImageSegment(image=0)] if with_image else []
    segs.append(TextSegment(text=text))
    return Turn(role=Role.USER, segments=segs)


def _assistant(text: str) -> Turn:
    return Turn(role=Role.ASSISTANT, segments=[TextSegment(text=text)])


def build_qa_record(
    domain: str,
    source: str,
    image: Optional[MediaRef],
    pairs: Sequence[tuple[str, str]],
    payload: Any,
) -> ConversationRecord:
    turns: list[Turn] = []
    for i, (q, a) in enumerate(pairs):
        # the image is attached to the first question only
        turns.append(_user(q, with_image=image is not None and i == 0))
        turns.append(_assistant(a))
    return ConversationRecord(
        id=_record_id(domain, payload),
        media=[image] if image is not None else [],
        turns=turns,
        tags=RecordTags(domain=domain, source=source),
    )


def detection_answer(
    annotations: Sequence[BoxAnnotation], img_w: int, img_h: int, precision: int = DEFAULT_PRECISION
) -> str:
    ordered = sorted(annotations, key=lambda a: (a.box[1], a.box[0], a.label))
    return " ".join(f"{a.label} {textualize_box(a.box, img_w, img_h, precision)};" for a in ordered)


def convert_detection(
    image: MediaRef,
    annotations: Sequence[BoxAnnotation],
    *,
    source: str = "unknown",
    precision: int = DEFAULT_PRECISION,
) -> Optional[ConversationRecord]:
    if not annotations:
        logger.warning("skipping detection sample %s: no annotations", image.path)
        return None
    w, h = _image_size(image)
    answer = detection_answer(annotations, w, h, precision)
    payload = {"image": image.path, "boxes": [(a.label, a.box) for a in annotations]}
    return build_qa_record("detection", source, image, [(render_template("detection"), answer)], payload)


def convert_grounding_pack(
    image: MediaRef,
    items: Sequence[tuple[str, Sequence[float]]],
    *,
    source: str = "unknown",
    precision: int = DEFAULT_PRECISION,
) -> ConversationRecord:
    """n referring expressions -> one record with n QA pairs."""
    if not items:
        raise RecordValidationError("grounding needs at least one expression")
    w, h = _image_size(image)
    pairs = []
    for expression, box in items:
        if not expression.strip():
            raise RecordValidationError("referring expression is empty")
        pairs.append(
            (render_template("grounding", expression=expression.strip()), textualize_box(box, w, h, precision))
        )
    payload = {"image": image.path, "refs": [(e, list(b)) for e, b in items]}
    return build_qa_record("grounding", source, image, pairs, payload)


def convert_grounding(
    image: MediaRef,
    expression: str,
    box: Sequence[float],
    *,
    source: str = "unknown",
    precision: int = DEFAULT_PRECISION,
) -> ConversationRecord:
    return convert_grounding_pack(image, [(expression, box)], source=source, precision=precision)


def convert_classification(image: MediaRef, label: str, *, source: str = "unknown") -> ConversationRecord:
    if not label.strip():
        raise RecordValidationError("classification label is empty")
    payload = {"image": image.path, "label": label}
    return build_qa_record("classification", source, image, [(render_template("classification"), label)], payload)


def convert_pose(
    image: MediaRef,
    keypoints: Sequence[Keypoint],
    *,
    source: str = "unknown",
    precision: int = DEFAULT_PRECISION,
) -> Optional[ConversationRecord]:
    if not keypoints:
        logger.warning("skipping pose sample %s: no keypoints", image.path)
        return None
    w, h = _image_size(image)
    answer = " ".join(
        f"({kp.name}: {textualize_point(kp.x, kp.y, w, h, precision)})" for kp in keypoints
    )
    payload = {"image": image.path, "kps": [(k.name, k.x, k.y) for k in keypoints]}
    return build_qa_record("pose", source, image, [(render_template("pose"), answer)], payload)


def convert_vqa_pack(
    image: MediaRef, qa_pairs: Sequence[tuple[str, str]], *, source: str = "unknown"
) -> ConversationRecord:
    if not qa_pairs:
        raise RecordValidationError("vqa needs at least one question")
    pairs = []
    for q, a in qa_pairs:
        if not q.strip() or not a.strip():
            raise RecordValidationError("vqa question and answer must be non-empty")
        pairs.append((render_template("vqa", question=q.strip()), a.strip()))
    payload = {"image": image.path, "qa": list(qa_pairs)}
    return build_qa_record("vqa", source, image, pairs, payload)


def convert_vqa(image: MediaRef, question: str, answer: str, *, source: str = "unknown") -> ConversationRecord:
    return convert_vqa_pack(image, [(question, answer)], source=source)


def convert_caption(image: MediaRef, caption: str, *, source: str = "unknown") -> ConversationRecord:
    if not caption.strip():
        raise RecordValidationError("caption is empty")
    payload = {"image": image.path, "caption": caption}
    return build_qa_record("caption", source, image, [(render_template("caption"), caption.strip())], payload)


def convert_text_dialog(
    exchanges: Sequence[tuple[str, str]],
    *,
    domain: str = "language",
    source: str = "unknown",
    system: Optional[str] = None,
) -> ConversationRecord:
    """Language-only instruction data: no media, user/assistant exchanges."""
    if not exchanges:
        raise RecordValidationError("dialog needs at least one exchange")
    record = build_qa_record(domain, source, None, exchanges, {"dialog": list(exchanges), "system": system})
    if system:
        record = record.model_copy(
            update={"turns": [Turn(role=Role.SYSTEM, segments=[TextSegment(text=system)])] + record.turns}
        )
    return record


def _mark_text(mark: Mark, w: int, h: int, precision: int) -> str:
    c = mark.coords
    if mark.shape == "point":
        coords = textualize_point(c[0], c[1], w, h, precision)
    elif mark.shape == "box":
        coords = textualize_box(c, w, h, precision)
    else:
        coords = textualize_polygon(list(zip(c[0::2], c[1::2])), w, h, precision)
    return f"Mark {mark.mark_id}: {mark.shape} {coords}"


def som_legend(marks: Sequence[Mark], w: int, h: int, precision: int = DEFAULT_PRECISION) -> str:
    return "; ".join(_mark_text(m, w, h, precision) for m in sorted(marks, key=lambda m: m.mark_id))


def convert_som(
    image: MediaRef,
    marks: Sequence[Mark],
    *,
    global_caption: Optional[str] = None,
    relations: Optional[str] = None,
    source: str = "unknown",
    precision: int = DEFAULT_PRECISION,
) -> ConversationRecord:
    """Marks described by language over the raw image; no pixels are touched.

    Region captions come from each mark's caption fragments; an optional
    global caption and relation analysis become further QA turns.
    """
    ids = [m.mark_id for m in marks]
    if len(set(ids)) != len(ids):
        raise RecordValidationError(f"duplicate mark ids in {ids}")
    if not marks:
        raise RecordValidationError("set-of-mark sample needs at least one mark")
    w, h = _image_size(image)

    legend = render_template("som_legend", legend=som_legend(marks, w, h, precision))
    regions = " ".join(
        f"Mark {m.mark_id}: {' '.join(f.strip() for f in m.caption_fragments if f.strip()) or 'unlabeled region'}."
        for m in sorted(marks, key=lambda m: m.mark_id)
    )
    pairs = [(f"{legend}\n{render_template('som_regions')}", regions)]
    if global_caption and global_caption.strip():
        pairs.append((render_template("som_global"), global_caption.strip()))
    if relations and relations.strip():
        pairs.append((render_template("som_relations"), relations.strip()))

    payload = {
        "image": image.path,
        "marks": [m.model_dump() for m in marks],
        "global": global_caption,
        "relations": relations,
    }
    return build_qa_record("som", source, image, pairs, payload)


def convert_task(row: dict[str, Any]) -> Optional[ConversationRecord]:
    """Dispatch one task-JSONL row (``{"task": ..., ...}``) to its converter."""
    task = row.get("task")
    source = row.get("source", "unknown")
    image = MediaRef.model_validate(row["image"]) if "image" in row else None
    if task != "dialog" and image is None:
        raise RecordValidationError(f"{task!r} rows need an image")
    if task == "detection":
        anns = [BoxAnnotation.model_validate(a) for a in row.get("annotations", [])]
        return convert_detection(image, anns, source=source)
    if task == "grounding":
        refs = row.get("refs") or [{"expression": row.get("expression", ""), "box": row.get("box")}]
        return convert_grounding_pack(image, [(r["expression"], r["box"]) for r in refs], source=source)
    if task == "classification":
        return convert_classification(image, row["label"], source=source)
    if task == "pose":
        kps = [Keypoint.model_validate(k) for k in row.get("keypoints", [])]
        return convert_pose(image, kps, source=source)
    if task == "vqa":
        qa = row.get("qa") or [[row["question"], row["answer"]]]
        return convert_vqa_pack(image, [(q, a) for q, a in qa], source=source)
    if task == "caption":
        return convert_caption(image, row["caption"], source=source)
    if task == "som":
        marks = [Mark.model_validate(m) for m in row.get("marks", [])]
        return convert_som(
            image, marks, global_caption=row.get("global_caption"), relations=row.get("relations"), source=source
        )
    if task == "dialog":
        return convert_text_dialog(
            [(q, a) for q, a in row["exchanges"]],
            domain=row.get("domain", "language"),
            source=source,
            system=row.get("system"),
        )
    raise RecordValidationError(f"unknown task {task!r}")

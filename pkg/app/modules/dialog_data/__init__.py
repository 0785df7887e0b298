"""Unified conversation records, task converters, coordinate text and tokenization."""

from .converters import (
    convert_caption,
    convert_classification,
    convert_detection,
    convert_grounding,
    convert_grounding_pack,
    convert_pose,
    convert_som,
    convert_task,
    convert_text_dialog,
    convert_vqa,
    convert_vqa_pack,
    build_qa_record,
    detection_answer,
    load_templates,
    render_template,
    som_legend,
)
from .coords import (
    DEFAULT_PRECISION,
    normalize_box,
    normalize_point,
    parse_box,
    parse_keypoints,
    parse_labeled_boxes,
    parse_point,
    parse_polygon,
    textualize_box,
    textualize_point,
    textualize_polygon,
)
from .io import check_record, dump_record, iter_records, read_records, write_records
from .models import (
    BoxAnnotation,
    ConversationRecord,
    ImageSegment,
    Keypoint,
    Mark,
    MediaRef,
    RecordTags,
    Role,
    Segment,
    TextSegment,
    Turn,
)
from .synth import synth_shapes_dataset
from .tokenizer import ByteTokenizer, MediaSlot, TokenizedSample, generation_prompt, tokenize_with_loss_mask

__all__ = [
    "BoxAnnotation",
    "ByteTokenizer",
    "ConversationRecord",
    "DEFAULT_PRECISION",
    "ImageSegment",
    "Keypoint",
    "Mark",
    "MediaRef",
    "MediaSlot",
    "RecordTags",
    "Role",
    "Segment",
    "TextSegment",
    "TokenizedSample",
    "Turn",
    "check_record",
    "convert_caption",
    "convert_classification",
    "convert_detection",
    "convert_grounding",
    "convert_grounding_pack",
    "convert_pose",
    "convert_som",
    "convert_task",
    "convert_text_dialog",
    "convert_vqa",
    "convert_vqa_pack",
    "build_qa_record",
    "detection_answer",
    "dump_record",
    "generation_prompt",
    "iter_records",
    "load_templates",
    "normalize_box",
    "normalize_point",
    "parse_box",
    "parse_keypoints",
    "parse_labeled_boxes",
    "parse_point",
    "parse_polygon",
    "read_records",
    "render_template",
    "som_legend",
    "synth_shapes_dataset",
    "textualize_box",
    "textualize_point",
    "textualize_polygon",
    "tokenize_with_loss_mask",
    "write_records",
]

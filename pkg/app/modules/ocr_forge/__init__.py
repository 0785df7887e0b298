"""OCR-intensive data pipeline: page records in, QA conversation records out."""

from .models import LayoutBlock, LayoutRegion, MergeParams, PageRecord, PageTruth, SynthParams, TextSpan, UnicodeVerdict
from .pipeline import (
    QA_MODES,
    PageResult,
    check_unicode,
    detect_columns,
    filter_spans,
    group_lines,
    layout_blocks,
    merge_splits,
    ordered_text,
    page_to_qa,
    reading_order,
    run_pipeline,
)
from .synth import render_page, synth_page

__all__ = [
    "LayoutBlock",
    "LayoutRegion",
    "MergeParams",
    "PageRecord",
    "PageResult",
    "PageTruth",
    "QA_MODES",
    "SynthParams",
    "TextSpan",
    "UnicodeVerdict",
    "check_unicode",
    "detect_columns",
    "filter_spans",
    "group_lines",
    "layout_blocks",
    "merge_splits",
    "ordered_text",
    "page_to_qa",
    "reading_order",
    "render_page",
    "run_pipeline",
    "synth_page",
]

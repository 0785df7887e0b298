"""Page cleanup: unicode checking, split merging, reading order, QA emission.

Only the two named cleanup methods exist here; further filters (language id,
de-duplication, ...) would slot in as extra passes over the kept spans.
"""

from __future__ import annotations

import unicodedata
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import groupby
from typing import Literal, Optional, Sequence, Union

import numpy as np

from app.core.errors import ConfigurationError
from app.core.logging import get_logger
from app.modules.dialog_data import (
    DEFAULT_PRECISION,
    ConversationRecord,
    MediaRef,
    build_qa_record,
    render_template,
    textualize_box,
)
from app.modules.ocr_forge.models import (
    Box,
    LayoutBlock,
    MergeParams,
    PageRecord,
    TextSpan,
    UnicodeVerdict,
)

logger = get_logger(__name__)

QAMode = Literal["full_text", "spotting", "layout"]
QA_MODES: tuple[str, ...] = ("full_text", "spotting", "layout")

DEFAULT_PARAMS = MergeParams()


@dataclass
class PageResult:
    spans: list[TextSpan]
    dropped: list[int] = field(default_factory=list)
    text: str = ""


def check_unicode(span: Union[TextSpan, str], min_printable_ratio: float = 0.95) -> UnicodeVerdict:
    """Keep iff the text is valid Unicode and enough codepoints are printable and assigned."""
    text = span.text if isinstance(span, TextSpan) else span
    if not text:
        return UnicodeVerdict(keep=False, ratio=0.0, reason="empty text")
    try:
        text.encode("utf-8")
    except UnicodeEncodeError:
        return UnicodeVerdict(keep=False, ratio=0.0, reason="invalid unicode (lone surrogate)")
    printable = sum(1 for c in text if c.isprintable() and unicodedata.category(c) != "Cn")
    ratio = printable / len(text)
    if ratio < min_printable_ratio:
        return UnicodeVerdict(
            keep=False, ratio=ratio, reason=f"printable ratio {ratio:.3f} < {min_printable_ratio}"
        )
    return UnicodeVerdict(keep=True, ratio=ratio)


def filter_spans(
    spans: Sequence[TextSpan], min_printable_ratio: float = 0.95
) -> tuple[list[TextSpan], list[int]]:
    kept: list[TextSpan] = []
    dropped: list[int] = []
    for i, span in enumerate(spans):
        verdict = check_unicode(span, min_printable_ratio)
        if verdict.keep:
            kept.append(span)
        else:
            logger.debug("dropping span %d: %s", i, verdict.reason)
            dropped.append(i)
    return kept, dropped


def _union(a: Box, b: Box) -> Box:
    return min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])


def group_lines(spans: Sequence[TextSpan], min_vertical_overlap: float = 0.5) -> list[list[TextSpan]]:
    """Cluster spans whose vertical overlap covers enough of the shorter height; lines come out top-first."""
    lines: list[list[TextSpan]] = []
    extents: list[tuple[float, float]] = []
    for span in sorted(spans, key=lambda s: (s.box[1], s.box[0])):
        y1, y2 = span.box[1], span.box[3]
        for i, (ly1, ly2) in enumerate(extents):
            overlap = min(ly2, y2) - max(ly1, y1)
            if overlap >= min_vertical_overlap * min(ly2 - ly1, y2 - y1):
                lines[i].append(span)
                extents[i] = (min(ly1, y1), max(ly2, y2))
                break
        else:
            lines.append([span])
            extents.append((y1, y2))
    return [sorted(line, key=lambda s: s.box[0]) for line in lines]


def _join(left: TextSpan, right: TextSpan) -> TextSpan:
    sep = "" if left.word_split or left.text.endswith("-") else " "
    return TextSpan(
        text=left.text + sep + right.text,
        box=_union(left.box, right.box),
        word_split=right.word_split,
    )


def merge_splits(spans: Sequence[TextSpan], params: MergeParams = DEFAULT_PARAMS) -> list[TextSpan]:
    """Merge horizontally adjacent fragments of the same line; the merged box is the union."""
    out: list[TextSpan] = []
    for line in group_lines(spans, params.min_vertical_overlap):
        limit = params.max_gap_char_widths * float(np.median([s.char_width for s in line]))
        cur = line[0]
        for nxt in line[1:]:
            if nxt.box[0] - cur.box[2] <= limit:
                cur = _join(cur, nxt)
            else:
                out.append(cur)
                cur = nxt
        out.append(cur)
    return out


def detect_columns(spans: Sequence[TextSpan], column_gap_char_widths: float = 3.0) -> list[tuple[float, float]]:
    """Merged x-extents; a gutter wider than the threshold starts a new column."""
    if not spans:
        return []
    gap = column_gap_char_widths * float(np.median([s.char_width for s in spans]))
    columns: list[list[float]] = []
    for x1, x2 in sorted((s.box[0], s.box[2]) for s in spans):
        if columns and x1 - columns[-1][1] <= gap:
            columns[-1][1] = max(columns[-1][1], x2)
        else:
            columns.append([x1, x2])
    return [(c[0], c[1]) for c in columns]


def reading_order(spans: Sequence[TextSpan], params: MergeParams = DEFAULT_PARAMS) -> list[TextSpan]:
    """Column-major, then top-to-bottom, then left-to-right; ``line_hint`` is the global line index."""
    columns = detect_columns(spans, params.column_gap_char_widths)
    if not columns:
        return []
    starts = [c[0] for c in columns]
    by_column: list[list[TextSpan]] = [[] for _ in columns]
    for span in spans:
        by_column[bisect_right(starts, span.box[0]) - 1].append(span)

    ordered: list[TextSpan] = []
    line_no = 0
    for col_spans in by_column:
        for line in group_lines(col_spans, params.min_vertical_overlap):
            ordered.extend(s.model_copy(update={"line_hint": line_no}) for s in line)
            line_no += 1
    return ordered


def ordered_text(spans: Sequence[TextSpan]) -> str:
    """Spans sharing a line joined by a space, lines by newlines."""
    lines: list[list[str]] = []
    prev: Optional[int] = None
    for span in spans:
        if lines and span.line_hint is not None and span.line_hint == prev:
            lines[-1].append(span.text)
        else:
            lines.append([span.text])
        prev = span.line_hint
    return "\n".join(" ".join(line) for line in lines)


def run_pipeline(page: PageRecord, params: MergeParams = DEFAULT_PARAMS) -> PageResult:
    kept, dropped = filter_spans(page.spans, params.min_printable_ratio)
    spans = reading_order(merge_splits(kept, params), params)
    return PageResult(spans=spans, dropped=dropped, text=ordered_text(spans))


def layout_blocks(
    spans: Sequence[TextSpan], page: PageRecord, params: MergeParams = DEFAULT_PARAMS
) -> list[LayoutBlock]:
    """Text blocks classified coarsely, plus the extractor's figure/table regions.

    ``spans`` must be in reading order. A block is a run of lines of one column
    separated by small vertical gaps. The first block is a title when it is a
    single line noticeably taller than the median line; a block right below a
    figure or table is its caption; everything else is a paragraph.
    """
    lines: list[tuple[Box, str]] = []
    for _, group in groupby(spans, key=lambda s: s.line_hint):
        group = list(group)
        box = group[0].box
        for s in group[1:]:
            box = _union(box, s.box)
        lines.append((box, " ".join(s.text for s in group)))

    blocks: list[LayoutBlock] = []
    n_lines: list[int] = []
    if lines:
        line_h = float(np.median([b[3] - b[1] for b, _ in lines]))
        max_gap = params.paragraph_gap_line_heights * line_h
        for box, text in lines:
            if blocks:
                prev = blocks[-1].box
                same_column = box[1] >= prev[1] and box[0] < prev[2] and prev[0] < box[2]
                if same_column and box[1] - prev[3] <= max_gap:
                    blocks[-1] = LayoutBlock("paragraph", _union(prev, box), blocks[-1].text + "\n" + text)
                    n_lines[-1] += 1
                    continue
            blocks.append(LayoutBlock("paragraph", box, text))
            n_lines.append(1)

        first = blocks[0]
        if n_lines[0] == 1 and first.box[3] - first.box[1] >= 1.2 * line_h:
            first.cls = "title"
        for block in blocks:
            if block.cls != "paragraph":
                continue
            for region in page.regions:
                r = region.box
                below = r[3] - 0.5 * line_h <= block.box[1] <= r[3] + 1.5 * line_h
                if below and block.box[0] < r[2] and r[0] < block.box[2]:
                    block.cls = "caption"
                    break

    blocks.extend(LayoutBlock(r.cls, r.box) for r in page.regions)
    return sorted(blocks, key=lambda b: (b.box[1], b.box[0]))


def page_to_qa(
    page: PageRecord,
    mode: QAMode = "full_text",
    params: MergeParams = DEFAULT_PARAMS,
    precision: int = DEFAULT_PRECISION,
) -> Optional[ConversationRecord]:
    """One QA record per page; pages with no surviving text are skipped with a warning."""
    if mode not in QA_MODES:
        raise ConfigurationError(f"unknown OCR mode {mode!r}; expected one of {QA_MODES}")
    result = run_pipeline(page, params)
    if not result.spans:
        logger.warning("skipping page %s: no text left after filtering", page.page_id)
        return None

    w, h = page.size
    if mode == "full_text":
        answer = result.text
    elif mode == "spotting":
        answer = " ".join(f"{s.text} {textualize_box(s.box, w, h, precision)};" for s in result.spans)
    else:
        answer = " ".join(
            f"{b.cls} {textualize_box(b.box, w, h, precision)};" for b in layout_blocks(result.spans, page, params)
        )

    media = MediaRef(path=page.image or f"pages/{page.page_id}.png", width=max(1, round(w)), height=max(1, round(h)))
    payload = {"page": page.page_id, "mode": mode, "answer": answer}
    return build_qa_record("ocr", page.source, media, [(render_template(f"ocr_{mode}"), answer)], payload)

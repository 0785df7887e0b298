"""Synthetic text pages with known-correct pipeline output."""

from __future__ import annotations

import random
from pathlib import Path
from typing import Optional

from PIL import Image, ImageDraw

from app.modules.ocr_forge.models import PageRecord, PageTruth, SynthParams, TextSpan

WORDS = (
    "the of and model image text page layout expert token vision language column "
    "figure table caption title paragraph region train data answer query result sparse "
    "router dense merge split order scan print line word mark point box grid"
).split()

CHAR_W = 6.0
SPAN_H = 10.0
LINE_PITCH = 16.0
MARGIN = 20.0
GUTTER = 5 * CHAR_W
MAX_WORDS = 6

# C0 controls are neither printable nor assigned-as-text
_CONTROL = [chr(c) for c in range(0x00, 0x20)]


def _split_line(
    rng: random.Random, text: str, x0: float, y1: float, y2: float, split_prob: float
) -> list[TextSpan]:
    cuts: list[tuple[int, bool]] = []
    start = 0
    words = text.split(" ")
    for i, word in enumerate(words):
        if len(word) >= 2 and rng.random() < split_prob:
            cuts.append((start + rng.randint(1, len(word) - 1), True))
        end = start + len(word)
        if i < len(words) - 1 and rng.random() < split_prob:
            cuts.append((end, False))
        start = end + 1

    spans: list[TextSpan] = []
    a = 0
    for idx, mid_word in cuts:
        # a word-boundary fragment's box covers its trailing space, so neighbours touch
        right = idx if mid_word else idx + 1
        spans.append(
            TextSpan(text=text[a:idx], box=(x0 + a * CHAR_W, y1, x0 + right * CHAR_W, y2), word_split=mid_word)
        )
        a = right
    spans.append(TextSpan(text=text[a:], box=(x0 + a * CHAR_W, y1, x0 + len(text) * CHAR_W, y2)))
    return spans


def synth_page(
    seed: int, params: Optional[SynthParams] = None, page_id: Optional[str] = None
) -> tuple[PageRecord, PageTruth]:
    """Deterministic per seed. Noise spans are control-character garbage; their indices are returned."""
    params = params or SynthParams()
    rng = random.Random(seed)

    columns = [
        [" ".join(rng.choice(WORDS) for _ in range(rng.randint(2, MAX_WORDS))) for _ in range(params.n_lines)]
        for _ in range(params.n_cols)
    ]
    col_w = max(len(line) for col in columns for line in col) * CHAR_W
    page_w = 2 * MARGIN + params.n_cols * col_w + (params.n_cols - 1) * GUTTER
    page_h = 2 * MARGIN + params.n_lines * LINE_PITCH

    spans: list[tuple[TextSpan, bool]] = []
    merged: list[TextSpan] = []
    for c, col in enumerate(columns):
        x0 = MARGIN + c * (col_w + GUTTER)
        for li, text in enumerate(col):
            y1 = MARGIN + li * LINE_PITCH
            y2 = y1 + SPAN_H
            merged.append(TextSpan(text=text, box=(x0, y1, x0 + len(text) * CHAR_W, y2), line_hint=len(merged)))
            spans.extend((s, False) for s in _split_line(rng, text, x0, y1, y2, params.split_prob))

    for _ in range(params.n_lines * params.n_cols):
        if rng.random() < params.noise_prob:
            n = rng.randint(3, 6)
            garbage = "".join(rng.choice(_CONTROL) for _ in range(n))
            x1 = rng.uniform(0, page_w - n * CHAR_W - 1)
            y1 = rng.uniform(0, page_h - SPAN_H - 1)
            spans.append((TextSpan(text=garbage, box=(x1, y1, x1 + n * CHAR_W, y1 + SPAN_H)), True))

    rng.shuffle(spans)
    page = PageRecord(
        page_id=page_id or f"synth-{seed:06d}",
        size=(page_w, page_h),
        spans=[s for s, _ in spans],
        source="synth-pages",
    )
    truth = PageTruth(
        text="\n".join(line for col in columns for line in col),
        merged=merged,
        noise_indices=[i for i, (_, noisy) in enumerate(spans) if noisy],
    )
    return page, truth


def render_page(page: PageRecord, path: Path) -> Path:
    """Draw the page's printable spans in the default bitmap font, white background."""
    img = Image.new("RGB", (max(1, round(page.size[0])), max(1, round(page.size[1]))), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    for span in page.spans:
        if span.text.isprintable():
            draw.text((span.box[0], span.box[1]), span.text, fill=(0, 0, 0))
    for region in page.regions:
        draw.rectangle(region.box, outline=(120, 120, 120))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return path

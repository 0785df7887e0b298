"""Page / span schema consumed by the OCR pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

Box = tuple[float, float, float, float]

LayoutClass = Literal["title", "paragraph", "figure", "table", "caption"]


class TextSpan(BaseModel):
    text: str = Field(min_length=1)
    box: Box
    line_hint: Optional[int] = None
    # the span ends mid-word; its right neighbour continues the same word
    word_split: bool = False

    @model_validator(mode="after")
    def _box_ordered(self) -> "TextSpan":
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"span box {self.box} must satisfy x1 < x2 and y1 < y2")
        return self

    @property
    def width(self) -> float:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> float:
        return self.box[3] - self.box[1]

    @property
    def char_width(self) -> float:
        return self.width / len(self.text)


class LayoutRegion(BaseModel):
    """Non-text region reported by the extractor (figures, tables)."""

    cls: Literal["figure", "table"]
    box: Box


class PageRecord(BaseModel):
    page_id: str
    size: tuple[float, float]
    spans: list[TextSpan] = Field(default_factory=list)
    regions: list[LayoutRegion] = Field(default_factory=list)
    image: Optional[str] = None
    source: str = "unknown"

    @model_validator(mode="after")
    def _within_page(self) -> "PageRecord":
        w, h = self.size
        if w <= 0 or h <= 0:
            raise ValueError(f"page {self.page_id}: size must be positive")
        for i, item in enumerate([*self.spans, *self.regions]):
            x1, y1, x2, y2 = item.box
            if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
                raise ValueError(f"page {self.page_id}: box #{i} {item.box} outside page {self.size}")
        return self


class MergeParams(BaseModel):
    """Thresholds of the cleanup pipeline; measured in the line's median character width."""

    min_printable_ratio: float = Field(default=0.95, ge=0, le=1)
    min_vertical_overlap: float = Field(default=0.5, gt=0, le=1)
    max_gap_char_widths: float = Field(default=0.6, ge=0)
    column_gap_char_widths: float = Field(default=3.0, gt=0)
    paragraph_gap_line_heights: float = Field(default=1.0, ge=0)


@dataclass(frozen=True)
class UnicodeVerdict:
    keep: bool
    ratio: float
    reason: Optional[str] = None


@dataclass
class LayoutBlock:
    cls: str
    box: Box
    text: str = ""


@dataclass
class PageTruth:
    """Known-correct pipeline output for a synthetic page."""

    text: str
    merged: list[TextSpan] = field(default_factory=list)
    noise_indices: list[int] = field(default_factory=list)


class SynthParams(BaseModel):
    n_lines: int = Field(default=12, ge=1)
    n_cols: int = Field(default=1, ge=1)
    split_prob: float = Field(default=0.0, ge=0, le=1)
    noise_prob: float = Field(default=0.0, ge=0, le=1)

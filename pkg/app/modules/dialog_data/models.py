"""Unified multi-turn multi-modal conversation schema.

Every training source is converted into ``ConversationRecord``; the JSONL file
of these records is the only training input format.
"""

from __future__ import annotations

from enum import Enum
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MediaRef(BaseModel):
    path: str
    width: int | None = Field(default=None, gt=0)
    height: int | None = Field(default=None, gt=0)


class TextSegment(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str


class ImageSegment(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image: int = Field(ge=0)


Segment = Union[ImageSegment, TextSegment]


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class Turn(BaseModel):
    role: Role
    segments: list[Segment] = Field(default_factory=list)

    @model_validator(mode="after")
    def _no_images_from_assistant(self) -> "Turn":
        if self.role is Role.ASSISTANT and any(isinstance(s, ImageSegment) for s in self.segments):
            raise ValueError("assistant turns cannot contain image segments")
        return self

    @property
    def text(self) -> str:
        return "".join(s.text for s in self.segments if isinstance(s, TextSegment))


class RecordTags(BaseModel):
    domain: str
    source: str


class ConversationRecord(BaseModel):
    id: str
    media: list[MediaRef] = Field(default_factory=list)
    turns: list[Turn]
    tags: RecordTags

    @model_validator(mode="after")
    def _check_structure(self) -> "ConversationRecord":
        turns = self.turns
        start = 1 if turns and turns[0].role is Role.SYSTEM else 0
        for i, turn in enumerate(turns[start:]):
            expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
            if turn.role is not expected:
                raise ValueError(
                    f"turn {start + i} is {turn.role.value}; turns must alternate user/assistant"
                )
        for turn in turns:
            for seg in turn.segments:
                if isinstance(seg, ImageSegment) and seg.image >= len(self.media):
                    raise ValueError(f"image segment {seg.image} has no media entry")
        return self

    @property
    def assistant_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.role is Role.ASSISTANT]


class BoxAnnotation(BaseModel):
    label: str
    box: tuple[float, float, float, float]

    @model_validator(mode="after")
    def _ordered(self) -> "BoxAnnotation":
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError("box must satisfy x1 < x2 and y1 < y2")
        return self


class Keypoint(BaseModel):
    name: str
    x: float
    y: float


class Mark(BaseModel):
    """A numbered visual prompt: point [x,y], box [x1,y1,x2,y2] or polygon [x1,y1,x2,y2,...]."""

    mark_id: int = Field(ge=1)
    shape: Literal["point", "box", "polygon"]
    coords: list[float]
    caption_fragments: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _coords_fit_shape(self) -> "Mark":
        n = len(self.coords)
        if self.shape == "point" and n != 2:
            raise ValueError("a point mark needs 2 coordinates")
        if self.shape == "box" and n != 4:
            raise ValueError("a box mark needs 4 coordinates")
        if self.shape == "polygon" and (n < 6 or n % 2):
            raise ValueError("a polygon mark needs at least 3 (x, y) vertices")
        return self

"""Pydantic models for the scale-pad-divide partition of one image."""

from __future__ import annotations

import json
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class SlotKind(str, Enum):
    REAL = "real"
    FULLY_PADDED = "fully_padded"


class SlotState(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: SlotKind
    row: int = Field(ge=0)
    col: int = Field(ge=0)


class PartitionPlan(BaseModel):
    """Geometry of one image: aspect-preserving scale, top-left pad, grid split."""

    model_config = ConfigDict(frozen=True)

    source_size: tuple[int, int]
    target_res: int = 448
    sub_res: int = 224
    grid: int
    resized_size: tuple[int, int]
    slots: list[SlotState]

    @model_validator(mode="after")
    def _check_geometry(self) -> "PartitionPlan":
        if self.grid * self.sub_res != self.target_res:
            raise ValueError("grid * sub_res must equal target_res")
        rw, rh = self.resized_size
        if max(rw, rh) != self.target_res or min(rw, rh) < 1:
            raise ValueError("resized image must touch the canvas on its long side")
        if len(self.slots) != self.grid * self.grid:
            raise ValueError("slot count must be grid**2")
        for i, slot in enumerate(self.slots):
            if (slot.row, slot.col) != divmod(i, self.grid):
                raise ValueError("slots must be listed in row-major order")
            # padding sits right and bottom, so a slot is empty iff it starts past the image
            empty = slot.col * self.sub_res >= rw or slot.row * self.sub_res >= rh
            if empty != (slot.kind is SlotKind.FULLY_PADDED):
                raise ValueError(f"slot ({slot.row}, {slot.col}) kind {slot.kind.value} contradicts the resized size")
        return self

    # Slot queries --------------------------------------------------------
    @property
    def real_slots(self) -> list[tuple[int, int]]:
        return [(s.row, s.col) for s in self.slots if s.kind is SlotKind.REAL]

    @property
    def padded_slots(self) -> list[tuple[int, int]]:
        return [(s.row, s.col) for s in self.slots if s.kind is SlotKind.FULLY_PADDED]

    @property
    def n_real(self) -> int:
        return len(self.real_slots)

    @property
    def n_padded(self) -> int:
        return len(self.padded_slots)

    def visual_sequence_length(self, tokens_per_view: int) -> int:
        """Length of the assembled sequence: global block, real blocks, one skip per padded slot."""
        return tokens_per_view * (1 + self.n_real) + self.n_padded

    # Wire format ---------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {
                "source": list(self.source_size),
                "target": self.target_res,
                "sub": self.sub_res,
                "grid": self.grid,
                "resized": list(self.resized_size),
                "padded_slots": [list(rc) for rc in self.padded_slots],
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        data = json.loads(text)
        grid = int(data["grid"])
        padded = {tuple(rc) for rc in data["padded_slots"]}
        slots = [
            SlotState(
                kind=SlotKind.FULLY_PADDED if divmod(i, grid) in padded else SlotKind.REAL,
                row=divmod(i, grid)[0],
                col=divmod(i, grid)[1],
            )
            for i in range(grid * grid)
        ]
        return cls(
            source_size=tuple(data["source"]),
            target_res=int(data["target"]),
            sub_res=int(data["sub"]),
            grid=grid,
            resized_size=tuple(data["resized"]),
            slots=slots,
        )

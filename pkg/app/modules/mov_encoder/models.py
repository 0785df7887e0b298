"""Configuration and output types for the two visual experts."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator


class MoVConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    d_attn: int = Field(default=64, gt=0)
    d_conv: int = Field(default=64, gt=0)
    patch: int = Field(default=32, gt=0)
    d_llm: int = Field(default=128, gt=0)
    sub_res: int = Field(default=224, gt=0)
    target_res: int = Field(default=448, gt=0)
    # None means "same as patch"; otherwise 4 * 2**m, resampled onto the attention grid
    conv_stride: int | None = None
    attn_layers: int = Field(default=2, ge=1)
    attn_heads: int = Field(default=4, ge=1)
    in_channels: int = 3

    @model_validator(mode="after")
    def _check(self) -> "MoVConfig":
        if self.sub_res % self.patch != 0:
            raise ValueError("sub_res must be divisible by patch")
        if self.target_res % self.sub_res != 0:
            raise ValueError("target_res must be divisible by sub_res")
        if self.d_attn % self.attn_heads != 0:
            raise ValueError("d_attn must be divisible by attn_heads")
        stride = self.effective_conv_stride
        if stride < 4 or stride & (stride - 1) or self.sub_res % stride != 0:
            raise ValueError("conv_stride must be 4 * 2**m and divide sub_res")
        if stride > self.patch or self.patch % stride != 0:
            raise ValueError("conv grid must resample onto the attention grid by an integer ratio")
        return self

    @property
    def effective_conv_stride(self) -> int:
        return self.conv_stride or self.patch

    @property
    def grid_side(self) -> int:
        return self.sub_res // self.patch

    @property
    def tokens_per_view(self) -> int:
        return self.grid_side**2

    @property
    def fused_channels(self) -> int:
        return self.d_attn + self.d_conv


MOV_PRESETS: dict[str, MoVConfig] = {
    # 128 canvas, 2x2 grid of 64px views, 4x4 tokens per view
    "mov-nano": MoVConfig(
        d_attn=64, d_conv=64, patch=16, d_llm=128, sub_res=64, target_res=128
    ),
    "mov-base": MoVConfig(
        d_attn=64, d_conv=64, patch=32, d_llm=128, sub_res=224, target_res=448
    ),
    # high-resolution variant: 672 canvas, 3x3 grid
    "mov-plus-2k": MoVConfig(
        d_attn=64, d_conv=64, patch=32, d_llm=128, sub_res=224, target_res=672
    ),
}


@dataclass
class EncoderOutput:
    """Square spatial grid of features, shape (B, g, g, channels)."""

    grid: torch.Tensor
    channels: int

    @property
    def side(self) -> int:
        return int(self.grid.shape[-2])

    def __post_init__(self) -> None:
        if self.grid.ndim != 4 or self.grid.shape[1] != self.grid.shape[2]:
            raise ValueError(f"encoder grid must be (B, g, g, C), got {tuple(self.grid.shape)}")
        if self.grid.shape[-1] != self.channels:
            raise ValueError("channel count does not match grid")

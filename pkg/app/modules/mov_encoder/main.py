"""Mixture of visual experts: an attention encoder and a conv encoder, fused by channel.

Both encoders are randomly initialised structural stand-ins and stay frozen;
only the projection into the language model's width is trained.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.errors import ConfigurationError, InputError, InternalError
from app.modules.mov_encoder.models import EncoderOutput, MoVConfig

PIXEL_SCALE = 1.0 / 255.0


def _as_batch(images: np.ndarray | torch.Tensor, cfg: MoVConfig) -> torch.Tensor:
    """(H,W,C) or (B,H,W,C) pixels -> (B,C,H,W) float in [0,1]."""
    t = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise InputError(f"expected (H,W,C) or (B,H,W,C) pixels, got {tuple(t.shape)}")
    if t.shape[1] != cfg.sub_res or t.shape[2] != cfg.sub_res:
        raise InputError(
            f"encoder expects {cfg.sub_res}x{cfg.sub_res} views, got {t.shape[2]}x{t.shape[1]}"
        )
    if t.shape[3] != cfg.in_channels:
        raise InputError(f"expected {cfg.in_channels} channels, got {t.shape[3]}")
    return t.to(torch.float32).permute(0, 3, 1, 2) * PIXEL_SCALE


class AttnEncoder(nn.Module):
    """Patch embedding followed by a small stack of self-attention blocks."""

    def __init__(self, cfg: MoVConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(cfg.in_channels, cfg.d_attn, kernel_size=cfg.patch, stride=cfg.patch)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.tokens_per_view, cfg.d_attn))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=cfg.d_attn,
                nhead=cfg.attn_heads,
                dim_feedforward=4 * cfg.d_attn,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            for _ in range(cfg.attn_layers)
        )
        self.norm = nn.LayerNorm(cfg.d_attn)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B = x.shape[0]
        g = self.cfg.grid_side
        h = self.patch_embed(x).flatten(2).transpose(1, 2) + self.pos_embed  # (B, g*g, d)
        for blk in self.blocks:
            h = blk(h)
        return self.norm(h).reshape(B, g, g, self.cfg.d_attn)


class _PointwiseBlock(nn.Module):
    """Channels-last LayerNorm + MLP with residual; position independent."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, H, W, C)
        return x + self.fc2(F.gelu(self.fc1(self.norm(x))))


class ConvEncoder(nn.Module):
    """Strided conv stages: a 4x4 stem then 2x2 downsamples, no padding anywhere.

    Non-overlapping kernels and pointwise blocks keep a constant input field
    constant at the output.
    """

    def __init__(self, cfg: MoVConfig) -> None:
        super().__init__()
        self.cfg = cfg
        d = cfg.d_conv
        self.stem = nn.Conv2d(cfg.in_channels, d, kernel_size=4, stride=4)
        n_down = int(math.log2(cfg.effective_conv_stride // 4))
        self.stages = nn.ModuleList(_PointwiseBlock(d) for _ in range(n_down + 1))
        self.downsamples = nn.ModuleList(nn.Conv2d(d, d, kernel_size=2, stride=2) for _ in range(n_down))
        self.norm = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x).permute(0, 2, 3, 1)
        for i, stage in enumerate(self.stages):
            h = stage(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        return self.norm(h)


def resample_grid(out: EncoderOutput, side: int) -> EncoderOutput:
    """Average-pool a grid down to ``side`` (integer ratios only)."""
    if out.side == side:
        return out
    if out.side < side or out.side % side != 0:
        raise InternalError(f"cannot resample a {out.side}-grid onto a {side}-grid")
    ratio = out.side // side
    pooled = F.avg_pool2d(out.grid.permute(0, 3, 1, 2), kernel_size=ratio).permute(0, 2, 3, 1)
    return EncoderOutput(grid=pooled, channels=out.channels)


def fuse(a: EncoderOutput, b: EncoderOutput) -> torch.Tensor:
    """Channel concatenation at matched grids; ``a`` channels come first."""
    if a.grid.shape[:3] != b.grid.shape[:3]:
        raise InternalError(
            f"encoder grids differ after resampling: {tuple(a.grid.shape)} vs {tuple(b.grid.shape)}"
        )
    return torch.cat([a.grid, b.grid], dim=-1)


class MixtureOfVisualExperts(nn.Module):
    def __init__(self, cfg: MoVConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.attn = AttnEncoder(cfg)
        self.conv = ConvEncoder(cfg)
        self.proj = nn.Linear(cfg.fused_channels, cfg.d_llm)
        nn.init.trunc_normal_(self.proj.weight, std=0.02)
        nn.init.zeros_(self.proj.bias)
        self.freeze_encoders()

    def freeze_encoders(self) -> None:
        for enc in (self.attn, self.conv):
            enc.requires_grad_(False)
            enc.eval()

    def train(self, mode: bool = True) -> "MixtureOfVisualExperts":
        super().train(mode)
        # frozen experts always run in inference mode
        self.attn.eval()
        self.conv.eval()
        return self

    def encoder_parameters(self) -> list[nn.Parameter]:
        return list(self.attn.parameters()) + list(self.conv.parameters())

    def encode_attn(self, images: np.ndarray | torch.Tensor) -> EncoderOutput:
        x = _as_batch(images, self.cfg).to(self.proj.weight.device, self.proj.weight.dtype)
        return EncoderOutput(grid=self.attn(x), channels=self.cfg.d_attn)

    def encode_conv(self, images: np.ndarray | torch.Tensor) -> EncoderOutput:
        x = _as_batch(images, self.cfg).to(self.proj.weight.device, self.proj.weight.dtype)
        out = EncoderOutput(grid=self.conv(x), channels=self.cfg.d_conv)
        return resample_grid(out, self.cfg.grid_side)

    def project(self, fused: torch.Tensor) -> torch.Tensor:
        """Row-major flatten of (B, g, g, C) then one linear map -> (B, g*g, d_llm)."""
        if fused.shape[-1] != self.cfg.fused_channels:
            raise ConfigurationError(
                f"fused width {fused.shape[-1]} does not match configured {self.cfg.fused_channels}"
            )
        B, g = fused.shape[0], fused.shape[1]
        return self.proj(fused.reshape(B, g * g, fused.shape[-1]))

    def forward(self, images: np.ndarray | torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            fused = fuse(self.encode_attn(images), self.encode_conv(images))
        return self.project(fused)

    def encode_views(
        self, global_image: torch.Tensor, subimages: dict[tuple[int, int], torch.Tensor]
    ) -> tuple[torch.Tensor, dict[tuple[int, int], torch.Tensor]]:
        """Encode the global view and the real sub-images in one batch."""
        keys = list(subimages)
        batch = torch.stack([global_image] + [subimages[k] for k in keys])
        tokens = self(batch)
        return tokens[0], {k: tokens[i + 1] for i, k in enumerate(keys)}

"""Scale-pad-divide partitioning of high-resolution inputs with skip tokens.

The resized image is anchored at the top-left of a zero canvas, so a wide or
tall image leaves whole slot rows or columns empty. Those slots are never
encoded; a single learnable skip embedding stands in for each of them when the
visual sequence is assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from app.core.errors import ConfigurationError, InputError
from app.modules.vision_partition.models import PartitionPlan, SlotKind, SlotState

PAD_VALUE = 0.0


def _round_half_up(num: int, den: int) -> int:
    # floor(num/den + 1/2) in exact integer arithmetic
    return (2 * num + den) // (2 * den)


def plan_partition(
    width: int, height: int, target_res: int = 448, sub_res: int = 224
) -> PartitionPlan:
    if sub_res <= 0 or target_res <= 0 or target_res % sub_res != 0:
        raise ConfigurationError(
            f"target_res={target_res} must be a positive multiple of sub_res={sub_res}"
        )
    if width < 1 or height < 1:
        raise InputError(f"image dimensions must be >= 1, got {width}x{height}")

    longest = max(width, height)
    rw = max(1, _round_half_up(width * target_res, longest))
    rh = max(1, _round_half_up(height * target_res, longest))
    grid = target_res // sub_res

    slots: list[SlotState] = []
    for row in range(grid):
        for col in range(grid):
            # slot rectangle [col*sub, (col+1)*sub) x [row*sub, (row+1)*sub) vs image [0, rw) x [0, rh)
            empty = col * sub_res >= rw or row * sub_res >= rh
            slots.append(
                SlotState(
                    kind=SlotKind.FULLY_PADDED if empty else SlotKind.REAL,
                    row=row,
                    col=col,
                )
            )

    return PartitionPlan(
        source_size=(width, height),
        target_res=target_res,
        sub_res=sub_res,
        grid=grid,
        resized_size=(rw, rh),
        slots=slots,
    )


@dataclass
class SplitResult:
    global_image: torch.Tensor
    real_subimages: dict[tuple[int, int], torch.Tensor] = field(default_factory=dict)


def _to_hwc_tensor(image: np.ndarray | torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(image) if not isinstance(image, torch.Tensor) else image)
    if t.ndim == 2:
        t = t.unsqueeze(-1)
    if t.ndim != 3:
        raise InputError(f"expected an HxWxC pixel array, got shape {tuple(t.shape)}")
    return t.to(torch.float32)


def _resize_hwc(t: torch.Tensor, width: int, height: int) -> torch.Tensor:
    if t.shape[0] == height and t.shape[1] == width:
        return t
    chw = t.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(chw, size=(height, width), mode="bilinear", align_corners=False, antialias=True)
    return out.squeeze(0).permute(1, 2, 0)


def pad_and_split(image: np.ndarray | torch.Tensor, plan: PartitionPlan) -> SplitResult:
    """Resize, pad to the square canvas and cut the real slots out of it."""
    t = _to_hwc_tensor(image)
    h, w = int(t.shape[0]), int(t.shape[1])
    if (w, h) != tuple(plan.source_size):
        raise InputError(f"image is {w}x{h} but the plan was made for {plan.source_size[0]}x{plan.source_size[1]}")

    rw, rh = plan.resized_size
    canvas = torch.full((plan.target_res, plan.target_res, t.shape[2]), PAD_VALUE, dtype=torch.float32)
    canvas[:rh, :rw] = _resize_hwc(t, rw, rh)

    sub = plan.sub_res
    result = SplitResult(global_image=_resize_hwc(canvas, sub, sub))
    for row, col in plan.real_slots:
        result.real_subimages[(row, col)] = canvas[row * sub : (row + 1) * sub, col * sub : (col + 1) * sub].clone()
    return result


def assemble_visual_sequence(
    global_tokens: torch.Tensor,
    sub_blocks: dict[tuple[int, int], torch.Tensor],
    plan: PartitionPlan,
    skip_embedding: torch.Tensor,
) -> torch.Tensor:
    """Global block first, then slots row-major; a padded slot contributes one skip token."""
    if global_tokens.ndim != 2:
        raise InputError("global block must be (S, d_model)")
    S, d = global_tokens.shape
    if skip_embedding.shape[-1] != d or skip_embedding.numel() != d:
        raise InputError(f"skip embedding must have width {d}")

    missing = set(plan.real_slots) - set(sub_blocks)
    if missing:
        raise InputError(f"no token block for real slots {sorted(missing)}")

    skip = skip_embedding.reshape(1, d)
    parts = [global_tokens]
    for slot in plan.slots:
        if slot.kind is SlotKind.FULLY_PADDED:
            parts.append(skip)
            continue
        block = sub_blocks[(slot.row, slot.col)]
        if tuple(block.shape) != (S, d):
            raise InputError(
                f"block for slot ({slot.row},{slot.col}) is {tuple(block.shape)}, expected {(S, d)}"
            )
        parts.append(block)
    return torch.cat(parts, dim=0)


def skip_savings(plan: PartitionPlan, tokens_per_view: int) -> dict[str, float]:
    """Token counts with and without skip tokens for one plan."""
    dense = tokens_per_view * (1 + plan.grid * plan.grid)
    skipped = plan.visual_sequence_length(tokens_per_view)
    return {
        "dense_length": dense,
        "skip_length": skipped,
        "reduction": 1.0 - skipped / dense,
    }

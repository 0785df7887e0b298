"""Linear warmup to the peak learning rate, then cosine decay to zero."""

from __future__ import annotations

import math

from app.core.errors import ConfigurationError


def warmup_steps(warmup_frac: float, steps_per_epoch: int) -> int:
    """round(warmup_frac * steps_per_epoch), at least one step."""
    if not 0 < warmup_frac < 1:
        raise ConfigurationError(f"warmup_frac must lie in (0, 1), got {warmup_frac}")
    if steps_per_epoch < 1:
        raise ConfigurationError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    return max(1, math.floor(warmup_frac * steps_per_epoch + 0.5))


def lr_at(step: int, total_steps: int, warmup: int, lr_peak: float) -> float:
    if lr_peak <= 0:
        raise ConfigurationError(f"lr_peak must be positive, got {lr_peak}")
    if not 0 <= warmup < total_steps:
        raise ConfigurationError(f"warmup steps {warmup} must lie in [0, total_steps={total_steps})")
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    if step < warmup:
        return lr_peak * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))

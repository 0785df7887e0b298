"""Top-k routing with a restrictable candidate set.

Gates are a softmax over the selected logits only. Ties go to the lower
expert index (stable descending sort).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import torch

from app.core.errors import ConfigurationError
from app.modules.moe_transformer.models import RoutingDecision


@dataclass
class RoutedTokens:
    indices: torch.Tensor  # (N, k_eff) long
    gates: torch.Tensor  # (N, k_eff)
    probs: torch.Tensor  # (N, E) softmax over the active set, zeros elsewhere


def active_mask(active_set: Iterable[int] | torch.Tensor | None, n_experts: int, device=None) -> torch.Tensor:
    if active_set is None:
        return torch.ones(n_experts, dtype=torch.bool, device=device)
    if isinstance(active_set, torch.Tensor) and active_set.dtype == torch.bool:
        mask = active_set.to(device)
    else:
        mask = torch.zeros(n_experts, dtype=torch.bool, device=device)
        for e in active_set:
            e = int(e)
            if not 0 <= e < n_experts:
                raise ConfigurationError(f"expert {e} outside [0, {n_experts})")
            mask[e] = True
    if not bool(mask.any()):
        raise ConfigurationError("active expert set is empty")
    return mask


def route_logits(logits: torch.Tensor, k: int, mask: torch.Tensor) -> RoutedTokens:
    """Route a batch of router logits (N, E)."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if not bool(mask.any()):
        raise ConfigurationError("active expert set is empty")
    k_eff = min(k, int(mask.sum()))
    masked = logits.masked_fill(~mask, float("-inf"))
    order = torch.sort(masked, dim=-1, descending=True, stable=True).indices
    indices = order[:, :k_eff]
    selected = torch.gather(masked, -1, indices)
    gates = torch.softmax(selected, dim=-1)
    probs = torch.softmax(masked, dim=-1)
    return RoutedTokens(indices=indices, gates=gates, probs=probs)


def route(
    hidden: torch.Tensor,
    router_weights: torch.Tensor,
    k: int,
    active_set: Iterable[int] | None = None,
    *,
    token_index: int = 0,
    layer: int = 0,
) -> RoutingDecision:
    """Route one hidden vector; ``router_weights`` is (E, d_model)."""
    n_experts = int(router_weights.shape[0])
    mask = active_mask(active_set, n_experts, device=router_weights.device)
    logits = (router_weights @ hidden.reshape(-1)).reshape(1, n_experts)
    routed = route_logits(logits, k, mask)
    return RoutingDecision(
        token_index=token_index,
        layer=layer,
        expert_indices=[int(i) for i in routed.indices[0].tolist()],
        gate_weights=[float(g) for g in routed.gates[0].tolist()],
    )

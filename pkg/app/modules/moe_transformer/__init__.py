"""Sparse-MoE decoder language model."""

from .main import (
    CausalSelfAttention,
    DecoderLayer,
    Expert,
    ForwardOutput,
    MoETransformer,
    RouterStats,
    RoutingObserver,
    load_balance_loss,
    moe_ffn,
)
from .models import MOE_PRESETS, FULL_SCALE_PRESETS, MoEConfig, RoutingDecision
from .router import RoutedTokens, active_mask, route, route_logits

__all__ = [
    "CausalSelfAttention",
    "DecoderLayer",
    "Expert",
    "ForwardOutput",
    "MOE_PRESETS",
    "MoEConfig",
    "MoETransformer",
    "FULL_SCALE_PRESETS",
    "RoutedTokens",
    "RouterStats",
    "RoutingDecision",
    "RoutingObserver",
    "active_mask",
    "load_balance_loss",
    "moe_ffn",
    "route",
    "route_logits",
]

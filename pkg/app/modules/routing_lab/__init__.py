"""Routing analyses: usage distributions, activated-expert sweeps, expert pruning."""

from .analysis import (
    PrunedModel,
    entropy_profile,
    evaluate,
    hash_seed,
    prune_experts,
    prune_sweep,
    sweep_active_experts,
    usage_distribution,
)
from .models import ALL_MODALITIES, LoggedDecision, PruneSpec, PruneSweepSummary, RoutingTrace, SweepRow, Tag
from .report import (
    format_tag,
    parse_tag,
    plot_sweep,
    plot_usage,
    read_csv,
    usage_rows,
    write_sweep_csv,
    write_usage_csv,
)
from .trace import TraceRecorder, trace_model

__all__ = [
    "ALL_MODALITIES",
    "LoggedDecision",
    "PruneSpec",
    "PruneSweepSummary",
    "PrunedModel",
    "RoutingTrace",
    "SweepRow",
    "Tag",
    "TraceRecorder",
    "entropy_profile",
    "evaluate",
    "format_tag",
    "hash_seed",
    "parse_tag",
    "plot_sweep",
    "plot_usage",
    "prune_experts",
    "prune_sweep",
    "read_csv",
    "sweep_active_experts",
    "trace_model",
    "usage_distribution",
    "usage_rows",
    "write_sweep_csv",
    "write_usage_csv",
]

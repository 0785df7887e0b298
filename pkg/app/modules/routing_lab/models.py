"""Routing trace and pruning spec."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from app.core.errors import ConfigurationError
from app.modules.moe_transformer import RoutingDecision

# (modality, domain); modality is "vision", "language" or the aggregate below
Tag = tuple[str, str]
ALL_MODALITIES = "vision&language"


@dataclass
class LoggedDecision:
    tag: Tag
    decision: RoutingDecision


@dataclass
class RoutingTrace:
    """Per-(layer, expert, tag) selection counts.

    Every (token, selected expert) slot counts once; ``gate_mass`` holds the
    matching sum of gate weights.
    """

    n_experts: int
    n_layers: int
    counts: Counter = field(default_factory=Counter)  # (layer, expert, tag) -> int
    total_slots: Counter = field(default_factory=Counter)  # (layer, tag) -> int
    gate_mass: Counter = field(default_factory=Counter)  # (layer, expert, tag) -> float
    tokens: Counter = field(default_factory=Counter)  # (layer, tag) -> int
    decisions: Optional[list[LoggedDecision]] = None

    def tags(self) -> list[Tag]:
        return sorted({t for (_, t) in self.total_slots})

    def merge(self, other: "RoutingTrace") -> "RoutingTrace":
        if (self.n_experts, self.n_layers) != (other.n_experts, other.n_layers):
            raise ConfigurationError("cannot merge traces of differently shaped models")
        decisions = None
        if self.decisions is not None or other.decisions is not None:
            decisions = (self.decisions or []) + (other.decisions or [])
        return RoutingTrace(
            n_experts=self.n_experts,
            n_layers=self.n_layers,
            counts=self.counts + other.counts,
            total_slots=self.total_slots + other.total_slots,
            gate_mass=self.gate_mass + other.gate_mass,
            tokens=self.tokens + other.tokens,
            decisions=decisions,
        )


@dataclass(frozen=True)
class PruneSpec:
    """Experts each layer keeps; layers not listed keep everything."""

    keep_per_layer: Mapping[int, frozenset[int]]

    def __post_init__(self) -> None:
        for layer, kept in self.keep_per_layer.items():
            if not kept:
                raise ConfigurationError(f"layer {layer} keeps no experts")

    @classmethod
    def keep_named(cls, keep: Mapping[int, set[int] | list[int]]) -> "PruneSpec":
        return cls({int(layer): frozenset(int(e) for e in experts) for layer, experts in keep.items()})

    @classmethod
    def keep_all(cls, n_experts: int, n_layers: int) -> "PruneSpec":
        return cls({layer: frozenset(range(n_experts)) for layer in range(n_layers)})

    @classmethod
    def random(cls, n: int, n_experts: int, n_layers: int, seed: int) -> "PruneSpec":
        """Keep ``n`` experts per layer, chosen independently per layer."""
        if not 1 <= n <= n_experts:
            raise ConfigurationError(f"keep count {n} outside [1, {n_experts}]")
        rng = np.random.default_rng(seed)
        return cls(
            {
                layer: frozenset(int(e) for e in rng.choice(n_experts, size=n, replace=False))
                for layer in range(n_layers)
            }
        )

    def active_sets(self, n_layers: int, n_experts: int) -> list[Optional[list[int]]]:
        out: list[Optional[list[int]]] = []
        for layer in self.keep_per_layer:
            if not 0 <= layer < n_layers:
                raise ConfigurationError(f"prune spec names layer {layer}; model has {n_layers}")
        for layer in range(n_layers):
            kept = self.keep_per_layer.get(layer)
            if kept is not None and any(not 0 <= e < n_experts for e in kept):
                raise ConfigurationError(f"layer {layer} keeps experts outside [0, {n_experts})")
            out.append(sorted(kept) if kept is not None else None)
        return out


@dataclass
class SweepRow:
    key: int
    run: int
    metric: float


@dataclass
class PruneSweepSummary:
    n: int
    values: list[float]
    mean: float
    variance: float

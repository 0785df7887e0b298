"""Expert-usage statistics, activated-expert sweeps and random expert pruning."""

from __future__ import annotations

import math
import statistics
from typing import Literal, Optional, Sequence

import numpy as np
import torch

from app.core.errors import ConfigurationError, QueryError
from app.core.logging import get_logger
from app.modules.bench.metrics import eval_exact_match, eval_rec
from app.modules.routing_lab.models import (
    ALL_MODALITIES,
    PruneSpec,
    PruneSweepSummary,
    RoutingTrace,
    SweepRow,
    Tag,
)
from app.modules.train_engine import RecordSample, masked_next_token_loss

logger = get_logger(__name__)

Metric = Literal["loss", "rec", "exact"]


def _bucket(trace: RoutingTrace, layer: int, tag: Tag, weighted: bool) -> tuple[np.ndarray, float]:
    modalities = ("vision", "language") if tag[0] == ALL_MODALITIES else (tag[0],)
    source = trace.gate_mass if weighted else trace.counts
    vec = np.zeros(trace.n_experts, dtype=np.float64)
    total = 0.0
    for m in modalities:
        t = (m, tag[1])
        for e in range(trace.n_experts):
            vec[e] += source.get((layer, e, t), 0)
        total += trace.tokens[(layer, t)] if weighted else trace.total_slots[(layer, t)]
    return vec, total


def usage_distribution(trace: RoutingTrace, layer: int, tag: Tag, *, weighted: bool = False) -> np.ndarray:
    """Fraction of routing slots each expert received at ``layer`` for ``tag``.

    ``weighted`` uses gate mass instead of counts; each token contributes a
    total mass of one.
    """
    vec, total = _bucket(trace, layer, tag, weighted)
    if total <= 0:
        raise QueryError(f"no routed tokens for layer {layer}, tag {tag}")
    return vec / total


def entropy_profile(trace: RoutingTrace, tag: Tag) -> list[float]:
    """Per-layer entropy (nats) of the usage distribution; 0 for one-hot, ln E for uniform."""
    out = []
    for layer in range(trace.n_layers):
        p = usage_distribution(trace, layer, tag)
        nz = p[p > 0]
        h = float(-(nz * np.log(nz)).sum())
        out.append(min(max(h, 0.0), math.log(trace.n_experts)))
    return out


class PrunedModel:
    """Routing-restricted view of a model; every weight is shared, nothing is copied."""

    def __init__(self, model, spec: PruneSpec) -> None:
        cfg = model.lm_cfg
        self.model = model
        self.spec = spec
        self.active_sets = spec.active_sets(cfg.n_layers, cfg.n_experts)

    def k_eff(self, k: int) -> list[int]:
        E = self.model.lm_cfg.n_experts
        return [min(k, len(s) if s is not None else E) for s in self.active_sets]

    def __call__(self, *args, **kwargs):
        kwargs.setdefault("active_sets", self.active_sets)
        return self.model(*args, **kwargs)

    def generate_answer(self, item: RecordSample, **kwargs):
        kwargs.setdefault("active_sets", self.active_sets)
        return self.model.generate_answer(item, **kwargs)

    def __getattr__(self, name: str):
        return getattr(self.model, name)


def prune_experts(model, spec: PruneSpec) -> PrunedModel:
    return PrunedModel(model, spec)


@torch.no_grad()
def evaluate(
    model,
    items: Sequence[RecordSample],
    *,
    k: Optional[int] = None,
    metric: Metric = "loss",
    batch_size: int = 8,
    max_new_tokens: int = 64,
) -> float:
    """Masked next-token loss (token-weighted mean) or a generation accuracy."""
    if not items:
        raise ConfigurationError("evaluation set is empty")
    model.eval()
    if metric == "loss":
        total, count = 0.0, 0.0
        for start in range(0, len(items), batch_size):
            batch = model.build_batch(items[start : start + batch_size])
            out = model(batch, k=k)
            n = float(batch.mask[:, 1:].sum())
            total += float(masked_next_token_loss(out.logits, batch.targets, batch.mask)) * n
            count += n
        return total / count if count else 0.0
    answers = [model.generate_answer(it, k=k, max_new_tokens=max_new_tokens)[0] for it in items]
    records = [it.record for it in items]
    scorer = eval_rec if metric == "rec" else eval_exact_match
    return scorer(records, answers).value


def sweep_active_experts(
    model,
    items: Sequence[RecordSample],
    k_values: Sequence[int],
    *,
    metric: Metric = "loss",
    batch_size: int = 8,
) -> dict[int, float]:
    """Evaluate the same weights at every k; nothing but k changes between runs."""
    E = model.lm_cfg.n_experts
    bad = [k for k in k_values if not 1 <= k <= E]
    if bad:
        raise ConfigurationError(f"k values {bad} outside [1, {E}]")
    results: dict[int, float] = {}
    for k in k_values:
        results[k] = evaluate(model, items, k=k, metric=metric, batch_size=batch_size)
        logger.info("k=%d %s=%.5f", k, metric, results[k])
    return results


def prune_sweep(
    model,
    items: Sequence[RecordSample],
    n_values: Sequence[int],
    *,
    runs: int = 3,
    seed: int = 0,
    k: Optional[int] = None,
    metric: Metric = "loss",
    batch_size: int = 8,
) -> tuple[list[SweepRow], list[PruneSweepSummary]]:
    """Keep ``n`` random experts per layer, ``runs`` independent draws per ``n``."""
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    cfg = model.lm_cfg
    rows: list[SweepRow] = []
    summaries: list[PruneSweepSummary] = []
    for n in n_values:
        values = []
        for run in range(runs):
            spec = PruneSpec.random(n, cfg.n_experts, cfg.n_layers, seed=hash_seed(seed, n, run))
            value = evaluate(prune_experts(model, spec), items, k=k, metric=metric, batch_size=batch_size)
            values.append(value)
            rows.append(SweepRow(key=n, run=run, metric=value))
        summaries.append(
            PruneSweepSummary(n=n, values=values, mean=statistics.fmean(values), variance=statistics.pvariance(values))
        )
        logger.info("keep=%d mean=%.5f var=%.3e", n, summaries[-1].mean, summaries[-1].variance)
    return rows, summaries


def hash_seed(*parts: int) -> int:
    """Stable derived seed (independent of PYTHONHASHSEED)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])

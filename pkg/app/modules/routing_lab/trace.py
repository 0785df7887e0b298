"""Routing observation: counts which experts serve which tokens."""

from __future__ import annotations

from typing import Optional, Sequence

import torch

from app.core.errors import InputError
from app.core.logging import get_logger
from app.modules.moe_transformer import RoutedTokens, RoutingDecision
from app.modules.routing_lab.models import LoggedDecision, RoutingTrace, Tag
from app.modules.train_engine import MODALITY_NAMES, Batch, RecordSample

logger = get_logger(__name__)


class TraceRecorder:
    """``RoutingObserver`` that accumulates a ``RoutingTrace``; reads tensors, never writes them.

    ``set_tags`` must be called before every forward pass with one tag per
    flattened (batch * time) position.
    """

    def __init__(self, n_experts: int, n_layers: int, *, log_decisions: bool = False) -> None:
        self.trace = RoutingTrace(
            n_experts=n_experts, n_layers=n_layers, decisions=[] if log_decisions else None
        )
        self._codes: Optional[torch.Tensor] = None
        self._tags: list[Tag] = []

    def set_tags(self, tags: Sequence[Tag]) -> None:
        vocab: dict[Tag, int] = {}
        codes = [vocab.setdefault(t, len(vocab)) for t in tags]
        self._tags = list(vocab)
        self._codes = torch.tensor(codes, dtype=torch.long)

    def set_batch(self, batch: Batch) -> None:
        B, T = batch.modality.shape
        self.set_tags(
            [(MODALITY_NAMES[int(m)], batch.domains[b]) for b in range(B) for m in batch.modality[b].tolist()]
        )

    def observe(self, layer: int, routed: RoutedTokens, positions: torch.Tensor) -> None:
        if self._codes is None:
            raise InputError("TraceRecorder.observe called before set_tags")
        E = self.trace.n_experts
        indices = routed.indices.detach().cpu()
        gates = routed.gates.detach().cpu().to(torch.float64)
        positions = positions.detach().cpu()
        k_eff = indices.shape[1]
        codes = self._codes[positions]
        for code, tag in enumerate(self._tags):
            sel = positions[codes == code]
            if sel.numel() == 0:
                continue
            idx = indices[sel].reshape(-1)
            counts = torch.bincount(idx, minlength=E)
            mass = torch.bincount(idx, weights=gates[sel].reshape(-1), minlength=E)
            for e in range(E):
                if counts[e]:
                    self.trace.counts[(layer, e, tag)] += int(counts[e])
                    self.trace.gate_mass[(layer, e, tag)] += float(mass[e])
            self.trace.total_slots[(layer, tag)] += int(sel.numel()) * k_eff
            self.trace.tokens[(layer, tag)] += int(sel.numel())
        if self.trace.decisions is not None:
            for p in positions.tolist():
                self.trace.decisions.append(
                    LoggedDecision(
                        tag=self._tags[int(self._codes[p])],
                        decision=RoutingDecision(
                            token_index=p,
                            layer=layer,
                            expert_indices=[int(i) for i in indices[p].tolist()],
                            gate_weights=[float(g) for g in routed.gates[p].detach().cpu().tolist()],
                        ),
                    )
                )


@torch.no_grad()
def trace_model(
    model,
    items: Sequence[RecordSample],
    *,
    k: Optional[int] = None,
    batch_size: int = 8,
    log_decisions: bool = False,
) -> RoutingTrace:
    """Run ``model`` (a ``MultimodalLM`` or a pruned view of one) over ``items`` and trace routing."""
    cfg = model.lm_cfg
    recorder = TraceRecorder(cfg.n_experts, cfg.n_layers, log_decisions=log_decisions)
    model.eval()
    for start in range(0, len(items), batch_size):
        batch = model.build_batch(items[start : start + batch_size])
        recorder.set_batch(batch)
        model(batch, k=k, observer=recorder)
    logger.info("traced %d samples over %d layers", len(items), cfg.n_layers)
    return recorder.trace

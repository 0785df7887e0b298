"""Decoder-only transformer whose every feed-forward sublayer is a sparse MoE block."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.errors import ConfigurationError, InputError
from app.modules.moe_transformer.models import MoEConfig, RoutingDecision
from app.modules.moe_transformer.router import RoutedTokens, active_mask, route_logits


class RoutingObserver(Protocol):
    """Receives routing results; must not modify them."""

    def observe(self, layer: int, routed: RoutedTokens, positions: torch.Tensor) -> None: ...


@dataclass
class RouterStats:
    """Per-layer router statistics over the valid tokens of a batch."""

    probs: torch.Tensor  # (N, E), differentiable
    top1: torch.Tensor  # (N,)


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    router_stats: list[RouterStats] = field(default_factory=list)


class Expert(nn.Module):
    def __init__(self, d_model: int, d_ff: int) -> None:
        super().__init__()
        self.w_in = nn.Linear(d_model, d_ff)
        self.w_out = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.w_out(F.gelu(self.w_in(x)))


def moe_ffn(hidden: torch.Tensor, decision: RoutingDecision, experts: Sequence[nn.Module]) -> torch.Tensor:
    """Gate-weighted sum over the decision's experts only."""
    out = torch.zeros_like(hidden)
    for e, g in zip(decision.expert_indices, decision.gate_weights):
        out = out + g * experts[e](hidden)
    return out


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: MoEConfig) -> None:
        super().__init__()
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.out = nn.Linear(cfg.d_model, cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=-1)
        hd = D // self.n_heads
        q, k, v = (t.view(B, T, self.n_heads, hd).transpose(1, 2) for t in (q, k, v))
        y = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.out(y.transpose(1, 2).reshape(B, T, D))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: MoEConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.attn_norm = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ffn_norm = nn.LayerNorm(cfg.d_model)
        self.router = nn.Linear(cfg.d_model, cfg.n_experts, bias=False)
        self.expert = nn.ModuleList(Expert(cfg.d_model, cfg.d_ff) for _ in range(cfg.n_experts))

    def sparse_ffn(self, h: torch.Tensor, routed: RoutedTokens) -> torch.Tensor:
        """h: (N, d). Only experts that received at least one token are evaluated."""
        out = torch.zeros_like(h)
        for e in torch.unique(routed.indices).tolist():
            token_idx, slot = torch.nonzero(routed.indices == e, as_tuple=True)
            gate = routed.gates[token_idx, slot].unsqueeze(-1)
            out = out.index_add(0, token_idx, gate * self.expert[e](h[token_idx]))
        return out

    def forward(
        self, x: torch.Tensor, k: int, mask: torch.Tensor
    ) -> tuple[torch.Tensor, RoutedTokens]:
        x = x + self.attn(self.attn_norm(x))
        B, T, D = x.shape
        h = self.ffn_norm(x).reshape(B * T, D)
        routed = route_logits(self.router(h), k, mask)
        x = x + self.sparse_ffn(h, routed).reshape(B, T, D)
        return x, routed


class MoETransformer(nn.Module):
    def __init__(self, cfg: MoEConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.tok_embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.max_seq_len, cfg.d_model))
        self.layer = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers))
        self.norm = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self._init_weights()

    def _init_weights(self) -> None:
        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Embedding)):
                nn.init.trunc_normal_(m.weight, std=0.02)
                if getattr(m, "bias", None) is not None:
                    nn.init.zeros_(m.bias)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_embed(ids)

    def _layer_masks(
        self, active_sets: Sequence[torch.Tensor | Sequence[int] | None] | None, device
    ) -> list[torch.Tensor]:
        E = self.cfg.n_experts
        if active_sets is None:
            return [active_mask(None, E, device) for _ in range(self.cfg.n_layers)]
        if len(active_sets) != self.cfg.n_layers:
            raise ConfigurationError(f"expected {self.cfg.n_layers} active sets, got {len(active_sets)}")
        return [active_mask(s, E, device) for s in active_sets]

    def forward(
        self,
        embeds: torch.Tensor,
        *,
        k: int | None = None,
        active_sets: Sequence[torch.Tensor | Sequence[int] | None] | None = None,
        valid: torch.Tensor | None = None,
        observer: RoutingObserver | None = None,
    ) -> ForwardOutput:
        """embeds: (B, T, d_model). ``valid`` (B, T) marks non-padding positions."""
        if embeds.ndim == 2:
            embeds = embeds.unsqueeze(0)
        B, T, _ = embeds.shape
        if T > self.cfg.max_seq_len:
            raise InputError(f"sequence length {T} exceeds max_seq_len {self.cfg.max_seq_len}")
        k = self.cfg.k_active if k is None else k
        if not 1 <= k <= self.cfg.n_experts:
            raise ConfigurationError(f"k={k} outside [1, {self.cfg.n_experts}]")
        masks = self._layer_masks(active_sets, embeds.device)
        flat_valid = (
            torch.ones(B * T, dtype=torch.bool, device=embeds.device)
            if valid is None
            else valid.reshape(-1).to(torch.bool)
        )
        positions = torch.nonzero(flat_valid, as_tuple=True)[0]

        x = embeds + self.pos_embed[:T]
        stats: list[RouterStats] = []
        for i, layer in enumerate(self.layer):
            x, routed = layer(x, k, masks[i])
            stats.append(RouterStats(probs=routed.probs[positions], top1=routed.indices[positions, 0]))
            if observer is not None:
                observer.observe(i, routed, positions)
        return ForwardOutput(logits=self.lm_head(self.norm(x)), router_stats=stats)

    @torch.no_grad()
    def generate(
        self,
        prefix: torch.Tensor,
        max_new_tokens: int,
        *,
        eos_id: int | None = None,
        k: int | None = None,
        active_sets=None,
    ) -> list[int]:
        """Greedy decoding from a (T, d_model) prefix embedding sequence."""
        seq = prefix.unsqueeze(0)
        out: list[int] = []
        for _ in range(max_new_tokens):
            if seq.shape[1] >= self.cfg.max_seq_len:
                break
            logits = self(seq, k=k, active_sets=active_sets).logits[0, -1]
            nxt = int(torch.argmax(logits))
            out.append(nxt)
            if eos_id is not None and nxt == eos_id:
                break
            emb = self.embed_tokens(torch.tensor([[nxt]], device=seq.device)).to(seq.dtype)
            seq = torch.cat([seq, emb], dim=1)
        return out


def load_balance_loss(stats: Sequence[RouterStats]) -> torch.Tensor:
    """E * sum_i f_i * P_i averaged over layers.

    f_i is the fraction of tokens whose top-1 expert is i, P_i the mean router
    probability of expert i.
    """
    if not stats:
        raise InputError("load balance loss needs at least one layer of router stats")
    losses = []
    for s in stats:
        n, E = s.probs.shape
        if n == 0:
            continue
        f = torch.bincount(s.top1, minlength=E).to(s.probs.dtype) / n
        P = s.probs.mean(dim=0)
        losses.append(E * torch.sum(f * P))
    if not losses:
        raise InputError("load balance loss needs at least one routed token")
    return torch.stack(losses).mean()

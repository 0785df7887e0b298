"""Sparse-MoE language model configuration, presets and routing records."""

from __future__ import annotations

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MoEConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_experts: int = Field(default=8, ge=1)
    k_active: int = Field(default=2, ge=1)
    d_model: int = Field(default=128, gt=0)
    d_ff: int = Field(default=256, gt=0)
    n_layers: int = Field(default=4, ge=1)
    n_heads: int = Field(default=4, ge=1)
    vocab_size: int = Field(default=1024, gt=0)
    aux_loss_weight: float = Field(default=0.0, ge=0.0)
    max_seq_len: int = Field(default=512, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "MoEConfig":
        if self.k_active > self.n_experts:
            raise ValueError("k_active must lie in [1, n_experts]")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        return self


class RoutingDecision(BaseModel):
    """Experts chosen for one token at one layer and their renormalised gates."""

    token_index: int = 0
    layer: int = 0
    expert_indices: list[int]
    gate_weights: list[float]

    @model_validator(mode="after")
    def _check(self) -> "RoutingDecision":
        if len(self.expert_indices) != len(self.gate_weights) or not self.expert_indices:
            raise ValueError("expert_indices and gate_weights must be non-empty and aligned")
        if len(set(self.expert_indices)) != len(self.expert_indices):
            raise ValueError("expert_indices must be distinct")
        if not math.isclose(sum(self.gate_weights), 1.0, abs_tol=1e-6):
            raise ValueError("gate_weights must sum to 1")
        return self


MOE_PRESETS: dict[str, MoEConfig] = {
    "moe-nano": MoEConfig(
        n_layers=4, d_model=128, n_heads=4, d_ff=256, n_experts=8, k_active=2, vocab_size=1024
    ),
    # dense stub: a single always-on expert per layer
    "tiny-nano": MoEConfig(
        n_layers=4, d_model=128, n_heads=4, d_ff=512, n_experts=1, k_active=1, vocab_size=1024
    ),
}

# Reference shapes of the full-size backbones. Never instantiated here.
FULL_SCALE_PRESETS: dict[str, MoEConfig] = {
    "tinyllama-1.1b": MoEConfig(
        n_layers=22, d_model=2048, n_heads=32, d_ff=5632, n_experts=1, k_active=1,
        vocab_size=32000, max_seq_len=4096,
    ),
    "internlm2-7b": MoEConfig(
        n_layers=32, d_model=4096, n_heads=32, d_ff=14336, n_experts=1, k_active=1,
        vocab_size=92544, max_seq_len=4096,
    ),
    "llama2-13b": MoEConfig(
        n_layers=40, d_model=5120, n_heads=40, d_ff=13824, n_experts=1, k_active=1,
        vocab_size=32000, max_seq_len=4096,
    ),
    "mixtral-8x7b": MoEConfig(
        n_layers=32, d_model=4096, n_heads=32, d_ff=14336, n_experts=8, k_active=2,
        vocab_size=32000, max_seq_len=4096,
    ),
}

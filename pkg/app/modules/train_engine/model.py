"""Multimodal LM: visual experts + skip embedding + sparse-MoE decoder.

Records are tokenized with the byte tokenizer; each image placeholder is
replaced by that image's assembled visual sequence. Every position carries a
modality tag so routing can be analysed per modality.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from app.core.config import settings
from app.core.errors import ConfigurationError, InputError
from app.core.logging import get_logger
from app.modules.dialog_data import (
    ByteTokenizer,
    ConversationRecord,
    TokenizedSample,
    generation_prompt,
    tokenize_with_loss_mask,
)
from app.modules.moe_transformer import MOE_PRESETS, MoEConfig, MoETransformer
from app.modules.moe_transformer.checkpoint import load_state, save_state
from app.modules.mov_encoder import MOV_PRESETS, MixtureOfVisualExperts, MoVConfig
from app.modules.mov_encoder.main import fuse
from app.modules.vision_partition import assemble_visual_sequence, pad_and_split, plan_partition

logger = get_logger(__name__)

LANGUAGE = 0
VISION = 1
MODALITY_NAMES = {LANGUAGE: "language", VISION: "vision"}
IGNORE = -100
LM_PREFIX = "lm."


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


@dataclass
class EmbeddedSample:
    embeds: torch.Tensor  # (T, d)
    targets: torch.Tensor  # (T,) token id, IGNORE on visual positions
    mask: torch.Tensor  # (T,) 1 where the position is a training target
    modality: torch.Tensor  # (T,)
    domain: str = ""


@dataclass
class Batch:
    embeds: torch.Tensor  # (B, T, d)
    targets: torch.Tensor  # (B, T)
    mask: torch.Tensor  # (B, T) float
    valid: torch.Tensor  # (B, T) bool
    modality: torch.Tensor  # (B, T)
    domains: list[str] = field(default_factory=list)


@dataclass
class RecordSample:
    """A record plus the directory its media paths are relative to."""

    record: ConversationRecord
    media_root: Path = Path(".")


def collate(samples: Sequence[EmbeddedSample]) -> Batch:
    if not samples:
        raise InputError("cannot collate an empty batch")
    T = max(s.embeds.shape[0] for s in samples)
    d = samples[0].embeds.shape[1]
    B = len(samples)
    ref = samples[0].embeds
    targets = torch.full((B, T), IGNORE, dtype=torch.long)
    mask = torch.zeros(B, T, dtype=ref.dtype)
    valid = torch.zeros(B, T, dtype=torch.bool)
    modality = torch.full((B, T), LANGUAGE, dtype=torch.long)
    rows = []
    for i, s in enumerate(samples):
        n = s.embeds.shape[0]
        pad = ref.new_zeros(T - n, d)
        rows.append(torch.cat([s.embeds, pad], dim=0))
        targets[i, :n] = s.targets
        mask[i, :n] = s.mask.to(ref.dtype)
        valid[i, :n] = True
        modality[i, :n] = s.modality
    embeds = torch.stack(rows)
    return Batch(embeds, targets, mask, valid, modality, [s.domain for s in samples])


def masked_next_token_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over masked target positions.

    Position t predicts token t+1; ``mask[t+1]`` decides whether that
    prediction counts. An all-zero mask gives exactly 0.
    """
    V = logits.shape[-1]
    pred = logits[:, :-1].reshape(-1, V)
    tgt = targets[:, 1:].reshape(-1)
    m = mask[:, 1:].reshape(-1).to(pred.dtype)
    denom = m.sum()
    if float(denom) == 0.0:
        return pred.sum() * 0.0
    ce = F.cross_entropy(pred, tgt.clamp_min(0), reduction="none")
    return (ce * m).sum() / denom


class FeatureCache:
    """Bounded LRU of frozen-encoder features keyed by image path.

    Shared by generate/eval worker threads, so every access holds the lock.
    A capacity of 0 stores nothing.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 0:
            raise ConfigurationError(f"feature cache capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._entries: OrderedDict[str, tuple] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[tuple]:
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                self._entries.move_to_end(key)
            return entry

    def put(self, key: str, entry: tuple) -> None:
        if self.capacity == 0:
            return
        with self._lock:
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def __contains__(self, key: object) -> bool:
        with self._lock:
            return key in self._entries

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class MultimodalLM(nn.Module):
    def __init__(
        self, lm_cfg: MoEConfig, vision_cfg: MoVConfig, *, feature_cache_size: Optional[int] = None
    ) -> None:
        super().__init__()
        if vision_cfg.d_llm != lm_cfg.d_model:
            raise ConfigurationError(
                f"visual projection width {vision_cfg.d_llm} does not match d_model {lm_cfg.d_model}"
            )
        self.lm_cfg = lm_cfg
        self.vision_cfg = vision_cfg
        self.tokenizer = ByteTokenizer(lm_cfg.vocab_size)
        self.vision = MixtureOfVisualExperts(vision_cfg)
        self.skip_embedding = nn.Parameter(torch.zeros(lm_cfg.d_model))
        nn.init.trunc_normal_(self.skip_embedding, std=0.02)
        self.lm = MoETransformer(lm_cfg)
        if feature_cache_size is None:
            feature_cache_size = settings.runtime.feature_cache_size
        self.feature_cache = FeatureCache(feature_cache_size)

    @classmethod
    def from_presets(
        cls, model_preset: str = "moe-nano", vision_preset: str = "mov-nano", **lm_overrides
    ) -> "MultimodalLM":
        if model_preset not in MOE_PRESETS:
            raise ConfigurationError(f"unknown model preset {model_preset!r}; choose from {sorted(MOE_PRESETS)}")
        if vision_preset not in MOV_PRESETS:
            raise ConfigurationError(f"unknown vision preset {vision_preset!r}; choose from {sorted(MOV_PRESETS)}")
        lm_cfg = MOE_PRESETS[model_preset]
        if lm_overrides:
            lm_cfg = MoEConfig.model_validate({**lm_cfg.model_dump(), **lm_overrides})
        return cls(lm_cfg, MOV_PRESETS[vision_preset])

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Disjoint groups: frozen visual encoders, the projection (incl. skip token), the LM."""
        return {
            "visual_encoders": self.vision.encoder_parameters(),
            "projection": list(self.vision.proj.parameters()) + [self.skip_embedding],
            "language_model": list(self.lm.parameters()),
        }

    def apply_freeze(self, visual_encoders: bool = True, projection: bool = False, language_model: bool = False) -> None:
        if not visual_encoders:
            raise ConfigurationError("the visual encoders are fixed feature extractors and cannot be trained")
        groups = self.parameter_groups()
        for p in groups["projection"]:
            p.requires_grad_(not projection)
        for p in groups["language_model"]:
            p.requires_grad_(not language_model)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    # -- checkpoint arrays --------------------------------------------------

    def array_state(self) -> dict[str, torch.Tensor]:
        """State keyed by array name: decoder entries drop ``lm.`` so experts read ``layer.{i}.expert.{j}.*``."""
        return {key.removeprefix(LM_PREFIX): value for key, value in self.state_dict().items()}

    def save_arrays(self, directory: Path) -> list[str]:
        return save_state(self.array_state(), directory)

    def load_arrays(self, directory: Path) -> None:
        state = load_state(self.array_state(), directory)
        self.load_state_dict({key: state[key.removeprefix(LM_PREFIX)] for key in self.state_dict()})

    # -- vision -----------------------------------------------------------

    def _fused_views(self, image: Optional[np.ndarray], cache_key: Optional[str]):
        """Frozen-encoder features of the global view and real slots; cached per image path.

        With no pixels given, a cache miss reads the image from ``cache_key``.
        """
        if cache_key is not None:
            cached = self.feature_cache.get(cache_key)
            if cached is not None:
                return cached
        if image is None:
            if cache_key is None:
                raise InputError("image slot has neither pixels nor a path")
            image = load_image(Path(cache_key))
        h, w = image.shape[:2]
        plan = plan_partition(w, h, self.vision_cfg.target_res, self.vision_cfg.sub_res)
        split = pad_and_split(image, plan)
        keys = list(split.real_subimages)
        batch = torch.stack([split.global_image] + [split.real_subimages[k] for k in keys])
        with torch.no_grad():
            fused = fuse(self.vision.encode_attn(batch), self.vision.encode_conv(batch))
        entry = (plan, keys, fused)
        if cache_key is not None:
            self.feature_cache.put(cache_key, entry)
        return entry

    def visual_tokens(self, image: Optional[np.ndarray], cache_key: Optional[str] = None) -> torch.Tensor:
        """(L, d_model) visual sequence: global block, then slots row-major with skip tokens."""
        plan, keys, fused = self._fused_views(image, cache_key)
        tokens = self.vision.project(fused)
        blocks = {k: tokens[i + 1] for i, k in enumerate(keys)}
        return assemble_visual_sequence(tokens[0], blocks, plan, self.skip_embedding)

    # -- text + vision ----------------------------------------------------

    def embed_tokenized(
        self,
        sample: TokenizedSample,
        images: Sequence[Optional[np.ndarray]],
        *,
        cache_keys: Optional[Sequence[Optional[str]]] = None,
        domain: str = "",
    ) -> EmbeddedSample:
        device = self.skip_embedding.device
        ids = torch.tensor(sample.ids, dtype=torch.long, device=device)
        text = self.lm.embed_tokens(ids)
        slot_at = {s.position: s.media_index for s in sample.media_slots}

        parts: list[torch.Tensor] = []
        targets: list[torch.Tensor] = []
        masks: list[torch.Tensor] = []
        modality: list[torch.Tensor] = []
        start = 0
        for pos in sorted(slot_at):
            parts.append(text[start:pos])
            targets.append(ids[start:pos])
            masks.append(torch.tensor(sample.mask[start:pos], dtype=torch.float32))
            modality.append(torch.full((pos - start,), LANGUAGE, dtype=torch.long))
            mi = slot_at[pos]
            if mi >= len(images):
                raise InputError(f"image slot {mi} has no loaded image")
            key = cache_keys[mi] if cache_keys is not None else None
            vis = self.visual_tokens(images[mi], key)
            L = vis.shape[0]
            parts.append(vis.to(text.dtype))
            targets.append(torch.full((L,), IGNORE, dtype=torch.long, device=device))
            masks.append(torch.zeros(L))
            modality.append(torch.full((L,), VISION, dtype=torch.long))
            start = pos + 1
        parts.append(text[start:])
        targets.append(ids[start:])
        masks.append(torch.tensor(sample.mask[start:], dtype=torch.float32))
        modality.append(torch.full((len(sample.ids) - start,), LANGUAGE, dtype=torch.long))

        embeds = torch.cat(parts, dim=0)
        if embeds.shape[0] > self.lm_cfg.max_seq_len:
            raise InputError(f"sample length {embeds.shape[0]} exceeds max_seq_len {self.lm_cfg.max_seq_len}")
        return EmbeddedSample(
            embeds=embeds,
            targets=torch.cat(targets).cpu(),
            mask=torch.cat(masks),
            modality=torch.cat(modality),
            domain=domain,
        )

    def embed_record(self, item: RecordSample) -> EmbeddedSample:
        record = item.record
        sample = tokenize_with_loss_mask(record, self.tokenizer)
        paths = [str(Path(item.media_root) / m.path) for m in record.media]
        images: list[Optional[np.ndarray]] = [None] * len(paths)
        return self.embed_tokenized(sample, images, cache_keys=paths, domain=record.tags.domain)

    def build_batch(self, items: Iterable[RecordSample]) -> Batch:
        return collate([self.embed_record(it) for it in items])

    @torch.no_grad()
    def generate_answer(
        self,
        item: RecordSample,
        *,
        assistant_index: int = 0,
        max_new_tokens: int = 128,
        k: Optional[int] = None,
        active_sets=None,
    ) -> tuple[str, str]:
        """Greedy answer for the n-th assistant turn; returns (generated, reference)."""
        record = item.record
        prompt, reference = generation_prompt(record, self.tokenizer, assistant_index)
        paths = [str(Path(item.media_root) / m.path) for m in record.media]
        images: list[Optional[np.ndarray]] = [None] * len(paths)
        embedded = self.embed_tokenized(prompt, images, cache_keys=paths, domain=record.tags.domain)
        ids = self.lm.generate(
            embedded.embeds, max_new_tokens, eos_id=self.tokenizer.EOT, k=k, active_sets=active_sets
        )
        if ids and ids[-1] == self.tokenizer.EOT:
            ids = ids[:-1]
        return self.tokenizer.decode(ids), reference

    def forward(self, batch: Batch, **kwargs):
        return self.lm(batch.embeds, valid=batch.valid, **kwargs)


def parameter_hash(params: Iterable[torch.Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()

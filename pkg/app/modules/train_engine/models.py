"""Training and data-mixing configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict


class FreezeConfig(BaseModel):
    visual_encoders: bool = True
    projection: bool = False
    language_model: bool = False


class TrainConfig(BaseSettings):
    """Flat ``key=value`` file, keys exactly the field names.

    Tuples and nested values are written as JSON, e.g. ``betas=[0.9,0.95]``.
    Only constructor kwargs and the given file are consulted, never the
    process environment.
    """

    model_config = SettingsConfigDict(extra="forbid", env_file_encoding="utf-8")

    lr_peak: float = Field(default=2e-5, gt=0)
    warmup_frac: float = Field(default=0.01, gt=0, lt=1)
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = Field(default=0.0, ge=0)
    batch_size: int = Field(default=8, ge=1)
    total_steps: int = Field(default=2000, ge=1)
    seed: int = 0
    freeze: FreezeConfig = Field(default_factory=FreezeConfig)
    grad_clip: float = Field(default=1.0, gt=0)
    aux_loss_weight: float = Field(default=0.0, ge=0)
    model_preset: str = "moe-nano"
    vision_preset: str = "mov-nano"
    checkpoint_every: int = Field(default=500, ge=1)
    log_every: int = Field(default=50, ge=1)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, dotenv_settings)

    @classmethod
    def from_file(cls, path: Path | str) -> "TrainConfig":
        return cls(_env_file=str(path))  # type: ignore[call-arg]

    def to_lines(self) -> str:
        """Inverse of ``from_file``."""
        out = []
        for name, value in self.model_dump(mode="json").items():
            if isinstance(value, (list, dict)):
                value = json.dumps(value, separators=(",", ":"))
            elif isinstance(value, bool):
                value = str(value).lower()
            out.append(f"{name}={value}")
        return "\n".join(out) + "\n"


class MixerSource(BaseModel):
    name: str
    path: str
    weight: Optional[float] = Field(default=None, gt=0)


class MixerConfig(BaseModel):
    sources: list[MixerSource] = Field(min_length=1)

    @model_validator(mode="after")
    def _check(self) -> "MixerConfig":
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate source names in {names}")
        given = [s.weight is not None for s in self.sources]
        if any(given) and not all(given):
            raise ValueError("either every source has a weight or none does")
        return self

    @property
    def weighted(self) -> bool:
        return self.sources[0].weight is not None


@dataclass(frozen=True)
class SourceInventoryEntry:
    category: str
    task: str
    samples: int
    datasets: tuple[str, ...]


# The full-scale one-stage mixture; documentation for mixer files.
ONE_STAGE_SOURCES: tuple[SourceInventoryEntry, ...] = (
    SourceInventoryEntry("language", "multi-turn dialog", 1_800_000, ("UltraChat", "Flan-mini", "OpenOrca")),
    SourceInventoryEntry("language", "math", 600_000, ("MetaMathQA", "MathInstruct")),
    SourceInventoryEntry("language", "coding", 80_000, ("WizardCoder",)),
    SourceInventoryEntry("vision", "detection", 4_900_000, ("V3Det", "OpenImages", "LVIS", "COCO", "Objects365")),
    SourceInventoryEntry("vision", "human pose", 300_000, ("UniPose", "COCO-Pose")),
    SourceInventoryEntry("vision", "classification", 1_000_000, ("ImageNet-1K",)),
    SourceInventoryEntry(
        "vision", "grounding", 1_000_000, ("Visual Genome", "RefCOCO", "RefCOCO+", "RefCOCOg", "Flickr30k")
    ),
    SourceInventoryEntry(
        "vision-language",
        "vqa",
        700_000,
        (
            "VQAv2", "OK-VQA", "GQA", "Visual Genome", "CLEVR", "ChartQA", "DeepForm", "DocVQA", "DVQA",
            "InfographicsVQA", "KleisterCharity", "VisualMRC", "WikiTableQuestions", "TextVQA", "TabFact",
        ),
    ),
    SourceInventoryEntry("vision-language", "caption", 500_000, ("MSCOCO", "ShareGPT4V", "LAION-GPT4V")),
    SourceInventoryEntry("vision-language", "visual instruction", 400_000, ("LLaVA", "LVIS-Instruct4V", "LLaVAR")),
    SourceInventoryEntry("ocr", "full text", 3_000_000, ("arXiv", "Common Crawl")),
    SourceInventoryEntry(
        "ocr", "layout and spotting", 1_000_000, ("DocBank", "M6Doc", "PubLayNet", "DocLayNet", "ICDAR", "CTW1500")
    ),
    SourceInventoryEntry("som", "natural images", 5_000, ("COCO", "LVIS", "Visual Genome")),
    SourceInventoryEntry("som", "gui agent", 1_000, ("SeeClick",)),
    SourceInventoryEntry("som", "ocr-related", 2_000, ("TotalText", "CTW1500", "IC13", "IC15")),
    SourceInventoryEntry("som", "documents", 1_000, ("M6Doc", "DocLayNet", "PubLayNet")),
    SourceInventoryEntry("som", "multi-panel", 1_000, ("in-house",)),
)


@dataclass
class StepMetrics:
    step: int
    loss: float
    lr: float
    grad_norm: float
    aux_loss: float

    def as_row(self) -> dict[str, float | int]:
        return {
            "step": self.step,
            "loss": self.loss,
            "lr": self.lr,
            "grad_norm": self.grad_norm,
            "aux_loss": self.aux_loss,
        }

"""One-stage all-in-one training."""

from .mixture import MixtureStream, build_mixture
from .model import (
    IGNORE,
    LANGUAGE,
    MODALITY_NAMES,
    VISION,
    Batch,
    EmbeddedSample,
    FeatureCache,
    MultimodalLM,
    RecordSample,
    collate,
    load_image,
    masked_next_token_loss,
    parameter_hash,
)
from .models import (
    ONE_STAGE_SOURCES,
    FreezeConfig,
    MixerConfig,
    MixerSource,
    SourceInventoryEntry,
    StepMetrics,
    TrainConfig,
)
from .schedule import lr_at, warmup_steps
from .trainer import (
    METRICS_COLUMNS,
    TrainingResult,
    latest_checkpoint,
    load_checkpoint,
    load_record_samples,
    make_optimizer,
    make_schedule,
    run_training,
    save_checkpoint,
    seed_everything,
    train_step,
)

__all__ = [
    "Batch",
    "EmbeddedSample",
    "FeatureCache",
    "FreezeConfig",
    "IGNORE",
    "LANGUAGE",
    "METRICS_COLUMNS",
    "MODALITY_NAMES",
    "MixerConfig",
    "MixerSource",
    "MixtureStream",
    "MultimodalLM",
    "ONE_STAGE_SOURCES",
    "RecordSample",
    "SourceInventoryEntry",
    "StepMetrics",
    "TrainConfig",
    "TrainingResult",
    "VISION",
    "build_mixture",
    "collate",
    "latest_checkpoint",
    "load_checkpoint",
    "load_image",
    "load_record_samples",
    "lr_at",
    "make_optimizer",
    "make_schedule",
    "masked_next_token_loss",
    "parameter_hash",
    "run_training",
    "save_checkpoint",
    "seed_everything",
    "train_step",
    "warmup_steps",
]

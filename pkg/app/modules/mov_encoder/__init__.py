from .main import (
    AttnEncoder,
    ConvEncoder,
    MixtureOfVisualExperts,
    fuse,
    resample_grid,
)
from .models import MOV_PRESETS, EncoderOutput, MoVConfig

__all__ = [
    "AttnEncoder",
    "ConvEncoder",
    "EncoderOutput",
    "MOV_PRESETS",
    "MixtureOfVisualExperts",
    "MoVConfig",
    "fuse",
    "resample_grid",
]

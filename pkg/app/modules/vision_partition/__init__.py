"""High-resolution partitioning with skip tokens."""

from .main import (
    PAD_VALUE,
    SplitResult,
    assemble_visual_sequence,
    pad_and_split,
    plan_partition,
    skip_savings,
)
from .models import PartitionPlan, SlotKind, SlotState

__all__ = [
    "PAD_VALUE",
    "PartitionPlan",
    "SlotKind",
    "SlotState",
    "SplitResult",
    "assemble_visual_sequence",
    "pad_and_split",
    "plan_partition",
    "skip_savings",
]

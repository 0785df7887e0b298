"""Checkpoint directory format: one ``.npy`` per named parameter plus ``config.json``.

Parameter names follow the module tree, so language-model experts are
addressable as ``layer.{i}.expert.{j}.*``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
import torch.nn as nn

from app.core.errors import ConfigurationError
from app.core.logging import get_logger

logger = get_logger(__name__)

PARAMS_DIR = "params"
CONFIG_FILE = "config.json"


def save_state(state: Mapping[str, torch.Tensor], directory: Path, *, prefix: str = "") -> list[str]:
    """Write every tensor of ``state`` as ``directory/params/<prefix><name>.npy``."""
    params_dir = Path(directory) / PARAMS_DIR
    params_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for name, tensor in state.items():
        full = f"{prefix}{name}"
        np.save(params_dir / f"{full}.npy", tensor.detach().cpu().numpy(), allow_pickle=False)
        names.append(full)
    return names


def load_state(
    reference: Mapping[str, torch.Tensor], directory: Path, *, prefix: str = ""
) -> dict[str, torch.Tensor]:
    """Read one array per key of ``reference``, checking shapes and casting to its dtypes."""
    params_dir = Path(directory) / PARAMS_DIR
    state: dict[str, torch.Tensor] = {}
    for name, current in reference.items():
        path = params_dir / f"{prefix}{name}.npy"
        if not path.exists():
            raise ConfigurationError(f"checkpoint {directory} has no array for {prefix}{name}")
        arr = np.load(path, allow_pickle=False)
        if tuple(arr.shape) != tuple(current.shape):
            raise ConfigurationError(
                f"shape mismatch for {prefix}{name}: {arr.shape} vs {tuple(current.shape)}"
            )
        state[name] = torch.from_numpy(arr).to(current.dtype)
    return state


def save_arrays(module: nn.Module, directory: Path, *, prefix: str = "") -> list[str]:
    """Write every state entry of ``module`` under ``directory/params``."""
    return save_state(module.state_dict(), directory, prefix=prefix)


def load_arrays(module: nn.Module, directory: Path, *, prefix: str = "") -> None:
    module.load_state_dict(load_state(module.state_dict(), directory, prefix=prefix))


def write_config(directory: Path, payload: Mapping[str, Any]) -> None:
    Path(directory).mkdir(parents=True, exist_ok=True)
    (Path(directory) / CONFIG_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def read_config(directory: Path) -> dict[str, Any]:
    path = Path(directory) / CONFIG_FILE
    if not path.exists():
        raise ConfigurationError(f"no {CONFIG_FILE} in {directory}")
    return json.loads(path.read_text(encoding="utf-8"))


def expert_parameter_names(directory: Path, layer: int, expert: int) -> list[str]:
    """Names of the arrays that belong to one expert in a saved checkpoint."""
    prefix = f"layer.{layer}.expert.{expert}."
    return sorted(p.stem for p in (Path(directory) / PARAMS_DIR).glob(f"{prefix}*.npy"))

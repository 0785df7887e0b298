"""One-stage training: every parameter except the visual encoders is optimised."""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from app.core.config import settings
from app.core.errors import ConfigurationError, TrainingDivergedError
from app.core.logging import get_logger, run_logger
from app.modules.dialog_data import read_records
from app.modules.moe_transformer import load_balance_loss
from app.modules.moe_transformer.checkpoint import write_config
from app.modules.train_engine.mixture import MixtureStream, build_mixture
from app.modules.train_engine.model import MultimodalLM, RecordSample, masked_next_token_loss
from app.modules.train_engine.models import MixerConfig, StepMetrics, TrainConfig
from app.modules.train_engine.schedule import lr_at, warmup_steps

logger = get_logger(__name__)

METRICS_FILE = "metrics.csv"
METRICS_COLUMNS = ("step", "loss", "lr", "grad_norm", "aux_loss")
CHECKPOINTS_DIR = "checkpoints"
OPTIMIZER_FILE = "optimizer.pt"
STATE_FILE = "trainer_state.json"


@dataclass
class Schedule:
    total_steps: int
    warmup: int
    lr_peak: float

    def lr(self, step: int) -> float:
        return lr_at(step, self.total_steps, self.warmup, self.lr_peak)


@dataclass
class TrainingResult:
    step: int
    run_dir: Path
    checkpoint: Optional[Path]
    last: Optional[StepMetrics]


def load_record_samples(path: Path) -> list[RecordSample]:
    """Records of one JSONL file; media paths resolve against the file's directory."""
    path = Path(path)
    return [RecordSample(r, path.parent) for r in read_records(path)]


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
    if settings.runtime.threads:
        torch.set_num_threads(settings.runtime.threads)


def make_schedule(config: TrainConfig, steps_per_epoch: int) -> Schedule:
    warm = warmup_steps(config.warmup_frac, steps_per_epoch)
    if config.total_steps > 1:
        warm = min(warm, config.total_steps - 1)
    else:
        warm = 0
    return Schedule(config.total_steps, warm, config.lr_peak)


def make_optimizer(model: MultimodalLM, config: TrainConfig) -> torch.optim.Optimizer:
    params = model.trainable_parameters()
    if not params:
        raise ConfigurationError("every parameter is frozen; nothing to train")
    return torch.optim.AdamW(params, lr=config.lr_peak, betas=config.betas, weight_decay=config.weight_decay)


def _dump_diagnostics(path: Path, step: int, lr: float, loss: float, aux: float, batch_domains: Sequence[str], model) -> Path:
    payload = {
        "step": step,
        "lr": lr,
        "loss": loss,
        "aux_loss": aux,
        "domains": list(batch_domains),
        "param_norms": {
            name: float(p.detach().norm()) for name, p in model.named_parameters() if p.requires_grad
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def train_step(
    model: MultimodalLM,
    optimizer: torch.optim.Optimizer,
    items: Sequence[RecordSample],
    config: TrainConfig,
    *,
    step: int,
    lr: float,
    diagnostics_dir: Optional[Path] = None,
) -> StepMetrics:
    """One optimiser update on one batch.

    Loss is the masked next-token cross-entropy plus the weighted
    load-balancing term. A batch without any target position is a no-op.
    """
    for group in optimizer.param_groups:
        group["lr"] = lr
    model.train()
    batch = model.build_batch(items)
    out = model(batch)
    loss = masked_next_token_loss(out.logits, batch.targets, batch.mask)
    aux = load_balance_loss(out.router_stats)

    if float(batch.mask[:, 1:].sum()) == 0.0:
        logger.warning("batch at step %d has no target tokens; skipping update", step, extra={"step": step})
        return StepMetrics(step=step, loss=0.0, lr=lr, grad_norm=0.0, aux_loss=float(aux))

    total = loss + config.aux_loss_weight * aux
    if not torch.isfinite(total):
        diag = None
        if diagnostics_dir is not None:
            diag = _dump_diagnostics(
                Path(diagnostics_dir) / f"diagnostics-step{step:06d}.json",
                step, lr, float(loss), float(aux), batch.domains, model,
            )
        raise TrainingDivergedError(f"non-finite loss at step {step}", diagnostics_path=diag)

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), config.grad_clip)
    optimizer.step()
    return StepMetrics(step=step, loss=float(loss), lr=lr, grad_norm=float(grad_norm), aux_loss=float(aux))


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(
    directory: Path, model: MultimodalLM, optimizer: torch.optim.Optimizer, config: TrainConfig, *, step: int, position: int
) -> Path:
    directory = Path(directory)
    model.save_arrays(directory)
    write_config(
        directory,
        {
            "lm": model.lm_cfg.model_dump(),
            "vision": model.vision_cfg.model_dump(),
            "train": config.model_dump(mode="json"),
        },
    )
    torch.save(optimizer.state_dict(), directory / OPTIMIZER_FILE)
    (directory / STATE_FILE).write_text(json.dumps({"step": step, "position": position}), encoding="utf-8")
    logger.info("checkpoint written to %s", directory, extra={"step": step})
    return directory


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    root = Path(run_dir) / CHECKPOINTS_DIR
    if not root.exists():
        return None
    done = sorted(p for p in root.glob("step-*") if (p / STATE_FILE).exists())
    return done[-1] if done else None


def load_checkpoint(directory: Path, model: MultimodalLM, optimizer: Optional[torch.optim.Optimizer] = None) -> dict:
    directory = Path(directory)
    model.load_arrays(directory)
    if optimizer is not None and (directory / OPTIMIZER_FILE).exists():
        optimizer.load_state_dict(torch.load(directory / OPTIMIZER_FILE, weights_only=True))
    return json.loads((directory / STATE_FILE).read_text(encoding="utf-8"))


def _open_metrics(path: Path, resume_step: int):
    """Append mode for resumed runs; rows past the checkpoint are discarded."""
    rows: list[dict] = []
    if resume_step > 0 and path.exists():
        with path.open("r", encoding="utf-8", newline="") as f:
            rows = [r for r in csv.DictReader(f) if int(r["step"]) < resume_step]
    f = path.open("w", encoding="utf-8", newline="")
    writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    return f, writer


def run_training(
    config: TrainConfig,
    mixer: MixerConfig,
    model: Optional[MultimodalLM] = None,
    *,
    run_dir: Path,
    resume: bool = False,
    base_dir: Optional[Path] = None,
    stream: Optional[MixtureStream] = None,
) -> TrainingResult:
    """Train for ``config.total_steps`` updates; metrics get one CSV row per step.

    Checkpoints land in ``run_dir/checkpoints/step-NNNNNN``. With ``resume``
    the latest one restores weights, optimizer state and the data position,
    so the continuation is bit-identical to an uninterrupted run.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    log = run_logger(__name__, run_dir.name)
    seed_everything(config.seed, settings.runtime.deterministic)
    if model is None:
        model = MultimodalLM.from_presets(
            config.model_preset, config.vision_preset, aux_loss_weight=config.aux_loss_weight
        )
    model.apply_freeze(**config.freeze.model_dump())

    if stream is None:
        stream = build_mixture(mixer, config.seed, loader=load_record_samples, base_dir=base_dir)

    steps_per_epoch = max(1, math.ceil(len(stream) / config.batch_size))
    schedule = make_schedule(config, steps_per_epoch)
    optimizer = make_optimizer(model, config)

    step = 0
    if resume:
        ckpt = latest_checkpoint(run_dir)
        if ckpt is not None:
            state = load_checkpoint(ckpt, model, optimizer)
            step = int(state["step"])
            stream.seek(int(state["position"]))
            log.info("resumed from %s at step %d", ckpt, step, extra={"step": step})

    f, writer = _open_metrics(run_dir / METRICS_FILE, step)
    last: Optional[StepMetrics] = None
    last_ckpt: Optional[Path] = None
    try:
        while step < config.total_steps:
            items = [item for _, item in stream.take(config.batch_size)]
            last = train_step(
                model, optimizer, items, config, step=step, lr=schedule.lr(step), diagnostics_dir=run_dir
            )
            step += 1
            writer.writerow(last.as_row())
            if step % config.log_every == 0 or step == config.total_steps:
                f.flush()
                log.info(
                    "step %d loss %.4f lr %.3e grad %.3f", step, last.loss, last.lr, last.grad_norm,
                    extra={"step": step},
                )
            if step % config.checkpoint_every == 0 or step == config.total_steps:
                last_ckpt = save_checkpoint(
                    run_dir / CHECKPOINTS_DIR / f"step-{step:06d}",
                    model, optimizer, config, step=step, position=stream.position,
                )
    finally:
        f.close()
    return TrainingResult(step=step, run_dir=run_dir, checkpoint=last_ckpt, last=last)

"""Losses, multi-stage refinement, and the staged training procedure.

Training follows a three-phase schedule: the main phase runs until the
validation loss stops improving for ``patience_epochs`` epochs, then a
first fine-tune phase lowers the learning rate tenfold and doubles the
batch size, then a second fine-tune phase lowers the rate again with the
batch left unchanged. The best model is the one with the lowest
validation loss seen anywhere along the way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint, snapshot
from .data import DatasetSplit, STEM_NAMES, augment, sample_snippet
from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    ShapeError,
    TrainingAborted,
)
from .freeze import FreezePartition
from .model import Separator

PHASES = ("main", "finetune1", "finetune2", "done")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    initial_batch: int = 16
    iterations_per_epoch: int = 2000
    patience_epochs: int = 15
    finetune1_lr: float = 1e-5
    finetune2_lr: float = 1e-6
    identity_weight: float = 1.0
    use_identity_loss: bool = False
    stages: int = 1
    snippet_length: Optional[int] = None
    max_epochs: Optional[int] = None
    validation_snippets_per_track: int = 4

    def validate(self) -> None:
        for name in ("initial_lr", "finetune1_lr", "finetune2_lr"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.initial_batch < 1:
            raise ConfigurationError("initial_batch must be >= 1")
        if self.iterations_per_epoch < 1:
            raise ConfigurationError("iterations_per_epoch must be >= 1")
        if self.patience_epochs < 1:
            raise ConfigurationError("patience_epochs must be >= 1")
        if self.identity_weight < 0:
            raise ConfigurationError("identity_weight must be >= 0")
        if self.stages < 1:
            raise ConfigurationError("stages must be >= 1")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1 or omitted")
        if self.validation_snippets_per_track < 1:
            raise ConfigurationError("validation_snippets_per_track must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "initial_lr": self.initial_lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "initial_batch": self.initial_batch,
            "iterations_per_epoch": self.iterations_per_epoch,
            "patience_epochs": self.patience_epochs,
            "finetune1_lr": self.finetune1_lr,
            "finetune2_lr": self.finetune2_lr,
            "identity_weight": self.identity_weight,
            "use_identity_loss": self.use_identity_loss,
            "stages": self.stages,
            "snippet_length": self.snippet_length,
            "max_epochs": self.max_epochs,
            "validation_snippets_per_track": self.validation_snippets_per_track,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        cfg = cls(**known)
        cfg.validate()
        return cfg


# ----- losses ---------------------------------------------------------------------


def mse_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-source mean squared error over batch, channels and time, summed
    over sources."""
    if prediction.shape != target.shape or prediction.dim() != 4:
        raise ShapeError(
            f"prediction {tuple(prediction.shape)} and target {tuple(target.shape)} "
            "must both be [batch, sources, channels, time]"
        )
    return ((prediction - target) ** 2).mean(dim=(0, 2, 3)).sum()


def identity_loss(separator: Separator, clean_source: torch.Tensor,
                  domain_index: int) -> torch.Tensor:
    """Feed a clean source as input; penalize its own output channel
    deviating from it. Per-item mean over channels and time, summed over
    the batch."""
    if not 0 <= domain_index < separator.spec.num_sources:
        raise ContractError(
            f"domain index {domain_index} out of range for "
            f"{separator.spec.num_sources} sources"
        )
    out = separator(clean_source)[:, domain_index]
    return ((clean_source - out) ** 2).mean(dim=(1, 2)).sum()


def progressive_forward(separator: Separator, mix: torch.Tensor,
                        stages: int) -> list[torch.Tensor]:
    """Run the separator, then re-feed each source estimate through the
    same (parameter-shared) network, keeping its own output channel as the
    refined estimate. Returns one [batch, sources, channels, time] tensor
    per stage."""
    if stages < 1:
        raise ContractError(f"stages must be >= 1, got {stages}")
    outputs = [separator(mix)]
    num_sources = separator.spec.num_sources
    for _ in range(1, stages):
        prev = outputs[-1]
        refined = [separator(prev[:, i])[:, i] for i in range(num_sources)]
        outputs.append(torch.stack(refined, dim=1))
    return outputs


def progressive_loss(stage_outputs: list[torch.Tensor],
                     targets: torch.Tensor) -> torch.Tensor:
    """Sum of the separation loss over all stages; every stage is guided
    by the same clean sources."""
    total = stage_outputs[0].new_zeros(())
    for out in stage_outputs:
        total = total + mse_loss(out, targets)
    return total


def total_loss(separation_loss: torch.Tensor, identity_term: torch.Tensor,
               weight: float) -> torch.Tensor:
    if weight < 0:
        raise ContractError(f"identity weight must be >= 0, got {weight}")
    return separation_loss + weight * identity_term


# ----- schedule state machine ------------------------------------------------------


@dataclass
class TrainState:
    phase: str = "main"
    epochs_without_improvement: int = 0
    best_validation_loss: float = math.inf
    best_epoch: int = 0
    epoch: int = 0


class EarlyStoppingSchedule:
    """Phase machine: main -> finetune1 -> finetune2 -> done.

    Each phase ends after ``patience_epochs`` epochs without a new global
    best validation loss. The learning rate per phase is fixed; the batch
    size doubles once, entering the first fine-tune phase.
    """

    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        self.state = TrainState()

    @property
    def phase(self) -> str:
        return self.state.phase

    @property
    def learning_rate(self) -> float:
        return {
            "main": self.config.initial_lr,
            "finetune1": self.config.finetune1_lr,
            "finetune2": self.config.finetune2_lr,
            "done": self.config.finetune2_lr,
        }[self.state.phase]

    @property
    def batch_size(self) -> int:
        if self.state.phase == "main":
            return self.config.initial_batch
        return self.config.initial_batch * 2

    def observe(self, validation_loss: float) -> dict[str, Any]:
        """Record one epoch's validation loss; returns is_best/transition."""
        st = self.state
        if st.phase == "done":
            raise ContractError("schedule already finished")
        st.epoch += 1
        is_best = validation_loss < st.best_validation_loss
        transition = None
        if is_best:
            st.best_validation_loss = validation_loss
            st.best_epoch = st.epoch
            st.epochs_without_improvement = 0
        else:
            st.epochs_without_improvement += 1
            if st.epochs_without_improvement >= self.config.patience_epochs:
                transition = PHASES[PHASES.index(st.phase) + 1]
                st.phase = transition
                st.epochs_without_improvement = 0
        return {"epoch": st.epoch, "is_best": is_best, "transition": transition}


# ----- training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict]
    state: TrainState
    best_checkpoint: Checkpoint
    initial_checkpoint: Checkpoint
    best_path: Optional[Path] = None
    initial_path: Optional[Path] = None
    history_path: Optional[Path] = None


def _stack_batch(tracks, batch_size: int, length: int,
                 rng: np.random.Generator, augment_sources: bool
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    mixes, targets = [], []
    for _ in range(batch_size):
        track = tracks[int(rng.integers(0, len(tracks)))]
        snip = sample_snippet(track, length, rng)
        if augment_sources:
            stems, mix = augment(snip.stems, rng)
        else:
            stems, mix = snip.stems, snip.mixture
        mixes.append(mix)
        targets.append(np.stack([stems[k] for k in STEM_NAMES]))
    return (
        torch.from_numpy(np.stack(mixes).astype(np.float32, copy=False)),
        torch.from_numpy(np.stack(targets).astype(np.float32, copy=False)),
    )


def train(partition: FreezePartition, dataset: DatasetSplit, config: TrainConfig,
          data_seed: int = 0, out_dir: str | Path | None = None,
          validation_fn: Optional[Callable[[int], float]] = None,
          checkpoint_extra: Optional[dict[str, Any]] = None) -> TrainResult:
    """Run the full main/finetune1/finetune2 schedule on one separator.

    Only the partition's trainable groups enter the optimizer. History
    records one line per epoch; checkpoints are written at the start and
    at every new validation best when ``out_dir`` is given.
    ``validation_fn`` replaces the default validation-snippet MSE (used by
    schedule tests with stubbed losses).
    """
    config.validate()
    separator = partition.separator
    spec = separator.spec
    if not dataset.train or not dataset.validation:
        raise DataError("training needs non-empty train and validation splits")
    if spec.num_sources != len(STEM_NAMES):
        raise DataError(
            f"model predicts {spec.num_sources} sources, dataset provides {len(STEM_NAMES)}"
        )
    trainable = partition.trainable_parameters()
    if not trainable:
        raise ConfigurationError("partition has no trainable parameters")

    length = config.snippet_length or spec.input_length
    optimizer = torch.optim.Adam(
        trainable, lr=config.initial_lr, betas=(config.beta1, config.beta2)
    )
    schedule = EarlyStoppingSchedule(config)
    rng = np.random.default_rng(data_seed)
    val_rng = np.random.default_rng(data_seed + 0x5EED)

    # fixed validation snippets, drawn once, reused every epoch
    val_batches = []
    for track in dataset.validation:
        for _ in range(config.validation_snippets_per_track):
            snip = sample_snippet(track, length, val_rng)
            val_batches.append(
                (snip.mixture, np.stack([snip.stems[k] for k in STEM_NAMES]))
            )

    def default_validation(_epoch: int) -> float:
        separator.eval()
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(val_batches), 16):
                chunk = val_batches[start:start + 16]
                mix = torch.from_numpy(np.stack([c[0] for c in chunk]))
                tgt = torch.from_numpy(np.stack([c[1] for c in chunk]))
                per_item = ((separator(mix) - tgt) ** 2).mean(dim=(2, 3)).sum(dim=1)
                total += float(per_item.sum())
        separator.train()
        return total / len(val_batches)

    validate = validation_fn or default_validation

    out_path = Path(out_dir) if out_dir is not None else None
    initial = snapshot(separator, freeze=partition.spec, extra=checkpoint_extra)
    initial_path = best_path = history_path = None
    history_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        initial_path = save_checkpoint(out_path / "initial.ckpt", initial)
        history_path = out_path / "history.jsonl"
        history_fh = open(history_path, "w")

    history: list[dict] = []
    best = initial
    try:
        while schedule.phase != "done":
            epoch_lr = schedule.learning_rate
            epoch_batch = schedule.batch_size
            epoch_num = schedule.state.epoch + 1
            running = 0.0
            separator.train()
            for it in range(config.iterations_per_epoch):
                mix, targets = _stack_batch(
                    dataset.train, epoch_batch, length, rng, augment_sources=True
                )
                stage_outputs = progressive_forward(separator, mix, config.stages)
                loss = progressive_loss(stage_outputs, targets)
                if config.use_identity_loss:
                    idt = sum(
                        identity_loss(separator, targets[:, i], i)
                        for i in range(spec.num_sources)
                    )
                    loss = total_loss(loss, idt, config.identity_weight)
                if not torch.isfinite(loss):
                    raise TrainingAborted(
                        f"non-finite loss at epoch {epoch_num}, iteration {it + 1}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                running += float(loss.detach())

            val = float(validate(epoch_num))
            if not math.isfinite(val):
                raise TrainingAborted(f"non-finite validation loss at epoch {epoch_num}")
            outcome = schedule.observe(val)
            record = {
                "epoch": epoch_num,
                # the phase the epoch actually ran under, pre-transition
                "phase": _phase_before(schedule.phase, outcome["transition"]),
                "lr": epoch_lr,
                "batch": epoch_batch,
                "train_loss": running / config.iterations_per_epoch,
                "validation_loss": val,
                "is_best": outcome["is_best"],
                "transition": outcome["transition"],
            }
            history.append(record)
            if history_fh is not None:
                history_fh.write(json.dumps(record, sort_keys=True) + "\n")
                history_fh.flush()

            if outcome["is_best"]:
                best = snapshot(separator, freeze=partition.spec, extra=checkpoint_extra)
                if out_path is not None:
                    best_path = save_checkpoint(out_path / "best.ckpt", best)

            if outcome["transition"] in ("finetune1", "finetune2"):
                for g in optimizer.param_groups:
                    g["lr"] = schedule.learning_rate

            if config.max_epochs is not None and epoch_num >= config.max_epochs:
                break
    finally:
        if history_fh is not None:
            history_fh.close()

    return TrainResult(
        history=history,
        state=schedule.state,
        best_checkpoint=best,
        initial_checkpoint=initial,
        best_path=best_path,
        initial_path=initial_path,
        history_path=history_path,
    )


def _phase_before(current: str, transition: Optional[str]) -> str:
    if transition is None:
        return current
    return PHASES[PHASES.index(transition) - 1]

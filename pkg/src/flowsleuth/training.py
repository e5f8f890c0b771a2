"""Per-branch training: Adam, plateau LR schedule, checkpoints, logs.

The schedule is deliberately rigid. Learning rate starts at lr_init and is
multiplied by lr_factor exactly when the count of consecutive epochs
without a strict validation-accuracy improvement reaches patience_epochs;
the stagnation counter resets both on improvement and after every drop.
Training terminates once the rate falls below lr_floor, or at max_epochs.

Everything is deterministic from TrainConfig.seed: batch composition comes
from a dedicated RNG whose state is carried inside TrainState, so a run
that is checkpointed and resumed replays the identical batch stream.
"""

from __future__ import annotations

import copy
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpoint,
    EmptySplit,
    InvalidConfig,
    ShapeMismatch,
    VersionMismatch,
)
from .dataset import Label, Manifest
from .model import Aggregation, BackboneConfig, BranchModel, loss_and_grad, score_video
from .residual import InputKind, NormalizationSpec

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-4
    lr_factor: float = 0.1
    patience_epochs: int = 5
    lr_floor: float = 1e-6
    batch_size: int = 32
    max_epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.lr_factor < 1.0:
            raise InvalidConfig(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if not self.lr_floor < self.lr_init:
            raise InvalidConfig("lr_floor must be below lr_init")
        if self.patience_epochs < 1:
            raise InvalidConfig("patience_epochs must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("batch_size and max_epochs must be >= 1")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise InvalidConfig("adam betas must lie in [0, 1)")


@dataclass
class TrainState:
    """Everything the schedule and optimizer carry between epochs."""

    lr: float
    epoch: int = 0
    best_val_acc: float = float("-inf")
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    adam_t: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    best_params: dict[str, np.ndarray] | None = None
    rng_state: dict | None = None


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    train_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def append(self, rec: TrainRecord) -> None:
        self.records.append(rec)

    def lines(self) -> list[str]:
        out = ["# epoch\ttrain_loss\tval_acc\tlr"]
        for r in self.records:
            out.append(f"{r.epoch}\t{r.train_loss!r}\t{r.val_acc!r}\t{r.lr!r}")
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def parse(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            e, tl, va, lr = line.split("\t")
            log.append(TrainRecord(int(e), float(tl), float(va), float(lr)))
        return log

    @classmethod
    def load(cls, path: str | Path) -> "TrainLog":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: TrainState,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], TrainState]:
    """One bias-corrected Adam update, in place. Moments initialize to zero."""
    state.adam_t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.adam_t
    c2 = 1.0 - b2**state.adam_t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != param shape {p.shape}")
        m = state.adam_m.setdefault(name, np.zeros_like(p))
        v = state.adam_v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


def apply_plateau_rule(state: TrainState, val_acc: float, cfg: TrainConfig) -> tuple[bool, bool]:
    """Advance the schedule by one epoch's validation result.

    Returns (improved, terminate). Only a strict improvement counts; the
    drop fires exactly when the stagnation counter reaches patience.
    """
    if val_acc > state.best_val_acc:
        state.best_val_acc = val_acc
        state.epochs_since_improvement = 0
        return True, False
    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= cfg.patience_epochs:
        state.lr *= cfg.lr_factor
        state.epochs_since_improvement = 0
        if state.lr < cfg.lr_floor:
            return False, True
    return False, False


def validation_accuracy(model: BranchModel, entries_inputs, threshold: float = 0.5) -> float:
    """Video-level accuracy at the decision threshold.

    ``entries_inputs`` is a list of (label, list-of-EncodedInput) pairs,
    pre-encoded once since validation data never changes across epochs.
    """
    if not entries_inputs:
        raise EmptySplit("no scorable validation videos")
    hits = 0
    for label, inputs in entries_inputs:
        predicted_fake = score_video(model, inputs) >= threshold
        hits += int(predicted_fake == (label is Label.FAKE))
    return hits / len(entries_inputs)


def train_branch(
    model: BranchModel,
    train: Manifest,
    val: Manifest,
    cfg: TrainConfig,
    pipeline,
    state: TrainState | None = None,
    log: TrainLog | None = None,
) -> tuple[BranchModel, TrainLog]:
    """Run the full schedule; returns the best-validation model and the log.

    Pass the ``state``/``log`` recovered from a checkpoint to resume: the
    RNG state embedded in TrainState makes the continuation bit-identical
    to an uninterrupted run. The input ``model`` is updated in place and
    ends up holding the *last* parameters; the returned model holds the
    best ones (ties broken toward the earliest epoch).
    """
    cfg.validate()
    if len(train) == 0:
        raise EmptySplit("training split is empty")
    if len(val) == 0:
        raise EmptySplit("validation split is empty")

    examples, _ = pipeline.labeled_examples(train, model.modality)
    if not examples:
        raise EmptySplit("training split yields no usable examples")
    val_videos = pipeline.labeled_videos(val, model.modality)

    if state is None:
        state = TrainState(lr=cfg.lr_init)
    if log is None:
        log = TrainLog()
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state

    n = len(examples)
    while state.epoch < cfg.max_epochs:
        epoch = state.epoch + 1
        epoch_lr = state.lr
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            loss, grads = loss_and_grad(model, batch)
            adam_step(model.params, grads, state, cfg)
            loss_sum += loss * len(batch)
        train_loss = loss_sum / n
        val_acc = validation_accuracy(model, val_videos)
        improved, terminate = apply_plateau_rule(state, val_acc, cfg)
        if improved:
            state.best_params = copy.deepcopy(model.params)
            state.best_epoch = epoch
        state.epoch = epoch
        state.rng_state = rng.bit_generator.state
        log.append(TrainRecord(epoch=epoch, train_loss=train_loss, val_acc=val_acc, lr=epoch_lr))
        if terminate:
            break

    best_params = state.best_params if state.best_params is not None else model.params
    best = BranchModel(params=copy.deepcopy(best_params), config=model.config, modality=model.modality)
    return best, log


# --- checkpoints --------------------------------------------------------------


def _config_to_meta(cfg: BackboneConfig) -> dict:
    return {
        "input_size": cfg.input_size,
        "stages": [list(s) for s in cfg.stages],
        "head_hidden": cfg.head_hidden,
        "seed": cfg.seed,
        "aggregation": cfg.aggregation.value,
    }


def _config_from_meta(meta: dict) -> BackboneConfig:
    return BackboneConfig(
        input_size=int(meta["input_size"]),
        stages=tuple(tuple(int(x) for x in s) for s in meta["stages"]),
        head_hidden=int(meta["head_hidden"]),
        seed=int(meta["seed"]),
        aggregation=Aggregation(meta["aggregation"]),
    )


def save_checkpoint(
    model: BranchModel,
    state: TrainState,
    path: str | Path,
    norm: NormalizationSpec = NormalizationSpec(),
) -> None:
    """Value-exact container: params, optimizer moments, schedule, configs."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "modality": model.modality.value,
        "config": _config_to_meta(model.config),
        "norm": {"clip": norm.clip},
        "state": {
            "lr": state.lr,
            "epoch": state.epoch,
            "best_val_acc": state.best_val_acc,
            "best_epoch": state.best_epoch,
            "epochs_since_improvement": state.epochs_since_improvement,
            "adam_t": state.adam_t,
            "rng_state": state.rng_state,
            "has_best": state.best_params is not None,
        },
    }
    arrays = {"param/" + k: v for k, v in model.params.items()}
    arrays.update(("adam_m/" + k, v) for k, v in state.adam_m.items())
    arrays.update(("adam_v/" + k, v) for k, v in state.adam_v.items())
    if state.best_params is not None:
        arrays.update(("best/" + k, v) for k, v in state.best_params.items())
    # write via a handle so numpy cannot append its own .npz suffix
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[BranchModel, TrainState, NormalizationSpec]:
    path = Path(path)
    if not path.is_file():
        raise CorruptCheckpoint(f"checkpoint not found: {path}")
    try:
        with np.load(str(path), allow_pickle=False) as npz:
            if "meta" not in npz:
                raise CorruptCheckpoint(f"{path}: missing meta record")
            meta = json.loads(str(npz["meta"]))
            version = meta.get("format_version")
            if version != CHECKPOINT_FORMAT_VERSION:
                raise VersionMismatch(
                    f"{path}: format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
                )
            groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}, "best": {}}
            for key in npz.files:
                if "/" in key:
                    group, name = key.split("/", 1)
                    if group in groups:
                        groups[group][name] = npz[key]
    except (OSError, ValueError, zipfile.BadZipFile, json.JSONDecodeError, KeyError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if not groups["param"]:
        raise CorruptCheckpoint(f"{path}: no parameters stored")
    st = meta["state"]
    model = BranchModel(
        params=groups["param"],
        config=_config_from_meta(meta["config"]),
        modality=InputKind(meta["modality"]),
    )
    state = TrainState(
        lr=float(st["lr"]),
        epoch=int(st["epoch"]),
        best_val_acc=float(st["best_val_acc"]),
        best_epoch=int(st["best_epoch"]),
        epochs_since_improvement=int(st["epochs_since_improvement"]),
        adam_t=int(st["adam_t"]),
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        best_params=groups["best"] if st["has_best"] else None,
        rng_state=st["rng_state"],
    )
    norm = NormalizationSpec(clip=float(meta["norm"]["clip"]))
    return model, state, norm

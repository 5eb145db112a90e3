"""SGD with step learning-rate decay, mini-batching and checkpointing."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .dataio import fit_length
from .errors import DivergedLoss, EmptyDataset, EpochOutOfRange, InvalidSpec, MissingGrad
from .graph import SkeletonGraph
from .network import PBGCN
from .signals import SkeletonSequence, compute_signal
from .tensor import Tape, Tensor, softmax_cross_entropy

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_acc")


@dataclass
class TrainConfig:
    base_lr: float = 0.1
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (20, 50, 70)
    epochs: int = 80
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    # Stop once an epoch's mean training loss falls below this value.
    target_loss: float | None = None

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise InvalidSpec("decay_epochs must be strictly increasing")
        if any(e >= self.epochs or e < 0 for e in self.decay_epochs):
            raise InvalidSpec("decay_epochs must lie in [0, epochs)")
        if not self.base_lr >= 0:
            raise InvalidSpec("base_lr must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise InvalidSpec("decay_factor must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpec("epochs and batch_size must be positive")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {cfg.epochs})")
    steps = sum(1 for d in cfg.decay_epochs if d <= epoch)
    return cfg.base_lr * cfg.decay_factor**steps


def sgd_step(
    params: Mapping[str, Tensor],
    lr: float,
    momentum: float,
    weight_decay: float,
    velocity: dict[str, np.ndarray],
) -> None:
    """In-place momentum SGD: ``v = mu v + g + wd p; p -= lr v``."""
    for name, p in params.items():
        if p.grad is None:
            raise MissingGrad(f"parameter {name} has no gradient")
    for name, p in params.items():
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        v = velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        velocity[name] = v
        p.data = p.data - lr * v


class SGD:
    def __init__(self, params: Mapping[str, Tensor], momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        sgd_step(self.params, lr, self.momentum, self.weight_decay, self.velocity)


@dataclass
class FeatureSet:
    """Stacked model inputs: ``x`` [N, C, T, V, M], ``mask`` [N, M], ``labels`` [N]."""

    x: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    signal: str

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        return FeatureSet(self.x[idx], self.mask[idx], self.labels[idx], self.signal)


def build_feature_set(
    sequences: Sequence[SkeletonSequence],
    signal: str,
    reference_joints: Sequence[int],
    frames: int,
    max_bodies: int,
) -> FeatureSet:
    if not sequences:
        raise EmptyDataset("no sequences to featurize")
    xs, masks, labels = [], [], []
    for seq in sequences:
        fitted = SkeletonSequence(fit_length(seq.coords, frames), seq.label, seq.meta)
        feat = compute_signal(fitted, signal, reference_joints, max_bodies)
        xs.append(feat.data)
        masks.append(feat.body_mask)
        labels.append(-1 if seq.label is None else seq.label)
    return FeatureSet(np.stack(xs), np.stack(masks), np.asarray(labels, dtype=np.int64), signal)


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_val_acc: float = -1.0
    best_epoch: int = -1
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None


def _predict(model: PBGCN, data: FeatureSet, batch_size: int) -> np.ndarray:
    preds = []
    for lo in range(0, len(data), batch_size):
        logits = model.forward(data.x[lo : lo + batch_size], data.mask[lo : lo + batch_size]).data
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


def write_log(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_FIELDS})


def train(
    model: PBGCN,
    train_set: FeatureSet,
    cfg: TrainConfig,
    val_set: FeatureSet | None = None,
    out_dir: str | Path | None = None,
    graph: SkeletonGraph | None = None,
    fit_stats: bool = True,
) -> TrainResult:
    """Train ``model`` in place.

    With ``out_dir`` set, ``train_log.csv``, ``best.ckpt`` (highest validation
    accuracy, first occurrence) and ``last.ckpt`` are written there; ``graph``
    is then required for the checkpoint echo.
    """
    if len(train_set) == 0:
        raise EmptyDataset("training split is empty")
    if train_set.signal != model.config.signal:
        raise InvalidSpec(f"model expects {model.config.signal!r}, data is {train_set.signal!r}")
    if out_dir is not None:
        if graph is None:
            raise ValueError("graph is required to write checkpoints")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    if fit_stats:
        model.fit_standardization(train_set.x, train_set.mask)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
    result = TrainResult()
    n = len(train_set)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                logits = model.forward(train_set.x[idx], train_set.mask[idx])
                loss = softmax_cross_entropy(logits, train_set.labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise DivergedLoss(f"loss became {value} at epoch {epoch}, lr {lr}; lower base_lr")
            tape.backward(loss)
            opt.step(lr)
            total_loss += value * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == train_set.labels[idx]))
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total_loss / n,
            "train_acc": correct / n,
            "val_acc": float("nan"),
        }
        if val_set is not None and len(val_set):
            row["val_acc"] = float(np.mean(_predict(model, val_set, cfg.batch_size) == val_set.labels))
        result.log.append(row)
        log.info("epoch %d lr %.3g loss %.5f train %.3f val %.3f", epoch, lr, row["train_loss"],
                 row["train_acc"], row["val_acc"])
        if out_dir is not None:
            write_log(out_dir / "train_log.csv", result.log)
            if row["val_acc"] > result.best_val_acc or result.best_checkpoint is None:
                result.best_val_acc, result.best_epoch = row["val_acc"], epoch
                result.best_checkpoint = out_dir / "best.ckpt"
                save_checkpoint(model, result.best_checkpoint, graph, {"epoch": epoch, "train": asdict(cfg)})
        elif row["val_acc"] > result.best_val_acc:
            result.best_val_acc, result.best_epoch = row["val_acc"], epoch
        if cfg.target_loss is not None and row["train_loss"] < cfg.target_loss:
            break
    if out_dir is not None:
        result.last_checkpoint = out_dir / "last.ckpt"
        save_checkpoint(model, result.last_checkpoint, graph, {"epoch": result.log[-1]["epoch"], "train": asdict(cfg)})
    return result

"""Accuracy, confusion matrices, confused-class reports and heatmaps."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyEvalSet, InvalidSpec, ShapeMismatch


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns are predicted classes."""

    counts: np.ndarray
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeMismatch(f"confusion matrix must be square, got {counts.shape}")
        if counts.size and (counts.min() < 0 or not np.all(counts == np.round(counts))):
            raise InvalidSpec("confusion counts must be non-negative integers")
        self.counts = counts.astype(np.int64)
        if self.class_names is not None:
            self.class_names = tuple(self.class_names)
            if len(self.class_names) != self.num_classes:
                raise ShapeMismatch("class_names length must equal the number of classes")

    @classmethod
    def from_predictions(cls, labels, predictions, num_classes: int, class_names=None) -> "ConfusionMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        predictions = np.asarray(predictions, dtype=np.int64)
        if labels.shape != predictions.shape:
            raise ShapeMismatch("labels and predictions differ in length")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (labels, predictions), 1)
        return cls(counts, class_names)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return int(np.trace(self.counts)) / self.total if self.total else float("nan")

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def per_class_accuracy(self) -> np.ndarray:
        """Recall per true class; NaN for classes absent from the eval set."""
        support = self.support()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(support > 0, np.diag(self.counts) / np.maximum(support, 1), np.nan)

    def name(self, k: int) -> str:
        return self.class_names[k] if self.class_names else str(k)


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index.
    return np.argmax(np.asarray(logits), axis=-1)


def evaluate(model, data, batch_size: int = 64, class_names=None) -> tuple[float, ConfusionMatrix]:
    """Accuracy and confusion matrix of ``model`` on a ``FeatureSet``."""
    if len(data) == 0:
        raise EmptyEvalSet("evaluation set is empty")
    if data.signal != model.config.signal:
        raise InvalidSpec(f"model expects {model.config.signal!r} features, got {data.signal!r}")
    K = model.config.num_classes
    if data.labels.min() < 0 or data.labels.max() >= K:
        raise InvalidSpec(f"eval labels fall outside [0, {K})")
    preds = []
    for lo in range(0, len(data), batch_size):
        logits = model.forward(data.x[lo : lo + batch_size], data.mask[lo : lo + batch_size]).data
        preds.append(predict(logits))
    cm = ConfusionMatrix.from_predictions(data.labels, np.concatenate(preds), K, class_names)
    return cm.accuracy, cm


def per_class_delta(a: ConfusionMatrix, b: ConfusionMatrix) -> np.ndarray:
    """Per-class accuracy of ``b`` minus that of ``a``."""
    if a.num_classes != b.num_classes:
        raise ShapeMismatch("matrices cover different class counts")
    return b.per_class_accuracy() - a.per_class_accuracy()


def confused_pairs(
    cm: ConfusionMatrix, top_k: int | None = None, merge_symmetric: bool = False
) -> list[tuple[int, int, int]]:
    """Non-zero off-diagonal entries, largest count first.

    Ties are ordered by (true, predicted). With ``merge_symmetric`` the
    entries (i, j) and (j, i) are summed and reported as (min, max, total).
    """
    c = cm.counts
    K = c.shape[0]
    if merge_symmetric:
        entries = [(i, j, int(c[i, j] + c[j, i])) for i in range(K) for j in range(i + 1, K)]
    else:
        entries = [(i, j, int(c[i, j])) for i in range(K) for j in range(K) if i != j]
    entries = [e for e in entries if e[2] > 0]
    entries.sort(key=lambda e: (-e[2], e[0], e[1]))
    return entries if top_k is None else entries[:top_k]


def heatmap_intensities(cm: ConfusionMatrix) -> np.ndarray:
    """Rows scaled by their maximum; all-zero rows stay zero."""
    c = cm.counts.astype(np.float64)
    peak = c.max(axis=1, keepdims=True)
    return np.divide(c, peak, out=np.zeros_like(c), where=peak > 0)


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true", "pred", "count"])
        for i in range(cm.num_classes):
            for j in range(cm.num_classes):
                writer.writerow([i, j, int(cm.counts[i, j])])
    return path


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = [(int(r["true"]), int(r["pred"]), int(r["count"])) for r in csv.DictReader(fh)]
    K = 1 + max(max(i, j) for i, j, _ in rows) if rows else 0
    counts = np.zeros((K, K), dtype=np.int64)
    for i, j, n in rows:
        counts[i, j] = n
    return ConfusionMatrix(counts)


def render_heatmap(cm: ConfusionMatrix, path: str | Path, cell: int = 1) -> tuple[Path, Path]:
    """Write a binary PGM (white = 0, black = row maximum) and a count CSV beside it.

    Each matrix entry becomes a ``cell`` x ``cell`` block of pixels.
    """
    if cm.num_classes < 1:
        raise ShapeMismatch("cannot render an empty confusion matrix")
    if cell < 1:
        raise InvalidSpec("cell size must be positive")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gray = np.rint(255.0 * (1.0 - heatmap_intensities(cm))).astype(np.uint8)
    gray = np.kron(gray, np.ones((cell, cell), dtype=np.uint8))
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
    return path, write_confusion_csv(cm, path.with_suffix(".csv"))


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not blob[end : end + 1].isspace():
            end += 1
        fields.append(blob[pos:end].decode("ascii"))
        pos = end
    if fields[0] != "P5":
        raise InvalidSpec(f"{path} is not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    return np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def format_report(cm: ConfusionMatrix, top_k: int = 5) -> str:
    lines = [f"accuracy {cm.accuracy:.4f} ({int(np.trace(cm.counts))}/{cm.total})"]
    for k, acc in enumerate(cm.per_class_accuracy()):
        lines.append(f"  class {cm.name(k)}: {acc:.4f} of {int(cm.support()[k])}")
    pairs = confused_pairs(cm, top_k)
    if pairs:
        lines.append("most confused (true -> pred):")
        lines.extend(f"  {cm.name(i)} -> {cm.name(j)}: {n}" for i, j, n in pairs)
    return "\n".join(lines)


# Full-scale cross-subject accuracies for context next to desk-scale ablations.
REFERENCE_CS = {
    ("one", "J_loc"): 79.4,
    ("four", "J_loc"): 82.8,
    ("four", "D_R||D_T"): 87.5,
}

ABLATION_FIELDS = ("scheme", "signal", "split", "accuracy")


def write_ablation_csv(rows: Sequence[dict], path: str | Path, with_reference: bool = True) -> Path:
    """Rows carry ``scheme, signal, split, accuracy``; a ``reference_cs`` column is optional."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ABLATION_FIELDS + (("reference_cs",) if with_reference else ())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = {k: row[k] for k in ABLATION_FIELDS}
            out["accuracy"] = repr(float(row["accuracy"]))
            if with_reference:
                ref = REFERENCE_CS.get((row["scheme"], row["signal"]))
                out["reference_cs"] = "" if ref is None else ref
            writer.writerow(out)
    return path


def ablation_table(rows: Sequence[dict]) -> str:
    """Text grid: signals down, schemes across."""
    schemes = list(dict.fromkeys(r["scheme"] for r in rows))
    signals = list(dict.fromkeys(r["signal"] for r in rows))
    cell = {(r["scheme"], r["signal"]): r["accuracy"] for r in rows}
    width = max(10, *(len(s) + 2 for s in signals))
    lines = ["signal".ljust(width) + "".join(s.rjust(10) for s in schemes)]
    for sig in signals:
        vals = "".join(
            (f"{100 * cell[(sc, sig)]:.1f}" if (sc, sig) in cell else "-").rjust(10) for sc in schemes
        )
        lines.append(sig.ljust(width) + vals)
    return "\n".join(lines)

"""Run configuration and the train / eval / ablate pipeline.

A run config is a TOML file with the sections ``data``, ``split``,
``model``, ``train``, ``output``, ``eval`` and ``ablate``; see
``docs/config-format.md`` for every key. ``--set section.key=value``
overrides are applied on top of the parsed file.
"""
from __future__ import annotations

import copy
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .checkpoint import load_checkpoint
from .dataio import (
    SplitSpec,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_dataset,
    make_split,
    save_dataset,
    split_from_table,
)
from .errors import ConfigParseError, EmptyDataset, InvalidSpec
from .evaluation import ConfusionMatrix, evaluate, format_report, render_heatmap, write_ablation_csv
from .graph import Topology, load_topology
from .network import NetworkConfig, PBGCN
from .signals import SIGNALS, SkeletonSequence
from .training import FeatureSet, TrainConfig, TrainResult, build_feature_set, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

_SECTIONS = {
    "data": {"source", "root", "topology", "frames", "max_bodies", "num_classes", "synthetic"},
    "split": {"protocol", "train_ids", "folds", "fold", "seed"},
    "model": {"scheme", "signal", "tau", "head_channels", "plan", "self_loop_weight",
              "share_part_weights", "dtype", "seed"},
    "train": {f.name for f in fields(TrainConfig)},
    "output": {"dir"},
    "eval": {"checkpoint", "batch_size", "top_k", "heatmap_cell"},
    "ablate": {"schemes", "signals"},
}


@dataclass
class RunConfig:
    doc: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.doc.get(name, {})

    @property
    def output_dir(self) -> Path:
        return Path(self.section("output").get("dir", "runs/default"))

    @property
    def frames(self) -> int:
        return int(self.section("data").get("frames", 64))

    @property
    def max_bodies(self) -> int:
        return int(self.section("data").get("max_bodies", 2))

    def synthetic_spec(self) -> SyntheticSpec:
        table = dict(self.section("data").get("synthetic", {}))
        table.setdefault("frames", self.frames)
        return SyntheticSpec.from_table(table)

    def split_spec(self) -> SplitSpec:
        table = self.section("split")
        if not table:
            if self.section("data").get("source", "synthetic") == "synthetic":
                return SplitSpec("cross_subject", (1,))
            raise ConfigParseError("missing [split] section")
        return split_from_table(table)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"))

    def with_overrides(self, **sections: Mapping[str, Any]) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        for name, values in sections.items():
            doc.setdefault(name, {}).update(values)
        return RunConfig.from_doc(doc)

    @classmethod
    def from_doc(cls, doc: Mapping) -> "RunConfig":
        for name, table in doc.items():
            if name not in _SECTIONS:
                raise ConfigParseError(f"unknown section [{name}]; expected {sorted(_SECTIONS)}")
            if not isinstance(table, Mapping):
                raise ConfigParseError(f"[{name}] must be a table")
            unknown = set(table) - _SECTIONS[name]
            if unknown:
                raise ConfigParseError(f"unknown keys in [{name}]: {sorted(unknown)}")
        source = doc.get("data", {}).get("source", "synthetic")
        if source not in ("synthetic", "directory"):
            raise ConfigParseError(f"data.source must be 'synthetic' or 'directory', got {source!r}")
        if source == "directory" and "root" not in doc.get("data", {}):
            raise ConfigParseError("data.source = 'directory' needs data.root")
        signal = doc.get("model", {}).get("signal", "D_R||D_T")
        if signal not in SIGNALS:
            raise ConfigParseError(f"model.signal must be one of {SIGNALS}, got {signal!r}")
        return cls(copy.deepcopy(dict(doc)))


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b=value`` where value is a TOML literal, or a bare string otherwise."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigParseError(f"override {text!r} is not of the form section.key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip().split("."), value


def load_run_config(path: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = tomllib.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigParseError(f"{path}: {exc}") from exc
    for text in overrides:
        keys, value = parse_override(text)
        if len(keys) < 2:
            raise ConfigParseError(f"override {text!r} needs a section, e.g. train.epochs=10")
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigParseError(f"override {text!r} descends into a non-table")
        node[keys[-1]] = value
    return RunConfig.from_doc(doc)


# ------------------------------------------------------------------ pipeline


@dataclass
class Prepared:
    topology: Topology
    sequences: list[SkeletonSequence]
    train_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int

    def features(self, signal: str, frames: int, max_bodies: int) -> tuple[FeatureSet, FeatureSet]:
        fs = build_feature_set(self.sequences, signal, self.topology.graph.reference_joints, frames, max_bodies)
        return fs.subset(self.train_idx), fs.subset(self.test_idx)


def load_sequences(cfg: RunConfig, topology: Topology) -> list[SkeletonSequence]:
    data = cfg.section("data")
    if data.get("source", "synthetic") == "synthetic":
        spec = cfg.synthetic_spec()
        return generate_synthetic_dataset(spec, topology.graph, topology.scheme(spec.scheme))
    return load_dataset(data["root"], cfg.max_bodies, topology.graph.num_vertices)


def prepare(cfg: RunConfig) -> Prepared:
    topology = load_topology(cfg.section("data").get("topology", "ntu25"))
    seqs = load_sequences(cfg, topology)
    if not seqs:
        raise EmptyDataset("no usable sequences were loaded")
    train_idx, test_idx = make_split([s.meta for s in seqs], cfg.split_spec())
    labels = [s.label for s in seqs]
    if any(label is None for label in labels):
        raise InvalidSpec("every sequence needs a label")
    num_classes = cfg.section("data").get("num_classes")
    num_classes = int(num_classes) if num_classes is not None else max(labels) + 1
    return Prepared(topology, seqs, train_idx, test_idx, num_classes)


def network_config(cfg: RunConfig, in_channels: int, num_classes: int) -> NetworkConfig:
    table = dict(cfg.section("model"))
    if "plan" in table:
        table["plan"] = tuple(tuple(u) for u in table["plan"])
    return NetworkConfig(num_classes=num_classes, in_channels=in_channels, max_bodies=cfg.max_bodies, **table)


@dataclass
class TrainOutcome:
    model: PBGCN
    result: TrainResult
    test_set: FeatureSet
    out_dir: Path


def run_train(cfg: RunConfig, prepared: Prepared | None = None) -> TrainOutcome:
    """Train one model; the held-out side of the split is the validation set."""
    prepared = prepared or prepare(cfg)
    signal = cfg.section("model").get("signal", "D_R||D_T")
    train_set, test_set = prepared.features(signal, cfg.frames, cfg.max_bodies)
    net_cfg = network_config(cfg, train_set.x.shape[1], prepared.num_classes)
    model = PBGCN(net_cfg, prepared.topology.scheme(net_cfg.scheme))
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(cfg.doc, indent=2, sort_keys=True, default=str))
    result = train(model, train_set, cfg.train_config(), test_set, out_dir, prepared.topology.graph)
    return TrainOutcome(model, result, test_set, out_dir)


def _eval_outputs(cm: ConfusionMatrix, out_dir: Path, cfg: RunConfig) -> None:
    ev = cfg.section("eval")
    render_heatmap(cm, out_dir / "confusion.pgm", int(ev.get("heatmap_cell", 1)))
    (out_dir / "report.txt").write_text(format_report(cm, int(ev.get("top_k", 5))) + "\n")


def run_eval(cfg: RunConfig, prepared: Prepared | None = None) -> tuple[float, ConfusionMatrix]:
    """Evaluate ``eval.checkpoint`` on the held-out side of the split."""
    ev = cfg.section("eval")
    if "checkpoint" not in ev:
        raise ConfigParseError("[eval] is missing 'checkpoint'")
    model, _, _ = load_checkpoint(ev["checkpoint"])
    prepared = prepared or prepare(cfg)
    _, test_set = prepared.features(model.config.signal, cfg.frames, model.config.max_bodies)
    acc, cm = evaluate(model, test_set, int(ev.get("batch_size", 64)))
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    _eval_outputs(cm, out_dir, cfg)
    return acc, cm


def run_ablate(cfg: RunConfig) -> list[dict]:
    """Train and evaluate every (scheme, signal) cell under the same seed and split.

    Each cell goes through ``run_train`` and is scored from its last
    checkpoint, so a cell equals a standalone ``train`` + ``eval`` run.
    """
    grid = cfg.section("ablate")
    schemes = list(grid.get("schemes", ["one", "four"]))
    signals = list(grid.get("signals", ["J_loc", "D_R||D_T"]))
    prepared = prepare(cfg)
    split = cfg.split_spec().protocol
    root = cfg.output_dir
    rows = []
    for signal in signals:
        for scheme in schemes:
            cell = cfg.with_overrides(
                model={"scheme": scheme, "signal": signal},
                output={"dir": str(root / f"{scheme}_{signal.replace('||', '+')}")},
            )
            outcome = run_train(cell, prepared)
            acc, cm = evaluate(outcome.model, outcome.test_set, int(cell.section("eval").get("batch_size", 64)))
            _eval_outputs(cm, outcome.out_dir, cell)
            log.info("ablate %s / %s: %.4f", scheme, signal, acc)
            rows.append({"scheme": scheme, "signal": signal, "split": split, "accuracy": acc})
    write_ablation_csv(rows, root / "ablation.csv")
    return rows


def run_gen_synth(cfg: RunConfig, out: str | Path | None = None) -> Path:
    """Write the configured synthetic dataset as a record directory."""
    topology = load_topology(cfg.section("data").get("topology", "ntu25"))
    spec = cfg.synthetic_spec()
    seqs = generate_synthetic_dataset(spec, topology.graph, topology.scheme(spec.scheme))
    root = Path(out) if out is not None else Path(cfg.section("data").get("root", cfg.output_dir / "synthetic"))
    save_dataset(root, seqs)
    (root / "synthetic.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True))
    return root

"""Skeleton file parsing, dataset storage, evaluation splits and synthetic data.

Skeleton text format (one token group per line)::

    <frame count>
    per frame:
        <body count>
        per body:
            <body info line, ignored>
            <joint count>
            per joint: x y z [further fields ignored]

Binary record format (``*.rec``), little-endian::

    4 bytes  magic b"PBRC"
    u32      version (1)
    u32      ndim
    u32 * ndim  dimensions
    f64 * prod(dims)  values, C order

A dataset directory holds records plus ``index.csv`` with columns
``file,label,setup,camera,performer,replication,action``. Directories
without an index are scanned for ``*.skeleton`` files named
``S<sss>C<ccc>P<ppp>R<rrr>A<aaa>``.
"""
from __future__ import annotations

import csv
import logging
import math
import re
import struct
import sys
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigParseError,
    EmptySide,
    InvalidSpec,
    JointCountMismatch,
    MalformedHeader,
    NonFiniteCoordinate,
    ParseError,
    PatternMismatch,
    TooManyBodies,
)
from .graph import PartitionScheme, SkeletonGraph
from .signals import SkeletonSequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecordingMeta:
    setup: int
    camera: int
    performer: int
    replication: int
    action: int  # 0-based


_NAME_RE = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


def parse_recording_name(filename: str, num_classes: int | None = None) -> RecordingMeta:
    stem = Path(filename).name.split(".")[0]
    m = _NAME_RE.fullmatch(stem)
    if not m:
        raise PatternMismatch(f"{filename!r} does not match S###C###P###R###A###")
    s, c, p, r, a = (int(g) for g in m.groups())
    if a < 1:
        raise PatternMismatch(f"{filename!r}: action ids are 1-based")
    if num_classes is not None and a - 1 >= num_classes:
        raise PatternMismatch(f"{filename!r}: action {a} exceeds {num_classes} classes")
    return RecordingMeta(s, c, p, r, a - 1)


def format_recording_name(meta: RecordingMeta) -> str:
    return (
        f"S{meta.setup:03d}C{meta.camera:03d}P{meta.performer:03d}"
        f"R{meta.replication:03d}A{meta.action + 1:03d}"
    )


# ----------------------------------------------------------- skeleton text files


class _Lines:
    def __init__(self, text: str):
        self.lines = [ln.strip() for ln in text.splitlines()]
        self.pos = 0

    def next(self, what: str) -> str:
        while self.pos < len(self.lines) and not self.lines[self.pos]:
            self.pos += 1
        if self.pos >= len(self.lines):
            raise MalformedHeader(f"unexpected end of file while reading {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def next_int(self, what: str) -> int:
        line = self.next(what)
        try:
            return int(line.split()[0])
        except ValueError:
            raise MalformedHeader(f"line {self.pos}: expected {what}, got {line!r}") from None


def parse_skeleton_file(data: bytes | str, max_bodies: int = 2, num_joints: int | None = None) -> SkeletonSequence:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if not text.strip():
        raise MalformedHeader("empty skeleton file")
    lines = _Lines(text)
    T = lines.next_int("frame count")
    if T < 1:
        raise MalformedHeader(f"frame count must be positive, got {T}")
    frames: list[list[np.ndarray]] = []
    V = num_joints
    for t in range(T):
        nb = lines.next_int(f"body count of frame {t}")
        if nb < 0:
            raise MalformedHeader(f"negative body count in frame {t}")
        if nb > max_bodies:
            raise TooManyBodies(f"frame {t} has {nb} bodies, at most {max_bodies} allowed")
        bodies = []
        for b in range(nb):
            lines.next(f"body info of frame {t}")
            nj = lines.next_int(f"joint count of frame {t}")
            if V is None:
                V = nj
            elif nj != V:
                raise JointCountMismatch(f"frame {t} body {b}: {nj} joints, expected {V}")
            joints = np.empty((nj, 3))
            for j in range(nj):
                fields = lines.next(f"joint {j} of frame {t}").split()
                if len(fields) < 3:
                    raise MalformedHeader(f"joint line {lines.pos} has fewer than 3 fields")
                try:
                    joints[j] = [float(v) for v in fields[:3]]
                except ValueError:
                    raise MalformedHeader(f"joint line {lines.pos} is not numeric") from None
            if not np.all(np.isfinite(joints)):
                raise NonFiniteCoordinate(f"non-finite coordinate in frame {t} body {b}")
            bodies.append(joints)
        frames.append(bodies)
    if V is None:
        raise MalformedHeader("file contains no bodies")
    M = max(1, max(len(f) for f in frames))
    coords = np.zeros((M, T, V, 3))
    for t, bodies in enumerate(frames):
        for b, joints in enumerate(bodies):
            coords[b, t] = joints
    return SkeletonSequence(coords)


def serialize_skeleton_file(seq: SkeletonSequence) -> str:
    """Inverse of :func:`parse_skeleton_file`; floats are written with ``repr`` so values round-trip."""
    M, T, V, _ = seq.coords.shape
    out = [str(T)]
    for t in range(T):
        out.append(str(M))
        for b in range(M):
            out.append(f"{b} 0 0 0 0 0 0 0 0 2")
            out.append(str(V))
            out.extend(" ".join(repr(float(v)) for v in seq.coords[b, t, j]) for j in range(V))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- binary records

_REC_MAGIC = b"PBRC"


def write_record(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_REC_MAGIC)
        fh.write(struct.pack("<II", 1, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_record(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != _REC_MAGIC:
        raise MalformedHeader(f"{path}: not a record file")
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != 1:
        raise MalformedHeader(f"{path}: unsupported record version {version}")
    dims = struct.unpack_from(f"<{ndim}I", blob, 12)
    start = 12 + 4 * ndim
    count = int(np.prod(dims, dtype=int))
    if len(blob) - start != 8 * count:
        raise MalformedHeader(f"{path}: payload size does not match header")
    return np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(dims).astype(np.float64)


# ----------------------------------------------------------------------- datasets

_INDEX_FIELDS = ("file", "label", "setup", "camera", "performer", "replication", "action")


def save_dataset(root: str | Path, sequences: Sequence[SkeletonSequence]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, seq in enumerate(sequences):
        meta = seq.meta or RecordingMeta(0, 0, 0, 0, seq.label or 0)
        name = f"{i:06d}_{format_recording_name(meta)}.rec"
        write_record(root / name, seq.coords)
        rows.append({"file": name, "label": seq.label, **asdict(meta)})
    with open(root / "index.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_INDEX_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return root / "index.csv"


def load_dataset(root: str | Path, max_bodies: int = 2, num_joints: int | None = None) -> list[SkeletonSequence]:
    """Load every readable sequence under ``root``.

    Unreadable or incomplete samples are skipped; the number skipped is
    logged.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigParseError(f"dataset root {root} is not a directory")
    out: list[SkeletonSequence] = []
    skipped = 0
    index = root / "index.csv"
    if index.exists():
        with open(index, newline="") as fh:
            for row in csv.DictReader(fh):
                meta = RecordingMeta(*(int(row[k]) for k in ("setup", "camera", "performer", "replication", "action")))
                path = root / row["file"]
                try:
                    if path.suffix == ".rec":
                        seq = SkeletonSequence(read_record(path))
                    else:
                        seq = parse_skeleton_file(path.read_bytes(), max_bodies, num_joints)
                except (ParseError, OSError) as exc:
                    log.debug("skipping %s: %s", path, exc)
                    skipped += 1
                    continue
                if seq.num_bodies > max_bodies:
                    skipped += 1
                    continue
                seq.label = int(row["label"])
                seq.meta = meta
                out.append(seq)
    else:
        for path in sorted(root.glob("*.skeleton")):
            try:
                meta = parse_recording_name(path.name)
                seq = parse_skeleton_file(path.read_bytes(), max_bodies, num_joints)
            except ParseError as exc:
                log.debug("skipping %s: %s", path, exc)
                skipped += 1
                continue
            seq.label = meta.action
            seq.meta = meta
            out.append(seq)
    if skipped:
        log.warning("skipped %d missing or incomplete samples under %s", skipped, root)
    return out


def fit_length(coords: np.ndarray, T: int) -> np.ndarray:
    """Truncate [M, T0, V, 3] to ``T`` frames, or pad by repeating the last frame."""
    T0 = coords.shape[1]
    if T0 >= T:
        return coords[:, :T]
    tail = np.repeat(coords[:, -1:], T - T0, axis=1)
    return np.concatenate([coords, tail], axis=1)


# ------------------------------------------------------------------------ splits

PROTOCOLS = ("cross_subject", "cross_view", "k_fold_cross_sample")


@dataclass(frozen=True)
class SplitSpec:
    protocol: str
    train_ids: tuple[int, ...] = ()
    folds: int = 0
    fold: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InvalidSpec(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if self.protocol == "k_fold_cross_sample":
            if self.folds < 2:
                raise InvalidSpec("k-fold protocol needs folds >= 2")
            if not 0 <= self.fold < self.folds:
                raise InvalidSpec(f"fold {self.fold} outside [0, {self.folds})")
        elif not self.train_ids:
            raise InvalidSpec(f"{self.protocol} split needs explicit train_ids")


def make_split(metas: Sequence[RecordingMeta], spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n = len(metas)
    if spec.protocol == "k_fold_cross_sample":
        order = np.arange(n) if spec.seed is None else np.random.default_rng(spec.seed).permutation(n)
        fold_of = np.empty(n, dtype=int)
        fold_of[order] = np.arange(n) % spec.folds
        is_train = fold_of != spec.fold
    else:
        key = "performer" if spec.protocol == "cross_subject" else "camera"
        ids = set(spec.train_ids)
        is_train = np.array([getattr(m, key) in ids for m in metas], dtype=bool)
    train, held = np.flatnonzero(is_train), np.flatnonzero(~is_train)
    if len(train) == 0 or len(held) == 0:
        raise EmptySide(f"{spec.protocol} split leaves a side empty ({len(train)} train, {len(held)} eval)")
    return train, held


def split_from_table(table: dict) -> SplitSpec:
    allowed = {"protocol", "train_ids", "folds", "fold", "seed"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigParseError(f"unknown keys in [split]: {sorted(unknown)}")
    if "protocol" not in table:
        raise ConfigParseError("[split] is missing 'protocol'")
    return SplitSpec(
        table["protocol"], tuple(table.get("train_ids", ())), int(table.get("folds", 0)),
        int(table.get("fold", 0)), table.get("seed"),
    )


def load_split_spec(path: str | Path) -> SplitSpec:
    try:
        doc = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigParseError(f"cannot read split spec {path}: {exc}") from exc
    if "split" not in doc:
        raise ConfigParseError(f"{path}: missing [split] table")
    return split_from_table(doc["split"])


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Each class moves the joints of one part along a sinusoid.

    Class ``c`` animates part ``c % n`` along axis ``c % 3`` with
    ``cycles + c // n`` oscillations over the sequence. Train samples get
    performer id 1 and test samples performer id 2, so a cross-subject split
    with ``train_ids = [1]`` recovers the intended partition.
    """

    num_classes: int = 4
    train_per_class: int = 50
    test_per_class: int = 20
    frames: int = 32
    noise: float = 0.01
    amplitude: float = 0.15
    cycles: float = 2.0
    offset_scale: float = 0.1
    scheme: str = "four"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.train_per_class < 0 or self.test_per_class < 0:
            raise InvalidSpec("class and sample counts must be non-negative (at least one class)")
        if self.train_per_class + self.test_per_class < 1:
            raise InvalidSpec("synthetic spec produces no samples")
        if self.frames < 2:
            raise InvalidSpec("synthetic sequences need at least 2 frames")
        if self.noise < 0 or self.amplitude <= 0:
            raise InvalidSpec("noise must be >= 0 and amplitude > 0")

    @classmethod
    def from_table(cls, table: dict) -> "SyntheticSpec":
        unknown = set(table) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigParseError(f"unknown keys in [synthetic]: {sorted(unknown)}")
        return cls(**table)


def rest_pose(graph: SkeletonGraph, seed: int = 0, bone: float = 0.15) -> np.ndarray:
    """A deterministic tree layout: every vertex sits one bone length from its BFS parent."""
    rng = np.random.default_rng(seed)
    V = graph.num_vertices
    adj: dict[int, list[int]] = {v: [] for v in range(V)}
    for a, b in graph.edges:
        adj[a].append(b)
        adj[b].append(a)
    pos = np.zeros((V, 3))
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for w in sorted(adj[u]):
            if w not in seen:
                d = rng.normal(size=3)
                pos[w] = pos[u] + bone * d / np.linalg.norm(d)
                seen.add(w)
                queue.append(w)
    return pos + np.array([0.0, 1.0, 3.0])


def generate_synthetic_dataset(
    spec: SyntheticSpec, graph: SkeletonGraph, scheme: PartitionScheme
) -> list[SkeletonSequence]:
    """Single-body sequences, classes in order, train samples before test samples."""
    if scheme.name != spec.scheme:
        raise InvalidSpec(f"spec animates scheme {spec.scheme!r}, got {scheme.name!r}")
    rng = np.random.default_rng(spec.seed)
    base = rest_pose(graph, spec.seed)
    T, V = spec.frames, graph.num_vertices
    t = np.arange(T)
    out = []
    for c in range(spec.num_classes):
        part = scheme.parts[c % scheme.n]
        axis = c % 3
        cycles = spec.cycles + c // scheme.n
        for i in range(spec.train_per_class + spec.test_per_class):
            phase = rng.uniform(0, 2 * math.pi)
            amp = spec.amplitude * rng.uniform(0.7, 1.3)
            offset = rng.normal(scale=spec.offset_scale, size=3)
            coords = np.broadcast_to(base + offset, (T, V, 3)).copy()
            coords[:, list(part.vertices), axis] += (amp * np.sin(2 * math.pi * cycles * t / T + phase))[:, None]
            if spec.noise > 0:
                coords += rng.normal(scale=spec.noise, size=coords.shape)
            performer = 1 if i < spec.train_per_class else 2
            meta = RecordingMeta(1, 1, performer, i + 1, c)
            out.append(SkeletonSequence(coords[None], label=c, meta=meta))
    return out

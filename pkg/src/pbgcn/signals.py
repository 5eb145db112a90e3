"""Per-vertex input signals computed from 3D joint trajectories.

Four signal kinds are supported, identified by a tag:

``J_loc``     absolute joint coordinates (3 channels)
``D_R``       coordinates relative to each reference joint (3 per reference)
``D_T``       forward temporal displacement, last frame zero (3 channels)
``D_R||D_T``  channel concatenation of the two above

Feature tensors are laid out [C, T, V, M]. All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyReferenceSet, InvalidSpec, NonFiniteCoordinate, ShapeMismatch

J_LOC = "J_loc"
D_R = "D_R"
D_T = "D_T"
D_RT = "D_R||D_T"
ACTIVATION = "activation"
SIGNALS = (J_LOC, D_R, D_T, D_RT)


@dataclass
class SkeletonSequence:
    """Joint trajectories of up to M bodies.

    ``coords`` has shape [M, T, V, 3] (metres). ``meta`` holds recording ids
    when the sequence came from a named file.
    """

    coords: np.ndarray
    label: int | None = None
    meta: object | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim == 3:
            coords = coords[None]
        if coords.ndim != 4 or coords.shape[-1] != 3:
            raise ShapeMismatch(f"coords must be [M, T, V, 3], got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise NonFiniteCoordinate("sequence contains NaN or Inf coordinates")
        self.coords = coords

    @property
    def bodies(self) -> list[np.ndarray]:
        return list(self.coords)

    @property
    def num_bodies(self) -> int:
        return self.coords.shape[0]

    @property
    def num_frames(self) -> int:
        return self.coords.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.coords.shape[2]


def signal_channels(tag: str, num_references: int) -> int:
    if tag in (J_LOC, D_T):
        return 3
    if tag == D_R:
        return 3 * num_references
    if tag == D_RT:
        return 3 * num_references + 3
    raise InvalidSpec(f"unknown signal tag {tag!r}; expected one of {SIGNALS}")


@dataclass
class FeatureTensor:
    data: np.ndarray
    channel_semantics: str
    body_mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeMismatch(f"feature data must be [C, T, V, M], got {self.data.shape}")
        if self.body_mask is None:
            self.body_mask = np.ones(self.data.shape[3], dtype=bool)
        self.body_mask = np.asarray(self.body_mask, dtype=bool)
        if self.body_mask.shape != (self.data.shape[3],):
            raise ShapeMismatch("body_mask length must equal the body axis")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


def _to_features(per_body: np.ndarray, mask: np.ndarray, tag: str, max_bodies: int | None):
    """[M, T, V, C] -> FeatureTensor [C, T, V, M'] padded with zero bodies."""
    M = per_body.shape[0]
    target = M if max_bodies is None else max_bodies
    if M > target:
        raise ShapeMismatch(f"{M} bodies exceed the configured maximum {target}")
    data = np.zeros((per_body.shape[3], per_body.shape[1], per_body.shape[2], target))
    data[..., :M] = per_body.transpose(3, 1, 2, 0)
    full_mask = np.zeros(target, dtype=bool)
    full_mask[:M] = mask
    return FeatureTensor(data, tag, full_mask)


def _body_mask(seq: SkeletonSequence) -> np.ndarray:
    return np.any(seq.coords != 0, axis=(1, 2, 3))


def joint_locations(seq: SkeletonSequence, max_bodies: int | None = None) -> FeatureTensor:
    return _to_features(seq.coords, _body_mask(seq), J_LOC, max_bodies)


def compute_relative_coords(
    seq: SkeletonSequence, reference_joints: Sequence[int], max_bodies: int | None = None
) -> FeatureTensor:
    """Offsets of every joint from each reference joint, 3 channels per reference."""
    refs = list(reference_joints)
    if not refs:
        raise EmptyReferenceSet("relative coordinates need at least one reference joint")
    V = seq.num_vertices
    if any(not 0 <= r < V for r in refs):
        raise InvalidSpec(f"reference joints {refs} out of range for V={V}")
    c = seq.coords  # [M, T, V, 3]
    blocks = [c - c[:, :, r : r + 1, :] for r in refs]
    rel = np.concatenate(blocks, axis=-1)
    return _to_features(rel, _body_mask(seq), D_R, max_bodies)


def compute_temporal_displacements(seq: SkeletonSequence, max_bodies: int | None = None) -> FeatureTensor:
    c = seq.coords
    disp = np.zeros_like(c)
    disp[:, :-1] = c[:, 1:] - c[:, :-1]
    return _to_features(disp, _body_mask(seq), D_T, max_bodies)


def concat_signals(a: FeatureTensor, b: FeatureTensor) -> FeatureTensor:
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape}")
    if b.data.shape[0] == 0:
        return a
    if a.data.shape[0] == 0:
        return b
    tag = D_RT if (a.channel_semantics, b.channel_semantics) == (D_R, D_T) else (
        f"{a.channel_semantics}||{b.channel_semantics}"
    )
    return FeatureTensor(np.concatenate([a.data, b.data], axis=0), tag, a.body_mask & b.body_mask)


def compute_signal(
    seq: SkeletonSequence,
    tag: str,
    reference_joints: Sequence[int] = (),
    max_bodies: int | None = None,
) -> FeatureTensor:
    if tag == J_LOC:
        return joint_locations(seq, max_bodies)
    if tag == D_R:
        return compute_relative_coords(seq, reference_joints, max_bodies)
    if tag == D_T:
        return compute_temporal_displacements(seq, max_bodies)
    if tag == D_RT:
        return concat_signals(
            compute_relative_coords(seq, reference_joints, max_bodies),
            compute_temporal_displacements(seq, max_bodies),
        )
    raise InvalidSpec(f"unknown signal tag {tag!r}; expected one of {SIGNALS}")

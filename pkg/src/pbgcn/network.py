"""Part-based spatio-temporal graph convolutional network.

Inputs arrive as [N, C, T, V, M] (batch, channels, frames, vertices,
bodies); internally activations are kept as [N, M, C, T, V] so that channel
and vertex contractions are plain batched matrix products. One
spatio-temporal unit computes

    Z_p = W_p X_p                       per part, pointwise over channels
    Y_p = (A_p * mask_p) Z_p            mixing over the part's vertices
    Y_S = sum_p w_agg[p] scatter(Y_p)   weighted fusion on the full graph
    out = relu(tconv(relu(Y_S)) + residual(X))

where A_p is the part's normalized adjacency plus a weighted identity for the
root vertex.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .errors import InvalidSpec, ShapeMismatch, UnknownClassCount
from .graph import PartitionScheme, spatial_operator
from .signals import SIGNALS, FeatureTensor
from .tensor import Tensor

BODY, CH, TIME, VERT = 1, 2, 3, 4

DEFAULT_PLAN = (
    (64, 64, 1), (64, 64, 1), (64, 64, 1),
    (64, 128, 2), (128, 128, 1), (128, 128, 1),
    (128, 256, 2), (256, 256, 1), (256, 256, 1),
)


@dataclass
class NetworkConfig:
    num_classes: int
    in_channels: int
    scheme: str = "four"
    signal: str = "D_R||D_T"
    tau: int = 9
    head_channels: int = 64
    plan: tuple[tuple[int, int, int], ...] = DEFAULT_PLAN
    self_loop_weight: float = 1.0
    share_part_weights: bool = False
    max_bodies: int = 2
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.num_classes, int) or self.num_classes < 1:
            raise UnknownClassCount(f"num_classes must be a positive integer, got {self.num_classes!r}")
        if self.tau < 1 or self.tau % 2 == 0:
            raise InvalidSpec(f"tau must be odd and positive, got {self.tau}")
        if self.signal not in SIGNALS:
            raise InvalidSpec(f"unknown signal {self.signal!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidSpec(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.plan = tuple(tuple(int(v) for v in unit) for unit in self.plan)
        prev = self.head_channels
        for i, (c_in, c_out, stride) in enumerate(self.plan):
            if c_in != prev:
                raise InvalidSpec(f"unit {i} expects {c_in} channels but receives {prev}")
            if stride not in (1, 2):
                raise InvalidSpec(f"unit {i} stride must be 1 or 2")
            prev = c_out

    @property
    def out_channels(self) -> int:
        return self.plan[-1][1] if self.plan else self.head_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plan"] = [list(u) for u in self.plan]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["plan"] = tuple(tuple(u) for u in d.get("plan", DEFAULT_PLAN))
        return cls(**d)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class STUnit:
    """Parameters and fixed operators of one spatio-temporal unit."""

    in_channels: int
    out_channels: int
    stride: int
    part_weights: list[Tensor]
    edge_masks: list[Tensor]
    agg: Tensor
    temporal_w: Tensor
    temporal_b: Tensor
    residual_w: Tensor | None = None
    residual_b: Tensor | None = None
    operators: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def identity_residual(self) -> bool:
        return self.residual_w is None

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        seen = set()
        for p, w in enumerate(self.part_weights):
            if id(w) not in seen:
                seen.add(id(w))
                out[w.name or f"{prefix}.part{p}.W"] = w
        for p, m in enumerate(self.edge_masks):
            out[f"{prefix}.part{p}.mask"] = m
        out[f"{prefix}.agg"] = self.agg
        out[f"{prefix}.temporal.W"] = self.temporal_w
        out[f"{prefix}.temporal.b"] = self.temporal_b
        if self.residual_w is not None:
            out[f"{prefix}.residual.W"] = self.residual_w
            out[f"{prefix}.residual.b"] = self.residual_b
        return out


def make_unit(
    c_in: int,
    c_out: int,
    stride: int,
    scheme: PartitionScheme,
    tau: int,
    rng: np.random.Generator,
    prefix: str,
    dtype=np.float64,
    self_loop_weight: float = 1.0,
    share_part_weights: bool = False,
) -> STUnit:
    operators = [spatial_operator(part, self_loop_weight).astype(dtype) for part in scheme.parts]
    if share_part_weights:
        shared = Tensor(_uniform(rng, (c_out, c_in), c_in, dtype), True, f"{prefix}.W")
        weights = [shared] * scheme.n
    else:
        weights = [
            Tensor(_uniform(rng, (c_out, c_in), c_in, dtype), True, f"{prefix}.part{p}.W")
            for p in range(scheme.n)
        ]
    # Ones on the operator's support; off-support entries stay structurally zero.
    masks = [Tensor((op != 0).astype(dtype), True, f"{prefix}.part{p}.mask") for p, op in enumerate(operators)]
    unit = STUnit(
        c_in,
        c_out,
        stride,
        weights,
        masks,
        agg=Tensor(np.ones(scheme.n, dtype=dtype), True, f"{prefix}.agg"),
        temporal_w=Tensor(_uniform(rng, (c_out, c_out, tau), c_out * tau, dtype), True, f"{prefix}.temporal.W"),
        temporal_b=Tensor(np.zeros(c_out, dtype=dtype), True, f"{prefix}.temporal.b"),
        operators=operators,
    )
    if c_in != c_out or stride != 1:
        unit.residual_w = Tensor(_uniform(rng, (c_out, c_in, 1), c_in, dtype), True, f"{prefix}.residual.W")
        unit.residual_b = Tensor(np.zeros(c_out, dtype=dtype), True, f"{prefix}.residual.b")
    return unit


# ------------------------------------------------------------------ operations


def spatial_part_conv(x: Tensor, unit: STUnit, scheme: PartitionScheme) -> list[Tensor]:
    """Per-part channel transform followed by masked-adjacency vertex mixing."""
    if x.shape[CH] != unit.in_channels:
        raise ShapeMismatch(f"unit expects {unit.in_channels} channels, input has {x.shape[CH]}")
    V = x.shape[VERT]
    outputs = []
    for part, w, mask, op in zip(scheme.parts, unit.part_weights, unit.edge_masks, unit.operators):
        xp = x if part.size == V else tn.take(x, part.vertices, axis=VERT)
        zp = tn.channel_transform(xp, w, axis=CH)
        masked = tn.mul(Tensor(op), mask)
        outputs.append(tn.graph_mix(zp, masked, axis=VERT))
    return outputs


def aggregate_parts(part_outputs: Sequence[Tensor], scheme: PartitionScheme, w_agg: Tensor) -> Tensor:
    """Weighted-sum fusion of part outputs on the full vertex set."""
    V = scheme.num_vertices
    if len(part_outputs) != scheme.n:
        raise ShapeMismatch(f"{len(part_outputs)} part outputs for a {scheme.n}-part scheme")
    full = []
    for part, y in zip(scheme.parts, part_outputs):
        if y.shape[VERT] != part.size:
            raise ShapeMismatch(f"part {part.name!r} output has {y.shape[VERT]} vertices, expected {part.size}")
        full.append(y if part.size == V else tn.scatter(y, part.vertices, V, axis=VERT))
    return tn.weighted_sum(full, w_agg)


def cross_part_edge_aggregate(
    part_outputs: Sequence[Tensor],
    parts: Sequence[Sequence[int]],
    cross_edges: Sequence[tuple[int, int]],
    w_agg: Tensor,
    num_vertices: int,
    axis: int = VERT,
) -> Tensor:
    """Fusion that also passes values along edges joining different parts.

    Every part output is scattered onto the full vertex set as in
    :func:`aggregate_parts`; in addition, for a cross edge (i, j) with i in
    part p1 and j in part p2, vertex i receives part p2's value at j and
    vertex j receives part p1's value at i. All contributions of part p are
    weighted by ``w_agg[p]``.
    """
    parts = [list(p) for p in parts]
    terms = []
    for p, (verts, y) in enumerate(zip(parts, part_outputs)):
        local = {v: k for k, v in enumerate(verts)}
        route = np.zeros((num_vertices, len(verts)), dtype=y.dtype)
        for k, v in enumerate(verts):
            route[v, k] = 1.0
        for a, b in cross_edges:
            for src, dst in ((a, b), (b, a)):
                if src in local and dst not in local:
                    route[dst, local[src]] += 1.0
        terms.append(tn.graph_mix(y, Tensor(route), axis=axis))
    return tn.weighted_sum(terms, w_agg)


def st_unit_forward(x: Tensor, unit: STUnit, scheme: PartitionScheme) -> Tensor:
    parts = spatial_part_conv(x, unit, scheme)
    if scheme.cross_edges:
        fused = cross_part_edge_aggregate(
            parts, [p.vertices for p in scheme.parts], scheme.cross_edges, unit.agg, scheme.num_vertices
        )
    else:
        fused = aggregate_parts(parts, scheme, unit.agg)
    h = tn.temporal_conv(tn.relu(fused), unit.temporal_w, unit.temporal_b, unit.stride, axis=CH)
    if unit.identity_residual:
        res = x
    else:
        res = tn.temporal_conv(x, unit.residual_w, unit.residual_b, unit.stride, axis=CH)
    return tn.relu(tn.add(h, res))


# ----------------------------------------------------------------------- model


class PBGCN:
    """Head unit, a stack of spatio-temporal units and a linear classifier.

    The head standardizes every input channel with statistics frozen from the
    training split (:meth:`fit_standardization`) and lifts it to
    ``head_channels`` with a pointwise transform.
    """

    def __init__(self, config: NetworkConfig, scheme: PartitionScheme):
        if scheme.name != config.scheme and config.scheme != "custom":
            raise InvalidSpec(f"config names scheme {config.scheme!r}, got {scheme.name!r}")
        self.config = config
        self.scheme = scheme
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        c_in = config.in_channels
        self.feature_mean = np.zeros(c_in)
        self.feature_std = np.ones(c_in)
        self.head_w = Tensor(_uniform(rng, (config.head_channels, c_in), c_in, dtype), True, "head.W")
        self.head_b = Tensor(np.zeros(config.head_channels, dtype=dtype), True, "head.b")
        self.units = [
            make_unit(
                ci, co, s, scheme, config.tau, rng, f"unit{k}", dtype,
                config.self_loop_weight, config.share_part_weights,
            )
            for k, (ci, co, s) in enumerate(config.plan)
        ]
        c_last = config.out_channels
        self.cls_w = Tensor(_uniform(rng, (config.num_classes, c_last), c_last, dtype), True, "classifier.W")
        self.cls_b = Tensor(np.zeros(config.num_classes, dtype=dtype), True, "classifier.b")

    def parameters(self) -> dict[str, Tensor]:
        params = {"head.W": self.head_w, "head.b": self.head_b}
        for k, unit in enumerate(self.units):
            params.update(unit.parameters(f"unit{k}"))
        params["classifier.W"] = self.cls_w
        params["classifier.b"] = self.cls_b
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def fit_standardization(self, x: np.ndarray, body_mask: np.ndarray) -> None:
        """Per-channel mean/std over all valid (sample, frame, vertex, body) entries."""
        N, C, T, V, M = x.shape
        sel = np.broadcast_to(np.asarray(body_mask, bool)[:, None, None, :], (N, T, V, M))
        values = np.moveaxis(x, 1, -1)[sel]  # [entries, C]
        if values.shape[0] == 0:
            return
        self.feature_mean = values.mean(axis=0)
        std = values.std(axis=0)
        self.feature_std = np.where(std > 1e-8, std, 1.0)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"feature_mean": self.feature_mean, "feature_std": self.feature_std}

    def forward(self, x: np.ndarray, body_mask: np.ndarray | None = None) -> Tensor:
        """Class scores [N, K] for a batch ``x`` of shape [N, C, T, V, M]."""
        x = np.asarray(x)
        if x.ndim == 4:
            x = x[None]
        if x.ndim != 5:
            raise ShapeMismatch(f"expected [N, C, T, V, M] input, got {x.shape}")
        N, C, T, V, M = x.shape
        if C != self.config.in_channels:
            raise ShapeMismatch(f"model expects {self.config.in_channels} input channels, got {C}")
        if V != self.scheme.num_vertices:
            raise ShapeMismatch(f"model expects {self.scheme.num_vertices} vertices, got {V}")
        if body_mask is None:
            body_mask = np.ones((N, M), dtype=bool)
        body_mask = np.asarray(body_mask, dtype=bool).reshape(N, M)
        dtype = np.dtype(self.config.dtype)
        mean = self.feature_mean.reshape(1, C, 1, 1, 1)
        std = self.feature_std.reshape(1, C, 1, 1, 1)
        xs = ((x - mean) / std) * body_mask[:, None, None, None, :]
        xs = np.ascontiguousarray(xs.transpose(0, 4, 1, 2, 3), dtype=dtype)
        h = tn.channel_transform(Tensor(xs), self.head_w, self.head_b, axis=CH)
        for unit in self.units:
            h = st_unit_forward(h, unit, self.scheme)
        pooled = tn.global_average_pool(h, (TIME, VERT))
        per_sample = tn.masked_mean(pooled, body_mask)
        return tn.channel_transform(per_sample, self.cls_w, self.cls_b, axis=1)

    def forward_features(self, features: Sequence[FeatureTensor]) -> Tensor:
        for f in features:
            if f.channel_semantics != self.config.signal:
                raise ShapeMismatch(
                    f"model trained on {self.config.signal!r} signals, got {f.channel_semantics!r}"
                )
        x = np.stack([f.data for f in features])
        mask = np.stack([f.body_mask for f in features])
        return self.forward(x, mask)


def network_forward(features: FeatureTensor, model: PBGCN) -> np.ndarray:
    """Class-score vector [K] for one feature tensor."""
    return model.forward_features([features]).data[0]

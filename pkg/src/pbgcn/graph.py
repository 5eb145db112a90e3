"""Skeleton graphs, part partitions and normalized part adjacencies.

Topology and partition schemes are loaded from TOML files (see
``docs/config-format.md``); nothing about a particular skeleton is hard-coded
here.
"""
from __future__ import annotations

import sys
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigParseError,
    DisconnectedPart,
    InvalidGraph,
    NoSharedVertex,
    UncoveredEdge,
    UncoveredVertex,
    UnknownScheme,
    VertexNotInPart,
    ZeroDegreeVertex,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Edge = tuple[int, int]


def _canonical_edges(edges: Iterable[Sequence[int]]) -> tuple[Edge, ...]:
    return tuple(sorted((min(a, b), max(a, b)) for a, b in edges))


def _is_connected(vertices: Sequence[int], edges: Iterable[Edge]) -> bool:
    vertices = list(vertices)
    if not vertices:
        return False
    adj: dict[int, list[int]] = {v: [] for v in vertices}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {vertices[0]}
    queue = deque([vertices[0]])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(vertices)


@dataclass(frozen=True)
class SkeletonGraph:
    num_vertices: int
    edges: tuple[Edge, ...]
    joint_names: tuple[str, ...] | None = None
    reference_joints: tuple[int, ...] = ()
    name: str = "graph"

    def __post_init__(self):
        V = self.num_vertices
        if V < 1:
            raise InvalidGraph(f"num_vertices must be positive, got {V}")
        edges = _canonical_edges(self.edges)
        for a, b in edges:
            if a == b:
                raise InvalidGraph(f"self-loop edge ({a}, {b})")
            if not (0 <= a < V and 0 <= b < V):
                raise InvalidGraph(f"edge ({a}, {b}) out of range for V={V}")
        if len(set(edges)) != len(edges):
            raise InvalidGraph("duplicate edges")
        object.__setattr__(self, "edges", edges)
        if self.joint_names is not None:
            names = tuple(self.joint_names)
            if len(names) != V:
                raise InvalidGraph(f"expected {V} joint names, got {len(names)}")
            object.__setattr__(self, "joint_names", names)
        refs = tuple(int(r) for r in self.reference_joints)
        if len(set(refs)) != len(refs) or any(not 0 <= r < V for r in refs):
            raise InvalidGraph(f"invalid reference_joints {refs}")
        object.__setattr__(self, "reference_joints", refs)
        if not _is_connected(range(V), edges):
            raise InvalidGraph("skeleton graph must be connected")

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.num_vertices, self.num_vertices))
        for a, b in self.edges:
            A[a, b] = A[b, a] = 1.0
        return A

    def relabel(self, perm: Sequence[int]) -> "SkeletonGraph":
        """Return the graph with vertex ``v`` renamed to ``perm[v]``."""
        perm = list(perm)
        names = None
        if self.joint_names is not None:
            names = [""] * self.num_vertices
            for v, name in enumerate(self.joint_names):
                names[perm[v]] = name
        return SkeletonGraph(
            self.num_vertices,
            tuple((perm[a], perm[b]) for a, b in self.edges),
            tuple(names) if names is not None else None,
            tuple(perm[r] for r in self.reference_joints),
            self.name,
        )


@dataclass(frozen=True)
class Part:
    vertices: tuple[int, ...]
    edges: tuple[Edge, ...]
    name: str = ""

    def __post_init__(self):
        if not self.vertices:
            raise InvalidGraph(f"part {self.name!r} has no vertices")
        if list(self.vertices) != sorted(set(self.vertices)):
            raise InvalidGraph(f"part {self.name!r} vertices must be sorted and unique")
        members = set(self.vertices)
        for a, b in self.edges:
            if a not in members or b not in members:
                raise InvalidGraph(f"part {self.name!r} edge ({a}, {b}) leaves the part")

    @property
    def size(self) -> int:
        return len(self.vertices)

    def local_index(self, v: int) -> int:
        try:
            return self.vertices.index(v)
        except ValueError:
            raise VertexNotInPart(f"vertex {v} not in part {self.name!r}") from None

    def adjacency(self) -> np.ndarray:
        """Binary adjacency in local (``vertices``) order."""
        pos = {v: i for i, v in enumerate(self.vertices)}
        A = np.zeros((self.size, self.size))
        for a, b in self.edges:
            A[pos[a], pos[b]] = A[pos[b], pos[a]] = 1.0
        return A


def induced_part(graph: SkeletonGraph, vertices: Iterable[int], name: str = "") -> Part:
    vs = tuple(sorted(set(int(v) for v in vertices)))
    members = set(vs)
    edges = tuple(e for e in graph.edges if e[0] in members and e[1] in members)
    return Part(vs, edges, name)


@dataclass(frozen=True)
class PartitionScheme:
    name: str
    parts: tuple[Part, ...]
    num_vertices: int
    adjacent_pairs: frozenset[tuple[int, int]] = frozenset()
    # Edges joining distinct parts; consumed by the cross-part aggregation path.
    cross_edges: tuple[Edge, ...] = ()

    @property
    def n(self) -> int:
        return len(self.parts)

    def membership_count(self) -> np.ndarray:
        counts = np.zeros(self.num_vertices, dtype=int)
        for part in self.parts:
            counts[list(part.vertices)] += 1
        return counts

    def shared_vertices(self) -> dict[tuple[int, int], tuple[int, ...]]:
        out = {}
        for i in range(self.n):
            for j in range(i + 1, self.n):
                common = sorted(set(self.parts[i].vertices) & set(self.parts[j].vertices))
                if common:
                    out[(i, j)] = tuple(common)
        return out

    def part_index(self, name: str) -> int:
        for i, part in enumerate(self.parts):
            if part.name == name:
                return i
        raise UnknownScheme(f"no part named {name!r} in scheme {self.name!r}")


@dataclass(frozen=True)
class PartSpec:
    name: str
    vertices: tuple[int, ...]
    adjacent_to: tuple[str, ...] = ()


def build_partition(
    graph: SkeletonGraph,
    parts: Sequence[PartSpec | Sequence[int]],
    name: str = "custom",
) -> PartitionScheme:
    """Validate a part description against ``graph`` and build the scheme.

    ``parts`` may be bare vertex lists (no adjacency declarations) or
    :class:`PartSpec` values. Invalid schemes raise; nothing is repaired.
    """
    specs = [
        p if isinstance(p, PartSpec) else PartSpec(f"part{i}", tuple(p))
        for i, p in enumerate(parts)
    ]
    if not specs:
        raise InvalidGraph("a partition needs at least one part")
    V = graph.num_vertices
    built = []
    for spec in specs:
        bad = [v for v in spec.vertices if not 0 <= v < V]
        if bad:
            raise InvalidGraph(f"part {spec.name!r} has out-of-range vertices {bad}")
        if len(set(spec.vertices)) != len(spec.vertices):
            raise InvalidGraph(f"part {spec.name!r} lists a vertex twice")
        part = induced_part(graph, spec.vertices, spec.name)
        if not _is_connected(part.vertices, part.edges):
            raise DisconnectedPart(f"part {spec.name!r} is not connected", part=spec.name)
        built.append(part)

    covered = set().union(*(p.vertices for p in built))
    missing = sorted(set(range(V)) - covered)
    if missing:
        raise UncoveredVertex(f"vertices {missing} belong to no part", vertices=missing)
    covered_edges = set().union(*(p.edges for p in built))
    missing_edges = [e for e in graph.edges if e not in covered_edges]
    if missing_edges:
        raise UncoveredEdge(f"edges {missing_edges} belong to no part", edges=missing_edges)

    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InvalidGraph(f"duplicate part names in scheme {name!r}")
    pairs = set()
    for i, spec in enumerate(specs):
        for other in spec.adjacent_to:
            if other not in names:
                raise ConfigParseError(f"part {spec.name!r} declares unknown neighbour {other!r}")
            j = names.index(other)
            if i == j:
                continue
            if not set(built[i].vertices) & set(built[j].vertices):
                raise NoSharedVertex(f"adjacent parts {spec.name!r} and {other!r} share no vertex")
            pairs.add((min(i, j), max(i, j)))
    return PartitionScheme(name, tuple(built), V, frozenset(pairs))


def whole_graph_scheme(graph: SkeletonGraph) -> PartitionScheme:
    return build_partition(graph, [PartSpec("body", tuple(range(graph.num_vertices)))], "one")


@dataclass(frozen=True)
class NormalizedAdjacency:
    part_index: int
    matrix: np.ndarray = field(repr=False)


def normalize_adjacency(part: Part, part_index: int = 0) -> NormalizedAdjacency:
    """Degree-symmetric normalization ``D^-1/2 A D^-1/2`` of a part's adjacency."""
    A = part.adjacency()
    deg = A.sum(axis=1)
    if np.any(deg == 0):
        isolated = [part.vertices[i] for i in np.flatnonzero(deg == 0)]
        raise ZeroDegreeVertex(f"part {part.name!r} has isolated vertices {isolated}")
    d = 1.0 / np.sqrt(deg)
    return NormalizedAdjacency(part_index, d[:, None] * A * d[None, :])


def spatial_operator(part: Part, self_loop_weight: float = 1.0) -> np.ndarray:
    """Normalized adjacency plus the root term, ``A_norm + w * I``."""
    M = normalize_adjacency(part).matrix
    return M + self_loop_weight * np.eye(part.size)


def spatial_neighborhood(part: Part, v: int) -> set[int]:
    """Vertices within one hop of ``v`` inside ``part`` (``v`` included)."""
    if v not in part.vertices:
        raise VertexNotInPart(f"vertex {v} not in part {part.name!r}")
    out = {v}
    for a, b in part.edges:
        if a == v:
            out.add(b)
        elif b == v:
            out.add(a)
    return out


def temporal_neighborhood(t_a: int, tau: int, T: int) -> list[int]:
    half = tau // 2
    return [t for t in range(t_a - half, t_a + half + 1) if 0 <= t < T]


@dataclass(frozen=True)
class LabelingFunctions:
    tau: int = 9
    spatial_label_count: int = 1

    def __post_init__(self):
        if self.tau < 1 or self.tau % 2 == 0:
            raise ValueError(f"tau must be an odd positive integer, got {self.tau}")

    @property
    def temporal_label_count(self) -> int:
        return self.tau

    def spatial_label(self, root: int, neighbor: int) -> int:
        return 0

    def temporal_label(self, t_a: int, t_b: int) -> int:
        offset = t_b - t_a
        half = self.tau // 2
        if abs(offset) > half:
            raise ValueError(f"frame offset {offset} outside receptive field of tau={self.tau}")
        return offset + half


# ---------------------------------------------------------------- config

_GRAPH_KEYS = {"name", "num_vertices", "edges", "joint_names", "reference_joints"}
_PART_KEYS = {"scheme", "name", "vertices", "adjacent_to"}
_TOP_KEYS = {"graph", "part"}


@dataclass(frozen=True)
class Topology:
    graph: SkeletonGraph
    schemes: Mapping[str, PartitionScheme]

    def scheme(self, name: str) -> PartitionScheme:
        try:
            return self.schemes[name]
        except KeyError:
            raise UnknownScheme(
                f"scheme {name!r} not defined; available: {sorted(self.schemes)}"
            ) from None


def _check_keys(table: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigParseError(f"unknown keys in {where}: {sorted(unknown)}")


def parse_topology(doc: Mapping) -> Topology:
    _check_keys(doc, _TOP_KEYS, "top level")
    if "graph" not in doc:
        raise ConfigParseError("missing [graph] section")
    g = doc["graph"]
    _check_keys(g, _GRAPH_KEYS, "[graph]")
    for key in ("num_vertices", "edges"):
        if key not in g:
            raise ConfigParseError(f"[graph] is missing {key!r}")
    graph = SkeletonGraph(
        num_vertices=int(g["num_vertices"]),
        edges=tuple(tuple(e) for e in g["edges"]),
        joint_names=tuple(g["joint_names"]) if "joint_names" in g else None,
        reference_joints=tuple(g.get("reference_joints", ())),
        name=g.get("name", "graph"),
    )
    grouped: dict[str, list[PartSpec]] = {}
    for i, p in enumerate(doc.get("part", [])):
        _check_keys(p, _PART_KEYS, f"[[part]] #{i}")
        for key in ("scheme", "name", "vertices"):
            if key not in p:
                raise ConfigParseError(f"[[part]] #{i} is missing {key!r}")
        if p["scheme"] == "one":
            raise ConfigParseError("scheme 'one' is reserved for the whole graph")
        grouped.setdefault(p["scheme"], []).append(
            PartSpec(p["name"], tuple(int(v) for v in p["vertices"]), tuple(p.get("adjacent_to", ())))
        )
    schemes = {"one": whole_graph_scheme(graph)}
    for name, specs in grouped.items():
        schemes[name] = build_partition(graph, specs, name)
    return Topology(graph, schemes)


def load_topology(path: str | Path) -> Topology:
    """Load a topology file, or a bundled one by bare name (``ntu25``, ``toy5``)."""
    path = Path(path)
    if not path.exists() and path.suffix == "" and path.parent == Path("."):
        bundled = resources.files("pbgcn") / "configs" / f"{path.name}.toml"
        if not bundled.is_file():
            raise ConfigParseError(f"no topology file {path} and no bundled topology of that name")
        text = bundled.read_text()
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigParseError(f"cannot read topology {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    return parse_topology(doc)

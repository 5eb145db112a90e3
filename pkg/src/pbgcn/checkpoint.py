"""Versioned binary checkpoint container.

Byte layout (all integers little-endian)::

    8 bytes   magic  b"PBGCNCKP"
    u32       format version (currently 1)
    u64       header length H
    H bytes   UTF-8 JSON header
    ...       tensor payloads, concatenated, raw little-endian

The header echoes the network config, the topology and partition the model
was built on, fixed modelling decisions (temporal padding, self-loop rule),
and a tensor table of ``{name, shape, dtype, offset, nbytes}`` entries whose
offsets are relative to the start of the payload section.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch
from .graph import PartitionScheme, PartSpec, SkeletonGraph, build_partition, whole_graph_scheme
from .network import NetworkConfig, PBGCN

MAGIC = b"PBGCNCKP"
VERSION = 1


def _decisions(config: NetworkConfig) -> dict:
    return {
        "temporal_padding": "zero",
        "self_loop": "normalized_adjacency_plus_weighted_identity",
        "self_loop_weight": config.self_loop_weight,
        "layout": "N,C,T,V,M",
    }


def _scheme_doc(scheme: PartitionScheme) -> dict:
    pairs = sorted(scheme.adjacent_pairs)
    parts = []
    for i, part in enumerate(scheme.parts):
        adj = [scheme.parts[b if a == i else a].name for a, b in pairs if i in (a, b)]
        parts.append({"name": part.name, "vertices": list(part.vertices), "adjacent_to": adj})
    return {"name": scheme.name, "parts": parts}


def save_checkpoint(model: PBGCN, path: str | Path, graph: SkeletonGraph, extra: dict | None = None) -> None:
    tensors = {name: t.data for name, t in model.parameters().items()}
    tensors.update({f"buffer.{k}": v for k, v in model.buffers().items()})
    table, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "config": model.config.to_dict(),
        "graph": {
            "name": graph.name,
            "num_vertices": graph.num_vertices,
            "edges": [list(e) for e in graph.edges],
            "joint_names": list(graph.joint_names) if graph.joint_names else None,
            "reference_joints": list(graph.reference_joints),
        },
        "scheme": _scheme_doc(model.scheme),
        "decisions": _decisions(model.config),
        "tensors": table,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointMismatch(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    payload = start + hlen
    arrays = {}
    for entry in header["tensors"]:
        lo = payload + entry["offset"]
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"]), count=int(np.prod(entry["shape"], dtype=int)), offset=lo)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(arr.dtype.newbyteorder("="))
    return header, arrays


def load_checkpoint(path: str | Path, expected: NetworkConfig | None = None) -> tuple[PBGCN, SkeletonGraph, dict]:
    """Rebuild a model from ``path``.

    If ``expected`` is given, every config field must match the stored echo.
    """
    header, arrays = read_checkpoint(path)
    config = NetworkConfig.from_dict(header["config"])
    if expected is not None and expected.to_dict() != config.to_dict():
        diff = sorted(k for k, v in expected.to_dict().items() if header["config"].get(k) != v)
        raise CheckpointMismatch(f"checkpoint config differs in {diff}")
    if header["decisions"] != _decisions(config):
        raise CheckpointMismatch("checkpoint was written under different modelling decisions")
    g = header["graph"]
    graph = SkeletonGraph(
        g["num_vertices"],
        tuple(tuple(e) for e in g["edges"]),
        tuple(g["joint_names"]) if g["joint_names"] else None,
        tuple(g["reference_joints"]),
        g["name"],
    )
    sdoc = header["scheme"]
    if sdoc["name"] == "one" and len(sdoc["parts"]) == 1:
        scheme = whole_graph_scheme(graph)
    else:
        scheme = build_partition(
            graph,
            [PartSpec(p["name"], tuple(p["vertices"]), tuple(p["adjacent_to"])) for p in sdoc["parts"]],
            sdoc["name"],
        )
    model = PBGCN(config, scheme)
    params = model.parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise CheckpointMismatch(f"checkpoint lacks tensors {sorted(missing)}")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise CheckpointMismatch(f"tensor {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name].copy()
    model.feature_mean = arrays["buffer.feature_mean"].copy()
    model.feature_std = arrays["buffer.feature_std"].copy()
    return model, graph, header.get("extra", {})

"""Reference implementations written independently of the package internals.

Nothing here imports the tensor engine; each oracle works from plain numpy
and textbook definitions so that it can catch errors in the code under test.
"""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np


# ---------------------------------------------------------------- graphs


def bfs_distances(n: int, edges, source: int) -> dict[int, int]:
    adj = {v: set() for v in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def normalized_adjacency_loops(n: int, edges) -> np.ndarray:
    """D^-1/2 A D^-1/2 written entry by entry."""
    deg = [0] * n
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    out = np.zeros((n, n))
    for a, b in edges:
        out[a, b] = out[b, a] = 1.0 / np.sqrt(deg[a] * deg[b])
    return out


def power_iteration_radius(m: np.ndarray, iters: int = 2000, seed: int = 0) -> float:
    """Largest |eigenvalue| of a symmetric matrix without calling an eigensolver."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=m.shape[0])
    v /= np.linalg.norm(v)
    # Iterate on m^2 so that +/- lambda pairs do not stall convergence.
    m2 = m @ m
    lam = 0.0
    for _ in range(iters):
        w = m2 @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        lam = norm
    return float(np.sqrt(lam))


def random_connected_graph(rng: np.random.Generator, n: int, extra: float = 0.3):
    """A random spanning tree plus random extra edges."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        edges.add((min(a, b), max(a, b)))
    for a, b in itertools.combinations(range(n), 2):
        if rng.random() < extra:
            edges.add((a, b))
    return sorted(edges)


# ----------------------------------------------------------- finite differences


def finite_difference(f, arrays, eps: float = 1e-3):
    """Central differences of scalar ``f()`` wrt every entry of each array (mutated in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest numeric magnitude of the group."""
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


# ------------------------------------------------------------- plain ST-GCN


def _tconv(x, w, b, stride):
    """x [N, C, T, V, M], w [O, C, tau]; zero padding, taps read stride*t + d - tau//2."""
    N, C, T, V, M = x.shape
    O, _, tau = w.shape
    half = tau // 2
    t_out = -(-T // stride)
    out = np.zeros((N, O, t_out, V, M))
    for t in range(t_out):
        for d in range(tau):
            src = stride * t + d - half
            if 0 <= src < T:
                out[:, :, t] += np.einsum("oc,ncvm->novm", w[:, :, d], x[:, :, src])
    return out + b[None, :, None, None, None]


def plain_stgcn_forward(model, edges, x: np.ndarray, body_mask: np.ndarray, self_loop: float = 1.0) -> np.ndarray:
    """Whole-graph spatial convolution followed by temporal convolution, unit by unit.

    Reads the weights out of a single-part ``model``, builds the graph
    operator from ``edges`` and recomputes the logits with dense einsums over
    the layout [N, C, T, V, M].
    """
    N, C, T, V, M = x.shape
    a_hat = normalized_adjacency_loops(V, edges) + self_loop * np.eye(V)
    mask = body_mask.astype(float)
    mean = model.feature_mean.reshape(1, C, 1, 1, 1)
    std = model.feature_std.reshape(1, C, 1, 1, 1)
    h = (x - mean) / std * mask[:, None, None, None, :]
    h = np.einsum("oc,nctvm->notvm", model.head_w.data, h) + model.head_b.data[None, :, None, None, None]
    for unit in model.units:
        (w,) = unit.part_weights
        (m,) = unit.edge_masks
        op = a_hat * m.data
        z = np.einsum("oc,nctvm->notvm", w.data, h)
        y = unit.agg.data[0] * np.einsum("ij,nctjm->nctim", op, z)
        t = _tconv(np.maximum(y, 0), unit.temporal_w.data, unit.temporal_b.data, unit.stride)
        if unit.residual_w is None:
            res = h
        else:
            res = _tconv(h, unit.residual_w.data, unit.residual_b.data, unit.stride)
        h = np.maximum(t + res, 0)
    pooled = h.mean(axis=(2, 3))  # [N, C, M]
    counts = mask.sum(axis=1)
    body_mean = np.einsum("ncm,nm->nc", pooled, mask) / np.maximum(counts, 1)[:, None]
    return body_mean @ model.cls_w.data.T + model.cls_b.data


# ------------------------------------------------------------ evaluation


def brute_force_confused_pairs(counts: np.ndarray, top_k=None):
    """Repeatedly pull the largest remaining off-diagonal cell (first in row-major order on ties)."""
    c = np.array(counts, dtype=np.int64)
    np.fill_diagonal(c, 0)
    out = []
    while c.max(initial=0) > 0 and (top_k is None or len(out) < top_k):
        best = None
        for i in range(c.shape[0]):
            for j in range(c.shape[1]):
                if c[i, j] > 0 and (best is None or c[i, j] > c[best]):
                    best = (i, j)
        out.append((best[0], best[1], int(c[best])))
        c[best] = 0
    return out


def part_energy_classifier(dt: np.ndarray, parts) -> int:
    """Index of the part whose vertices carry the most temporal-displacement energy.

    ``dt`` is [C, T, V, M]; energy is averaged over each part's vertices.
    """
    energy = np.sum(dt**2, axis=(0, 1, 3))
    return int(np.argmax([energy[list(p)].mean() for p in parts]))

"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the part-based network needs are provided. Operations
are recorded on the innermost active :class:`Tape`; outside of a tape they
just compute forward values::

    with Tape() as tape:
        y = channel_transform(x, w, axis=0)
        loss = sum_all(y)
    tape.backward(loss)
    w.grad

Broadcasting is deliberately limited to bias addition and scalar scaling;
any other shape disagreement raises :class:`~pbgcn.errors.ShapeMismatch`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidLabel, NonScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Op:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations."""

    _active: list["Tape"] = []

    def __init__(self):
        self.ops: list[_Op] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.remove(self)

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._active[-1] if cls._active else None

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into ``.grad`` of every recorded input.

        Ops are visited in exact reverse recording order. Gradients add onto
        whatever is already in ``.grad`` so that several tapes (data shards)
        can contribute to the same parameters.
        """
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        produced = {id(op.output) for op in self.ops}
        for op in reversed(self.ops):
            g = op.output.grad
            if g is None:
                continue
            for inp, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is not None:
                    inp.grad = inp.grad + gi
                elif id(inp) in produced:
                    inp.grad = gi
                else:
                    # Leaves keep a private buffer; backward rules may hand the
                    # same array to several inputs.
                    inp.grad = np.array(gi, copy=True)


def _record(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = Tape.current()
    if out.requires_grad and tape is not None:
        tape.ops.append(_Op(tuple(inputs), out, backward))
    return out


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


# ------------------------------------------------------------------ linear maps


def _split(shape: tuple[int, ...], axis: int) -> tuple[int, int, int]:
    lead = int(np.prod(shape[:axis], dtype=int))
    rest = int(np.prod(shape[axis + 1 :], dtype=int))
    return lead, shape[axis], rest


def _contract(m: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    """Apply matrix ``m`` [out x in] along ``axis`` of ``x``."""
    lead, c, rest = _split(x.shape, axis)
    out_shape = x.shape[:axis] + (m.shape[0],) + x.shape[axis + 1 :]
    if rest == 1:
        return (x.reshape(lead, c) @ m.T).reshape(out_shape)
    return np.matmul(m, x.reshape(lead, c, rest)).reshape(out_shape)


def _outer(g: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    """Sum over every axis except ``axis`` of g (x) x -> [g_axis x x_axis]."""
    lead, c, rest = _split(x.shape, axis)
    o = g.shape[axis]
    if rest == 1:
        return g.reshape(lead, o).T @ x.reshape(lead, c)
    g3, x3 = g.reshape(lead, o, rest), x.reshape(lead, c, rest)
    if lead == 1:
        return g3[0] @ x3[0].T
    return np.matmul(g3, x3.transpose(0, 2, 1)).sum(axis=0)


def _bias_shape(ndim: int, axis: int, c: int) -> tuple[int, ...]:
    shape = [1] * ndim
    shape[axis] = c
    return tuple(shape)


def channel_transform(x: Tensor, w: Tensor, b: Tensor | None = None, axis: int = 0) -> Tensor:
    """Pointwise channel map ``y = w . x (+ b)`` along ``axis`` of ``x``."""
    axis = axis % x.ndim
    if w.ndim != 2 or w.shape[1] != x.shape[axis]:
        raise ShapeMismatch(f"weight {w.shape} cannot act on axis {axis} of {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias {b.shape} does not match output channels {w.shape[0]}")
    y = _contract(w.data, x.data, axis)
    if b is not None:
        y = y + b.data.reshape(_bias_shape(y.ndim, axis, w.shape[0]))

    def backward(g):
        gx = _contract(w.data.T, g, axis) if x.requires_grad else None
        gw = _outer(g, x.data, axis) if w.requires_grad else None
        if b is None:
            return gx, gw
        others = tuple(i for i in range(g.ndim) if i != axis)
        return gx, gw, g.sum(axis=others)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(y, inputs, backward)


def graph_mix(z: Tensor, op: Tensor, axis: int = -2) -> Tensor:
    """Mix along the vertex axis: ``y[..., i, ...] = sum_j op[i, j] z[..., j, ...]``."""
    axis = axis % z.ndim
    if op.ndim != 2 or op.shape[1] != z.shape[axis]:
        raise ShapeMismatch(f"operator {op.shape} cannot act on axis {axis} of {z.shape}")
    y = _contract(op.data, z.data, axis)

    def backward(g):
        gz = _contract(op.data.T, g, axis) if z.requires_grad else None
        gop = _outer(g, z.data, axis) if op.requires_grad else None
        return gz, gop

    return _record(y, (z, op), backward)


def temporal_conv(
    y: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, axis: int = 0
) -> Tensor:
    """Zero-padded temporal convolution.

    ``axis`` is the channel axis; time is the axis right after it. ``w`` has
    shape [C_out, C_in, tau] with tau odd, and tap ``d`` reads frame
    ``stride * t + d - tau // 2``. Output length is ``ceil(T / stride)``.
    """
    axis = axis % y.ndim
    taxis = axis + 1
    if taxis >= y.ndim:
        raise ShapeMismatch("temporal_conv needs a time axis after the channel axis")
    if w.ndim != 3 or w.shape[1] != y.shape[axis]:
        raise ShapeMismatch(f"kernel {w.shape} does not match input channels of {y.shape}")
    c_out, c_in, tau = w.shape
    if tau % 2 == 0:
        raise ShapeMismatch(f"temporal kernel size must be odd, got {tau}")
    if b is not None and b.shape != (c_out,):
        raise ShapeMismatch(f"bias {b.shape} does not match output channels {c_out}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    half = tau // 2
    lead, _, T_rest = _split(y.shape, axis)
    T = y.shape[taxis]
    rest = T_rest // T if T else 0
    t_out = -(-T // stride)
    ypad = np.zeros((lead, c_in, T + 2 * half, rest), dtype=y.dtype)
    ypad[:, :, half : half + T] = y.data.reshape(lead, c_in, T, rest)
    # im2col over the output frames only: cols[(i, d), (n, t, r)] = ypad[n, i, stride*t + d, r]
    win = sliding_window_view(ypad, tau, axis=2)[:, :, ::stride]
    cols = np.ascontiguousarray(win.transpose(1, 4, 0, 2, 3)).reshape(c_in * tau, -1)
    w2 = w.data.reshape(c_out, c_in * tau)
    out = (w2 @ cols).reshape(c_out, lead, t_out, rest).transpose(1, 0, 2, 3)
    out_shape = y.shape[:axis] + (c_out, t_out) + y.shape[taxis + 1 :]
    out = out.reshape(out_shape)
    if b is not None:
        out = out + b.data.reshape(_bias_shape(out.ndim, axis, c_out))

    def backward(g):
        g2 = g.reshape(lead, c_out, t_out, rest).transpose(1, 0, 2, 3).reshape(c_out, -1)
        gy = gw = None
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(w.shape)
        if y.requires_grad:
            gcols = (w2.T @ g2).reshape(c_in, tau, lead, t_out, rest)
            gpad = np.zeros_like(ypad)
            span = stride * (t_out - 1) + 1
            for d in range(tau):
                gpad[:, :, d : d + span : stride] += gcols[:, d].transpose(1, 0, 2, 3)
            gy = gpad[:, :, half : half + T].reshape(y.shape)
        if b is None:
            return gy, gw
        others = tuple(i for i in range(g.ndim) if i != axis)
        return gy, gw, g.sum(axis=others)

    inputs = (y, w) if b is None else (y, w, b)
    return _record(out, inputs, backward)


# ------------------------------------------------------------- index plumbing


def take(x: Tensor, index: Sequence[int], axis: int) -> Tensor:
    """Gather ``x`` at ``index`` along ``axis``."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    n = x.shape[axis]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeMismatch(f"index out of range for axis of length {n}")
    unique = len(set(index.tolist())) == len(index)
    sel = [slice(None)] * x.ndim
    sel[axis] = index
    sel = tuple(sel)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        if unique:
            gx[sel] = g
        else:
            np.add.at(gx, sel, g)
        return (gx,)

    return _record(np.take(x.data, index, axis=axis), (x,), backward)


def scatter(x: Tensor, index: Sequence[int], size: int, axis: int) -> Tensor:
    """Place ``x`` into a zero tensor of length ``size`` along ``axis``.

    ``index`` must not repeat.
    """
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    if x.shape[axis] != len(index):
        raise ShapeMismatch(f"{len(index)} indices for axis of length {x.shape[axis]}")
    if len(set(index.tolist())) != len(index):
        raise ValueError("scatter indices must be unique")
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=x.dtype)
    sel = [slice(None)] * x.ndim
    sel[axis] = index
    sel = tuple(sel)
    out[sel] = x.data

    def backward(g):
        return (g[sel],)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _record(np.maximum(x.data, 0), (x,), lambda g: (g * on,))


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply ``x`` by the single value held in ``s``."""
    if s.data.size != 1:
        raise ShapeMismatch(f"scale expects a one-element tensor, got {s.shape}")
    sv = s.data.reshape(())

    def backward(g):
        return g * sv, np.sum(g * x.data).reshape(s.shape)

    return _record(x.data * sv, (x, s), backward)


def weighted_sum(xs: Sequence[Tensor], w: Tensor) -> Tensor:
    """``sum_p w[p] * xs[p]`` for same-shaped inputs."""
    if w.shape != (len(xs),):
        raise ShapeMismatch(f"{len(xs)} terms but weight shape {w.shape}")
    for x in xs[1:]:
        _check_same_shape(xs[0], x, "weighted_sum")
    out = sum(w.data[p] * x.data for p, x in enumerate(xs))

    def backward(g):
        grads = [g * w.data[p] if x.requires_grad else None for p, x in enumerate(xs)]
        gw = np.array([np.sum(g * x.data) for x in xs], dtype=w.dtype)
        return (*grads, gw)

    return _record(out, (*xs, w), backward)


def sum_all(x: Tensor) -> Tensor:
    return _record(np.sum(x.data).reshape(()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def global_average_pool(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape) / count,)

    return _record(x.data.mean(axis=axes), (x,), backward)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of ``x`` [N, M, C] using validity ``mask`` [N, M].

    Rows with no valid entry produce zeros.
    """
    mask = np.asarray(mask, dtype=x.dtype)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeMismatch(f"mask {mask.shape} does not fit {x.shape}")
    wts = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    wts = wts[:, :, None]
    return _record((x.data * wts).sum(axis=1), (x,), lambda g: (g[:, None, :] * wts,))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of ``logits`` [N, K] (or [K]) against integer labels."""
    z = logits.data
    single = z.ndim == 1
    if single:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    K = z.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or np.any((labels < 0) | (labels >= K)):
        raise InvalidLabel(f"labels must be integers in [0, {K})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    n = z.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        gz = p * (g / n)
        return (gz[0] if single else gz,)

    return _record(np.asarray(loss, dtype=z.dtype), (logits,), backward)

"""Reverse-mode automatic differentiation over dense float64 arrays.

The op set is deliberately small: exactly what a branch/trunk operator
network and a Gaussian variational objective need. Ops compute eagerly
with numpy; while a :class:`Graph` is active (``with Graph() as g:``) each
op also appends one record to the tape, and ``g.backward(loss)`` replays
the tape in reverse to accumulate exact gradients into the ``grad`` field
of every leaf tensor. Tapes are meant to live for one training step and
be discarded.

Broadcasting follows numpy rules; gradients of broadcast operands are
summed back to the operand's shape. In practice the models only broadcast
over a leading Monte-Carlo/batch axis and over bias vectors.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

_node_ids = itertools.count()
_active_graphs: list["Graph"] = []


class NumericFault(ArithmeticError):
    """An op produced or received a numerically invalid value."""


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    Tensors are differentiable by default; wrap large constant data
    (inputs, targets, frozen noise) with ``constant`` so ops feeding only
    on constants stay off the tape.
    """

    __slots__ = ("data", "grad", "node_id", "requires_grad")

    def __init__(self, data, requires_grad: bool = True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, node_id={self.node_id})"

    # Operator sugar; scalars go through the affine op so the tape stays small.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return negate(self)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return subtract(self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))


class _Record:
    __slots__ = ("op", "inputs", "output_id", "backward")

    def __init__(self, op, inputs, output_id, backward):
        self.op = op
        self.inputs = inputs
        self.output_id = output_id
        self.backward = backward


class Graph:
    """Tape of recorded ops, in execution (topological) order."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Graph":
        _active_graphs.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_graphs.remove(self)

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> dict[int, np.ndarray]:
        """Reverse pass from a scalar loss.

        Accumulates into ``t.grad`` for every leaf tensor reachable from
        the loss and returns the full leaf gradient map keyed by node_id.
        Leaves in ``params`` that are unreachable get explicit zeros.
        """
        if loss.data.shape != ():
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.data.shape}")
        produced = {rec.output_id for rec in self.records}
        flowing: dict[int, np.ndarray] = {loss.node_id: np.ones(())}
        leaf_grads: dict[int, np.ndarray] = {}
        leaf_tensors: dict[int, Tensor] = {}
        if loss.node_id not in produced:
            leaf_grads[loss.node_id] = flowing[loss.node_id]
            leaf_tensors[loss.node_id] = loss
        for rec in reversed(self.records):
            out_grad = flowing.pop(rec.output_id, None)
            if out_grad is None:
                continue
            for tensor, grad in zip(rec.inputs, rec.backward(out_grad)):
                if grad is None:
                    continue
                store = flowing if tensor.node_id in produced else leaf_grads
                prev = store.get(tensor.node_id)
                store[tensor.node_id] = grad if prev is None else prev + grad
                if store is leaf_grads:
                    leaf_tensors[tensor.node_id] = tensor
        for node_id, grad in leaf_grads.items():
            tensor = leaf_tensors[node_id]
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
        for tensor in params or ():
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            leaf_grads.setdefault(tensor.node_id, np.zeros_like(tensor.data))
        return leaf_grads


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(data) -> Tensor:
    """Leaf tensor excluded from gradient tracking."""
    return Tensor(data, requires_grad=False)


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward: Callable[[np.ndarray], tuple]) -> Tensor:
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked and _active_graphs:
        _active_graphs[-1].records.append(_Record(op, inputs, out.node_id, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if need_a else None,
                _unbroadcast(g, b.data.shape) if need_b else None)

    return _record("add", (a, b), a.data + b.data, backward)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("subtract", a, b)
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if need_a else None,
                _unbroadcast(-g, b.data.shape) if need_b else None)

    return _record("subtract", (a, b), a.data - b.data, backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("multiply", a, b)
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape) if need_a else None,
                _unbroadcast(g * a.data, b.data.shape) if need_b else None)

    return _record("multiply", (a, b), a.data * b.data, backward)


def negate(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _record("negate", (x,), -x.data, lambda g: (-g,))


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    x = _as_tensor(x)
    scale = float(scale)
    return _record("affine", (x,), scale * x.data + float(shift), lambda g: (scale * g,))


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _record("square", (x,), x.data * x.data, lambda g: (2.0 * x.data * g,))


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    if not np.all(np.isfinite(out)):
        raise NumericFault("exp: overflow to non-finite value")
    return _record("exp", (x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0.0):
        raise NumericFault("log: argument has non-positive entries")
    return _record("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def softplus_values(x: np.ndarray) -> np.ndarray:
    """Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|))."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _record("softplus", (x,), softplus_values(x.data),
                   lambda g: (g * sigmoid_values(np.asarray(x.data, dtype=np.float64)),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: batch dimensions incompatible, {a.shape} vs {b.shape}") from None
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if need_b:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _record("matmul", (a, b), out, backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = axis if axis is None or isinstance(axis, tuple) else (axis,)

    def backward(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape),)

    return _record("sum", (x,), np.sum(x.data, axis=axes, keepdims=keepdims), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = axis if axis is None or isinstance(axis, tuple) else (axis,)
    if axes is None:
        count = x.data.size
    else:
        count = int(np.prod([x.data.shape[ax] for ax in axes]))

    def backward(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.data.shape),)

    return _record("mean", (x,), np.mean(x.data, axis=axes, keepdims=keepdims), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not 0 <= start <= stop <= x.shape[-1]:
        raise ShapeMismatch(f"slice_last: [{start}:{stop}] out of range for last axis of {x.shape}")

    def backward(g):
        full = np.zeros(x.data.shape)
        full[..., start:stop] = g
        return (full,)

    return _record("slice_last", (x,), x.data[..., start:stop], backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {x.shape} as {shape}") from None
    return _record("reshape", (x,), out, lambda g: (g.reshape(x.data.shape),))


def gaussian_log_pdf(x, mu, sigma) -> Tensor:
    """Elementwise log N(x; mu, sigma); operands broadcast together."""
    x, mu, sigma = _as_tensor(x), _as_tensor(mu), _as_tensor(sigma)
    if np.any(sigma.data <= 0.0):
        raise NumericFault("gaussian_log_pdf: sigma has non-positive entries")
    _check_broadcast("gaussian_log_pdf", x, mu)
    with np.errstate(over="ignore"):
        z = (x.data - mu.data) / sigma.data
        out = -0.5 * LOG_2PI - np.log(sigma.data) - 0.5 * z * z
    if not np.all(np.isfinite(out)):
        raise NumericFault("gaussian_log_pdf: non-finite log density")
    need = (x.requires_grad, mu.requires_grad, sigma.requires_grad)

    def backward(g):
        score = g * z / sigma.data
        gx = _unbroadcast(-score, x.data.shape) if need[0] else None
        gmu = _unbroadcast(score, mu.data.shape) if need[1] else None
        gsig = _unbroadcast(g * (z * z - 1.0) / sigma.data, sigma.data.shape) if need[2] else None
        return gx, gmu, gsig

    return _record("gaussian_log_pdf", (x, mu, sigma), out, backward)


def log_sum_exp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along one axis (max subtracted before exp)."""
    x = _as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericFault("log_sum_exp: non-finite input")
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = np.exp(x.data - m)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    weights = shifted / total

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return _record("log_sum_exp", (x,), out, backward)


def pairdot(coeff: Tensor, basis: Tensor) -> Tensor:
    """Dot product over the trailing latent axis of coefficient/basis stacks.

    coeff has shape (..., N1, P). A basis of shape (..., N2, P) is shared
    across the N1 rows and yields (..., N1, N2); a basis of shape
    (..., N1, N2, P) is per-row and yields the same output shape. Leading
    dims must match exactly.
    """
    coeff, basis = _as_tensor(coeff), _as_tensor(basis)
    if coeff.shape[-1] != basis.shape[-1]:
        raise ShapeMismatch(f"pairdot: latent dims differ, {coeff.shape} vs {basis.shape}")
    need_c, need_b = coeff.requires_grad, basis.requires_grad
    if basis.ndim == coeff.ndim:
        if coeff.shape[:-2] != basis.shape[:-2]:
            raise ShapeMismatch(f"pairdot: leading dims differ, {coeff.shape} vs {basis.shape}")
        out = np.matmul(coeff.data, np.swapaxes(basis.data, -1, -2))

        def backward(g):
            gc = np.matmul(g, basis.data) if need_c else None
            gb = np.matmul(np.swapaxes(g, -1, -2), coeff.data) if need_b else None
            return gc, gb

    elif basis.ndim == coeff.ndim + 1:
        if coeff.shape[:-1] != basis.shape[:-2]:
            raise ShapeMismatch(f"pairdot: leading dims differ, {coeff.shape} vs {basis.shape}")
        out = np.sum(coeff.data[..., :, None, :] * basis.data, axis=-1)

        def backward(g):
            gc = np.sum(g[..., :, :, None] * basis.data, axis=-2) if need_c else None
            gb = g[..., :, :, None] * coeff.data[..., :, None, :] if need_b else None
            return gc, gb

    else:
        raise ShapeMismatch(f"pairdot: rank mismatch, {coeff.shape} vs {basis.shape}")
    return _record("pairdot", (coeff, basis), out, backward)


def dense(x: Tensor, w: Tensor, b: Tensor, activation: str = "tanh") -> Tensor:
    """Fused affine layer: activation(x @ w + b), one tape record.

    Equivalent to tanh(add(matmul(x, w), b)) but avoids the intermediate
    arrays; activation is "tanh" or "identity".
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if activation not in ("tanh", "identity"):
        raise ValueError(f"unknown activation {activation!r}")
    if x.ndim < 2 or w.ndim < 2 or x.shape[-1] != w.shape[-2]:
        raise ShapeMismatch(f"dense: incompatible shapes {x.shape} @ {w.shape}")
    try:
        pre = np.matmul(x.data, w.data)
        pre += b.data
    except ValueError:
        raise ShapeMismatch(f"dense: shapes {x.shape}, {w.shape}, {b.shape} do not combine") from None
    out = np.tanh(pre) if activation == "tanh" else pre
    need_x, need_w, need_b = x.requires_grad, w.requires_grad, b.requires_grad

    def backward(g):
        gh = g * (1.0 - out * out) if activation == "tanh" else g
        gx = _unbroadcast(np.matmul(gh, np.swapaxes(w.data, -1, -2)), x.data.shape) if need_x else None
        gw = _unbroadcast(np.matmul(np.swapaxes(x.data, -1, -2), gh), w.data.shape) if need_w else None
        gb = _unbroadcast(gh, b.data.shape) if need_b else None
        return gx, gw, gb

    return _record("dense", (x, w, b), out, backward)


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` must rebuild and return the scalar objective from the current
    values of ``params`` each time it is called. Probe evaluations run
    without an active graph. Relative error per component is
    |g_ad - g_fd| / max(1, |g_fd|).
    """
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Graph() as graph:
        loss = f()
    if loss.data.shape != ():
        raise ShapeMismatch("gradcheck expects a scalar objective")
    graph.backward(loss, params)
    worst = 0.0
    for p in params:
        g_ad = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericFault("gradcheck: objective non-finite at probe point")
            g_fd = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, abs(g_ad[i] - g_fd) / max(1.0, abs(g_fd)))
    return worst

"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Graph` is an append-only tape of operation records. Ops record
a node whenever a graph is active and any input requires gradients;
append order is the topological order, so :func:`backward` simply walks
the tape in reverse and calls each node's local-derivative closure
exactly once.

Elementwise/reduction hot loops (GELU, softmax, layernorm) dispatch to
the selected kernel backend; matmul stays on NumPy's BLAS.

Every operation validates that its output is finite (NaN/Inf is an
error state); set KDLAB_FINITE_CHECKS=0 to disable the scan.
"""

from __future__ import annotations

import math
import os
from typing import Callable, Iterable

import numpy as np

from kdlab.backend import kernels
from kdlab.errors import (
    ContractError,
    NonFiniteError,
    ParameterError,
    ShapeError,
    UnreliableCheckError,
)

_FINITE_CHECKS = os.environ.get("KDLAB_FINITE_CHECKS", "1") != "0"


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """Dense multi-dimensional float64 array, optionally differentiable."""

    __slots__ = ("data", "grad", "requires_grad", "produced")

    def __init__(self, data, requires_grad: bool = False, _produced: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.produced = _produced  # True when created by a recorded op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division not supported; use reciprocal ops")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One operation record: inputs, output, local-derivative closure."""

    __slots__ = ("inputs", "output", "bwd")

    def __init__(self, inputs: tuple, output: Tensor, bwd: Callable):
        self.inputs = inputs
        self.output = output
        self.bwd = bwd


class Graph:
    """Append-only tape; topological order is append order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False


class _NoGrad:
    def __enter__(self):
        _GRAPH_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _GRAPH_STACK.pop()
        return False


def no_grad() -> _NoGrad:
    """Context suppressing tape recording."""
    return _NoGrad()


_GRAPH_STACK: list = []


def _current_graph():
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op}")


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    """Wrap op output; append a tape node when gradients are needed."""
    _check_finite(out_data, op)
    graph = _current_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track, _produced=track)
    if track:
        graph.nodes.append(Node(inputs, out, bwd))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # own the buffer; g may be shared
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# operations


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(gout, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(gout, b.data.shape))

    return _record("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(gout, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-gout, b.data.shape))

    return _record("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(gout * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(gout * a.data, b.data.shape))

    return _record("mul", out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, gout * s)

    return _record("scale", out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul requires tensors of rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def bwd(gout):
        if a.requires_grad:
            ga = gout @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ gout
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _record("matmul", out, (a, b), bwd)


def transpose_last(a: Tensor) -> Tensor:
    out = np.swapaxes(a.data, -1, -2).copy()

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, np.swapaxes(gout, -1, -2))

    return _record("transpose_last", out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, gout.reshape(a.data.shape))

    return _record("reshape", out, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(gout):
        if not a.requires_grad:
            return
        g = np.asarray(gout)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _record("sum", np.asarray(out), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        denom = a.data.size
    else:
        denom = a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / denom)


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, gout * out)

    return _record("exp", out, (a,), bwd)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, gout / a.data)

    return _record("log", out, (a,), bwd)


def _rows(arr: np.ndarray) -> np.ndarray:
    """Flatten leading dims to a C-contiguous (rows, lastdim) view."""
    return np.ascontiguousarray(arr).reshape(-1, arr.shape[-1])


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x), elementwise."""
    x2 = _rows(a.data)
    out = kernels.gelu_fwd(x2).reshape(a.data.shape)

    def bwd(gout):
        if a.requires_grad:
            g = kernels.gelu_bwd(x2, _rows(gout)).reshape(a.data.shape)
            _accumulate(a, g)

    return _record("gelu", out, (a,), bwd)


def softmax_t(a: Tensor, tau: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis, with max-subtraction."""
    if tau <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    x2 = _rows(a.data)
    y2 = kernels.softmax_fwd(x2, float(tau))
    out = y2.reshape(a.data.shape)

    def bwd(gout):
        if a.requires_grad:
            g = kernels.softmax_bwd(y2, _rows(gout), float(tau))
            _accumulate(a, g.reshape(a.data.shape))

    return _record("softmax_t", out, (a,), bwd)


def log_softmax(a: Tensor, tau: float = 1.0) -> Tensor:
    """log softmax(x / tau) over the last axis, numerically stable."""
    if tau <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    x2 = _rows(a.data)
    lp2 = kernels.log_softmax_fwd(x2, float(tau))
    out = lp2.reshape(a.data.shape)

    def bwd(gout):
        if a.requires_grad:
            g = kernels.log_softmax_bwd(lp2, _rows(gout), float(tau))
            _accumulate(a, g.reshape(a.data.shape))

    return _record("log_softmax", out, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine transform."""
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    x2 = _rows(a.data)
    y2, mu, rstd = kernels.layernorm_fwd(x2, gain.data, bias.data, float(eps))
    out = y2.reshape(a.data.shape)

    def bwd(gout):
        gx, ggain, gbias = kernels.layernorm_bwd(x2, gain.data, mu, rstd, _rows(gout))
        if a.requires_grad:
            _accumulate(a, gx.reshape(a.data.shape))
        if gain.requires_grad:
            _accumulate(gain, ggain)
        if bias.requires_grad:
            _accumulate(bias, gbias)

    return _record("layer_norm", out, (a, gain, bias), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bwd(gout):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids, gout)
            _accumulate(table, g)

    return _record("embedding", out, (table,), bwd)


def first_token(a: Tensor) -> Tensor:
    """Pooling: select position 0 along axis 1 of a [batch, seq, d] tensor."""
    out = a.data[:, 0, :].copy()

    def bwd(gout):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, 0, :] = gout
            _accumulate(a, g)

    return _record("first_token", out, (a,), bwd)


def dropout(a: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate < 0 or rate >= 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.uniform(a.data.shape) >= rate) / (1.0 - rate)
    out = a.data * keep

    def bwd(gout):
        if a.requires_grad:
            _accumulate(a, gout * keep)

    return _record("dropout", out, (a,), bwd)


# ---------------------------------------------------------------------------
# backward pass and verification


def backward(graph: Graph, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over the tape.

    Returns gradients for every requires_grad leaf (tensors not produced
    by a recorded op, i.e. parameters and gates); also leaves them on
    each tensor's ``.grad``, accumulating across calls.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not require gradients (nothing on the tape)")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        gout = node.output.grad
        if gout is None:
            continue
        node.bwd(gout)
        if node.output.produced:
            node.output.grad = None  # free intermediate storage
    grads: dict[Tensor, np.ndarray] = {}
    seen = set()
    for node in graph.nodes:
        for t in node.inputs:
            if t.requires_grad and not t.produced and id(t) not in seen:
                seen.add(id(t))
                if t.grad is not None:
                    grads[t] = t.grad
    return grads


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients of f() against central differences.

    f must be deterministic and rebuild its computation from the current
    parameter values on every call. Returns the worst relative error
    over all coordinates, with an absolute floor of 1e-8 in the
    denominator.
    """
    if eps <= 0:
        raise ParameterError(f"grad_check eps must be positive, got {eps}")
    params = list(params)

    with no_grad():
        v1 = f().item()
        v2 = f().item()
    if v1 != v2:
        raise UnreliableCheckError(
            f"f is not deterministic: {v1!r} != {v2!r}; gradients cannot be checked"
        )

    for p in params:
        p.zero_grad()
    with Graph() as g:
        loss = f()
    backward(g, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            with no_grad():
                fp = f().item()
            p.data[idx] = orig - eps
            with no_grad():
                fm = f().item()
            p.data[idx] = orig
            num = (fp - fm) / (2.0 * eps)
            a = ana[idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            if err > worst:
                worst = err
    return worst

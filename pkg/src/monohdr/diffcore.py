"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` owns an append-only list of nodes.  Trainable leaves are
created with :meth:`Tape.param`; every op whose inputs include a taped tensor
records a node holding its vector-Jacobian product.  Because the list is
append-only it is already topologically ordered, so :meth:`Tape.backward`
simply walks it in reverse.

Shape rules are strict: elementwise binary ops accept two equal shapes or a
scalar (shape ``()``) paired with any tensor.  Anything else needs an explicit
:func:`broadcast_to`.

Reductions use ``numpy.add.reduce`` along the requested axes.  For a fixed
shape and memory layout that order is fixed, so results are bitwise
reproducible from run to run.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

__all__ = [
    "Tensor", "Tape", "Gradients", "ShapeError", "NonFiniteError",
    "as_tensor", "add", "sub", "mul", "div", "neg", "matmul", "relu", "softplus",
    "tanh", "sigmoid", "exp", "log", "abs_", "square", "sum_", "mean", "min_",
    "max_", "clamp", "reshape", "transpose", "broadcast_to", "index", "concat",
    "cumsum", "spmm", "stop_gradient", "gradient_check", "OP_KINDS",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class NonFiniteError(FloatingPointError):
    """Raised when an op receives or produces NaN/inf."""


@dataclass
class _Node:
    kind: str
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


class Tape:
    """Append-only record of differentiable ops."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, kind, inputs, vjp, shape) -> int:
        self.nodes.append(_Node(kind, tuple(inputs), vjp, tuple(shape)))
        return len(self.nodes) - 1

    def param(self, data, name: str | None = None) -> "Tensor":
        """Register a trainable leaf."""
        arr = np.array(data, dtype=np.float64)
        _check_finite("param", arr)
        t = Tensor(arr, requires_grad=True)
        t.tape = self
        t.node = self._record("leaf", (), None, arr.shape)
        t.name = name
        return t

    def backward(self, loss: "Tensor") -> "Gradients":
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.shape != ():
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.array(1.0)}
        for nid in range(loss.node, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if src is None or gi is None:
                    continue
                if src in grads:
                    grads[src] = grads[src] + gi
                else:
                    grads[src] = gi
        return Gradients(grads, self)


class Gradients:
    """Adjoints keyed by node id; also indexable by the tensor itself."""

    def __init__(self, grads: dict[int, np.ndarray], tape: Tape):
        self._grads = grads
        self._tape = tape

    def __getitem__(self, key) -> np.ndarray:
        nid = key.node if isinstance(key, Tensor) else key
        if nid is None:
            raise KeyError("tensor is not on the tape")
        g = self._grads.get(nid)
        if g is None:
            return np.zeros(self._tape.nodes[nid].shape)
        return np.broadcast_to(g, self._tape.nodes[nid].shape).astype(np.float64, copy=True)

    def __contains__(self, key) -> bool:
        nid = key.node if isinstance(key, Tensor) else key
        return nid in self._grads

    def items(self):
        return self._grads.items()


class Tensor:
    __slots__ = ("data", "requires_grad", "tape", "node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.node: int | None = None
        self.name: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(kind: str, arr: np.ndarray) -> None:
    # a finite sum implies finite elements; the elementwise scan only runs when it is not
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.add.reduce(arr, axis=None)
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise NonFiniteError(f"{kind}: non-finite value encountered")


def _check_inputs(kind: str, *tensors: "Tensor") -> None:
    # recorded tensors were checked when they were produced
    for t in tensors:
        if t.node is None:
            _check_finite(kind, t.data)


def _tape_of(kind: str, tensors: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{kind}: inputs live on different tapes")
            tape = t.tape
    return tape


def _make(kind: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    _check_finite(kind, out)
    res = Tensor(out)
    tape = _tape_of(kind, inputs)
    if tape is not None:
        res.tape = tape
        res.requires_grad = True
        ids = [t.node if t.tape is not None else None for t in inputs]
        res.node = tape._record(kind, ids, vjp, out.shape)
    return res


def _unary(kind, x, fwd, dfwd):
    x = as_tensor(x)
    _check_inputs(kind, x)
    out = fwd(x.data)
    return _make(kind, out, [x], lambda g: (g * dfwd(x.data, out),))


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar operand paired with a tensor
    return np.asarray(np.add.reduce(g, axis=None))


def _binary_shapes(kind: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa != sb and sa != () and sb != ():
        raise ShapeError(f"{kind}: incompatible shapes {sa} and {sb}")
    _check_inputs(kind, a, b)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _make("add", a.data + b.data, [a, b],
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _make("sub", a.data - b.data, [a, b],
                 lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)
    av, bv = a.data, b.data
    return _make("mul", av * bv, [a, b],
                 lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    av, bv = a.data, b.data
    if np.any(bv == 0):
        raise NonFiniteError("div: division by zero")
    out = av / bv

    def vjp(g):
        return (_reduce_to(g / bv, av.shape), _reduce_to(-g * out / bv, bv.shape))

    return _make("div", out, [a, b], vjp)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make("neg", -x.data, [x], lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """2-D matrix product, or a batched product with identical batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    ok = (len(sa) == len(sb) and len(sa) >= 2 and sa[:-2] == sb[:-2] and sa[-1] == sb[-2])
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {sa} and {sb}")
    _check_inputs("matmul", a, b)
    av, bv = a.data, b.data

    def vjp(g):
        return (g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g)

    return _make("matmul", av @ bv, [a, b], vjp)


def relu(x) -> Tensor:
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(np.float64))


def softplus(x) -> Tensor:
    return _unary("softplus", x, lambda v: np.logaddexp(0.0, v), lambda v, o: expit(v))


def tanh(x) -> Tensor:
    return _unary("tanh", x, np.tanh, lambda v, o: 1.0 - o * o)


def sigmoid(x) -> Tensor:
    return _unary("sigmoid", x, expit, lambda v, o: o * (1.0 - o))


def exp(x) -> Tensor:
    return _unary("exp", x, np.exp, lambda v, o: o)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NonFiniteError("log: non-positive input")
    return _unary("log", x, np.log, lambda v, o: 1.0 / v)


def abs_(x) -> Tensor:
    return _unary("abs", x, np.abs, lambda v, o: np.sign(v))


def square(x) -> Tensor:
    return _unary("square", x, np.square, lambda v, o: 2.0 * v)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape
    axes = _norm_axis(axis, x.data.ndim)
    out = np.add.reduce(x.data, axis=axes) if axes else x.data.copy()

    def vjp(g):
        kept = [1 if i in axes else n for i, n in enumerate(shape)]
        return (np.broadcast_to(np.reshape(g, kept), shape),)

    return _make("sum", np.asarray(out), [x], vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.data.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean: empty reduction")
    return mul(sum_(x, axes), 1.0 / count)


def _extremum(kind, x, pick):
    x = as_tensor(x)
    _check_inputs(kind, x)
    if x.data.size == 0:
        raise ShapeError(f"{kind}: empty input")
    flat = x.data.ravel()
    # argmin/argmax return the first occurrence: ties go to the lowest index
    idx = int(pick(flat))
    shape = x.data.shape

    def vjp(g):
        out = np.zeros(flat.size)
        out[idx] = g
        return (out.reshape(shape),)

    return _make(kind, np.asarray(flat[idx]), [x], vjp)


def min_(x) -> Tensor:
    """Full reduction; gradient flows to the first arg-min only."""
    return _extremum("min", x, np.argmin)


def max_(x) -> Tensor:
    """Full reduction; gradient flows to the first arg-max only."""
    return _extremum("max", x, np.argmax)


def clamp(x, lo=None, hi=None) -> Tensor:
    x = as_tensor(x)
    _check_inputs("clamp", x)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    out = np.clip(x.data, lo_v, hi_v)
    mask = ((x.data >= lo_v) & (x.data <= hi_v)).astype(np.float64)
    return _make("clamp", out, [x], lambda g: (g * mask,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from e
    return _make("reshape", out, [x], lambda g: (np.reshape(g, old),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(x.data, axes), [x],
                 lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape) -> Tensor:
    """Explicit numpy-style broadcast; gradient sums over the expanded axes."""
    x = as_tensor(x)
    old = x.data.shape
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from e
    lead = len(shape) - len(old)

    def vjp(g):
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(old) if n == 1 and shape[lead + i] != 1)
        r = np.add.reduce(g, axis=axes) if axes else g
        return (np.reshape(r, old),)

    return _make("broadcast_to", out, [x], vjp)


def index(x, key) -> Tensor:
    """Basic (int / slice) indexing."""
    x = as_tensor(x)
    shape = x.data.shape
    out = np.array(x.data[key])

    def vjp(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _make("index", out, [x], vjp)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[x.shape for x in xs]} along axis {axis}") from e
    splits = np.cumsum([x.data.shape[axis] for x in xs])[:-1]
    return _make("concat", out, xs, lambda g: tuple(np.split(g, splits, axis=axis)))


def cumsum(x, axis: int = -1, exclusive: bool = False) -> Tensor:
    """Sequential prefix sum; ``exclusive`` shifts by one so element 0 is 0."""
    x = as_tensor(x)
    out = np.cumsum(x.data, axis=axis)
    if exclusive:
        out = out - x.data

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g if exclusive else rev,)

    return _make("cumsum", out, [x], vjp)


def spmm(a: sp.spmatrix, x) -> Tensor:
    """Product of a constant sparse matrix with a dense 2-D tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2 or a.shape[1] != x.data.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {a.shape} and {x.data.shape}")
    _check_inputs("spmm", x)
    a = sp.csr_matrix(a)
    at = sp.csr_matrix(a.T)
    return _make("spmm", np.asarray(a @ x.data), [x], lambda g: (np.asarray(at @ g),))


def stop_gradient(x) -> Tensor:
    """Value passes through; no node is recorded."""
    return Tensor(as_tensor(x).data.copy())


OP_KINDS = {
    "add": add, "mul": mul, "matmul": matmul, "relu": relu, "softplus": softplus,
    "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "sum": sum_,
    "mean": mean, "min": min_, "max": max_, "clamp": clamp,
}


def gradient_check(f: Callable, point, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between taped gradients and central differences.

    ``f`` maps a Tensor (or a dict of Tensors when ``point`` is a dict) to a
    scalar Tensor.  Error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the floor
    keeps round-off on (near-)zero gradients from dominating.
    """
    named = isinstance(point, dict)
    base = {k: np.array(v, dtype=np.float64) for k, v in (point.items() if named else [("x", point)])}

    def call(values):
        args = {k: Tensor(v) for k, v in values.items()}
        out = f(args) if named else f(args["x"])
        return float(out.data)

    tape = Tape()
    params = {k: tape.param(v, k) for k, v in base.items()}
    out = f(params) if named else f(params["x"])
    grads = tape.backward(out)

    worst = 0.0
    for k, v in base.items():
        analytic = grads[params[k]]
        flat = v.ravel()
        for i in range(flat.size):
            plus, minus = {kk: vv.copy() for kk, vv in base.items()}, {kk: vv.copy() for kk, vv in base.items()}
            plus[k].reshape(-1)[i] += h
            minus[k].reshape(-1)[i] -= h
            numeric = (call(plus) - call(minus)) / (2.0 * h)
            a = analytic.ravel()[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst

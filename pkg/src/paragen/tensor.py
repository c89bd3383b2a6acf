"""Dense float64 tensors with tape-based reverse-mode differentiation.

The op set is small on purpose: matrix products, elementwise arithmetic, a few
pointwise nonlinearities, softmax, concatenation, reductions, indexing, and
embedding-row lookup. Shapes are checked eagerly and the only implicit
broadcast is scalar-versus-tensor; everything else must be spelled out by the
caller. Every op validates that its output is finite, so NaN/Inf is an error
state rather than something that propagates silently.

Gradients are define-by-run: ops record themselves on the thread-local active
Tape whenever an input wants gradients, and backward() replays that tape once
in reverse topological order, accumulating into the .grad buffers of the
requires_grad leaves. A tape is rebuilt per training step and is confined to
the thread that opened it.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "backward", "check_gradient",
    "ShapeMismatchError", "NonFiniteError", "DomainError",
    "add", "sub", "mul", "scale", "matmul", "concat", "mean_rows", "sum_all",
    "sigmoid", "tanh", "exp", "log", "softmax", "lookup", "slice_rows",
    "pick", "transpose", "tile_rows", "reshape",
]


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested op."""


class NonFiniteError(FloatingPointError):
    """A value stopped being finite (NaN or Inf)."""


class DomainError(ValueError):
    """An input lies outside an op's mathematical domain."""


_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """A dense float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor created with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def zeros(cls, shape, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64), requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a single-value tensor, shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def sum(self) -> "Tensor":
        return sum_all(self)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Recorder for one forward pass. Used as a context manager:

        with Tape() as tape:
            loss = build_loss(...)
            backward(tape, loss)

    Only one tape may be active per thread; the active tape is what ops
    record onto. Replaying the same construction twice with the same seeds
    yields bitwise-identical values.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tls.tape = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap op output in a Tensor, verify finiteness, record on the active tape."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(_Node(inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf on the tape.

    The loss must hold a single value. Each node is visited exactly once, in
    reverse recording order; leaves that sit on the tape but not on the path
    to the loss receive zero gradient.
    """
    if loss.size != 1:
        raise ShapeMismatchError(f"backward expects a scalar loss, shape {loss.shape}")
    produced = {id(n.output) for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue  # not on the path to the loss
        input_grads = node.backward_fn(g)
        for t, ig in zip(node.inputs, input_grads):
            if ig is None:
                continue
            if t.requires_grad or id(t) in produced:
                acc = grads.get(id(t))
                grads[id(t)] = ig if acc is None else acc + ig

    # Write gradients onto leaves; off-path leaves get zeros so callers can
    # rely on .grad being populated after backward.
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss
    for tid, t in leaves.items():
        t.accumulate_grad(grads.get(tid, np.zeros_like(t.data)))


def check_gradient(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4,
                   indices: Sequence[int] | None = None) -> float:
    """Compare reverse-mode gradients of f at x against central differences.

    f must be a deterministic scalar-valued function built from tape ops; it
    is re-evaluated with x perturbed by +/- eps one coordinate at a time
    (flat indexing; `indices` restricts the probe set). Returns the maximum of

        |autodiff - central_diff| / max(1, |central_diff|)

    over the probed coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if _active_tape() is not None:
        raise RuntimeError("check_gradient cannot run under an active tape")

    saved_grad, saved_flag = x.grad, x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            y = f(x)
            if y.size != 1:
                raise ShapeMismatchError("check_gradient expects a scalar-valued f")
            backward(tape, y)
        ad = (x.grad if x.grad is not None else np.zeros_like(x.data)).reshape(-1)

        flat = x.data.reshape(-1)
        probe = range(flat.size) if indices is None else indices
        worst = 0.0
        for i in probe:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(x).item()
            flat[i] = orig - eps
            fm = f(x).item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * eps)
            err = abs(ad[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
        return worst
    finally:
        x.grad = saved_grad
        x.requires_grad = saved_flag


# ---------------------------------------------------------------------------
# elementwise arithmetic

def _scalar_kind(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if a.size == 1:
        return "a_scalar"
    if b.size == 1:
        return "b_scalar"
    raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not conform "
                             "(only scalar-vs-tensor broadcast is allowed)")


def _to_side_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    kind = _scalar_kind(a, b, "add")
    out = a.data + b.data if kind == "same" else (
        float(a.data.reshape(-1)[0]) + b.data if kind == "a_scalar"
        else a.data + float(b.data.reshape(-1)[0]))

    def bw(g):
        ga = g if kind != "a_scalar" else _to_side_shape(g, a.shape)
        gb = g if kind != "b_scalar" else _to_side_shape(g, b.shape)
        return ga, gb
    return _record("add", (a, b), np.asarray(out, dtype=np.float64), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    kind = _scalar_kind(a, b, "sub")
    out = a.data - b.data if kind == "same" else (
        float(a.data.reshape(-1)[0]) - b.data if kind == "a_scalar"
        else a.data - float(b.data.reshape(-1)[0]))

    def bw(g):
        ga = g if kind != "a_scalar" else _to_side_shape(g, a.shape)
        gb = -g if kind != "b_scalar" else _to_side_shape(-g, b.shape)
        return ga, gb
    return _record("sub", (a, b), np.asarray(out, dtype=np.float64), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    kind = _scalar_kind(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd if kind == "same" else (
        float(ad.reshape(-1)[0]) * bd if kind == "a_scalar"
        else ad * float(bd.reshape(-1)[0]))

    def bw(g):
        ga = g * bd if kind != "a_scalar" else _to_side_shape(g * bd, a.shape)
        gb = g * ad if kind != "b_scalar" else _to_side_shape(g * ad, b.shape)
        return ga, gb
    return _record("mul", (a, b), np.asarray(out, dtype=np.float64), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g * c,)
    return _record("scale", (a,), a.data * c, bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports [m,k]@[k,n], [m,k]@[k] and [k]@[k,n]."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeMismatchError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")

        def bw(g):
            return g @ bd.T, ad.T @ g
    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeMismatchError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")

        def bw(g):
            return np.outer(g, bd), ad.T @ g
    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeMismatchError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")

        def bw(g):
            return bd @ g, np.outer(ad, g)
    else:
        raise ShapeMismatchError(f"matmul: unsupported ranks for shapes {ad.shape} and {bd.shape}")
    return _record("matmul", (a, b), ad @ bd, bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected a matrix, got shape {a.shape}")

    def bw(g):
        return (g.T.copy(),)
    return _record("transpose", (a,), a.data.T.copy(), bw)


# ---------------------------------------------------------------------------
# shape plumbing

def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along the last (or given) axis; all other dims must agree."""
    if len(parts) == 0:
        raise ShapeMismatchError("concat of zero tensors")
    nd = parts[0].data.ndim
    ax = axis if axis >= 0 else nd + axis
    for p in parts[1:]:
        if p.data.ndim != nd:
            raise ShapeMismatchError(
                f"concat: rank mismatch between shapes {parts[0].shape} and {p.shape}")
        for d in range(nd):
            if d != ax and p.data.shape[d] != parts[0].data.shape[d]:
                raise ShapeMismatchError(
                    f"concat: shapes {parts[0].shape} and {p.shape} differ off axis {ax}")
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=ax))
    return _record("concat", tuple(parts), np.concatenate([p.data for p in parts], axis=ax), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the first axis (elements of a vector, rows of a matrix)."""
    n = a.data.shape[0] if a.data.ndim >= 1 else None
    if n is None or not (0 <= start < stop <= n):
        raise ShapeMismatchError(f"slice_rows: range [{start}, {stop}) invalid for shape {a.shape}")

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return (ga,)
    return _record("slice_rows", (a,), a.data[start:stop].copy(), bw)


def pick(a: Tensor, index: int) -> Tensor:
    """Select one element of a vector as a scalar tensor."""
    if a.data.ndim != 1:
        raise ShapeMismatchError(f"pick: expected a vector, got shape {a.shape}")
    if not (0 <= index < a.data.shape[0]):
        raise ShapeMismatchError(f"pick: index {index} out of range for shape {a.shape}")

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)
    return _record("pick", (a,), np.asarray(a.data[index], dtype=np.float64), bw)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a vector as n identical rows; gradient sums back over rows."""
    if v.data.ndim != 1:
        raise ShapeMismatchError(f"tile_rows: expected a vector, got shape {v.shape}")
    if n < 1:
        raise ShapeMismatchError("tile_rows: n must be >= 1")

    def bw(g):
        return (g.sum(axis=0),)
    return _record("tile_rows", (v,), np.repeat(v.data[None, :], n, axis=0), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeMismatchError(f"reshape: cannot view shape {a.shape} as {shape}")
    old = a.data.shape

    def bw(g):
        return (g.reshape(old),)
    return _record("reshape", (a,), a.data.reshape(shape).copy(), bw)


# ---------------------------------------------------------------------------
# reductions

def mean_rows(a: Tensor) -> Tensor:
    """Mean over the first axis of a matrix: [n, d] -> [d]."""
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"mean_rows: expected a matrix, got shape {a.shape}")
    n = a.data.shape[0]

    def bw(g):
        return (np.repeat((g / n)[None, :], n, axis=0),)
    return _record("mean_rows", (a,), a.data.mean(axis=0), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        return (np.full(a.data.shape, float(g)),)
    return _record("sum_all", (a,), np.asarray(a.data.sum(), dtype=np.float64), bw)


# ---------------------------------------------------------------------------
# pointwise nonlinearities

def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        return (g * out * (1.0 - out),)
    return _record("sigmoid", (a,), out, bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)
    return _record("tanh", (a,), out, bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)
    return _record("exp", (a,), out, bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    out = np.log(a.data)

    def bw(g):
        return (g / a.data,)
    return _record("log", (a,), out, bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis; outputs are strictly positive and sum to 1."""
    x = a.data
    if x.ndim == 0:
        raise ShapeMismatchError("softmax: expected at least a vector")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)
    return _record("softmax", (a,), out, bw)


# ---------------------------------------------------------------------------
# embedding lookup

def lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table: table [V, d], ids [n] -> [n, d].

    Gradient scatter-adds into the table rows, so repeated ids accumulate.
    """
    if table.data.ndim != 2:
        raise ShapeMismatchError(f"lookup: table must be a matrix, got shape {table.shape}")
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatchError(f"lookup: ids must be a flat sequence, got shape {idx.shape}")
    if idx.size == 0:
        raise ShapeMismatchError("lookup: empty id list")
    v = table.data.shape[0]
    if np.any(idx < 0) or np.any(idx >= v):
        bad = int(idx[(idx < 0) | (idx >= v)][0])
        raise IndexError(f"lookup: token id {bad} outside table of {v} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)
    return _record("lookup", (table,), table.data[idx], bw)

"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays, float32 by default for training speed. Switching
the engine to float64 (``set_default_dtype``) is required for gradient
checking. Operations record backward rules onto the active ``Tape``; with
no tape active they are plain forward computations, which is how
evaluation runs.

Tensors are immutable values once created (the optimizer mutates leaf
parameter storage between tapes, never inside one). A Tape is single-owner
and must not be shared across threads.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "VocabularyError",
    "set_default_dtype", "get_default_dtype", "using_dtype",
    "constant", "zeros",
    "matmul", "add", "sub", "mul", "scale", "neg",
    "tanh", "sigmoid", "absval", "log", "exp", "clamp",
    "dropout", "softmax_rows", "log_softmax_rows",
    "concat", "slice_axis", "pick_columns", "lookup",
    "mean_all", "sum_axis", "transpose_last2", "reshape",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class VocabularyError(ValueError):
    """Raised when a token id falls outside its embedding table."""


_DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    """Switch the engine storage dtype (np.float32 or np.float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the engine dtype (used by tests and gradcheck)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """A dense array value, optionally tracked for gradients.

    ``grad`` accumulates across backward calls until ``zero_grad``;
    the reset is caller-controlled.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self._tape: "Tape | None" = None

    @staticmethod
    def _wrap(arr: np.ndarray) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars become untracked constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of operations supporting one reverse sweep.

    Records are appended in creation order, which is a topological order
    by construction. ``backward`` walks them once in reverse; clearing the
    tape (or dropping it) frees every non-parameter node.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self._records: list[tuple[int, tuple, Callable]] = []
        self._leaves: dict[int, Tensor] = {}
        self._next_id = 0

    @staticmethod
    def current() -> "Tape | None":
        return Tape._stack[-1] if Tape._stack else None

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def clear(self) -> None:
        self._records.clear()
        self._leaves.clear()

    def __len__(self):
        return len(self._records)

    def _register(self, t: Tensor) -> int:
        if t._tape is self and t.node_id is not None:
            return t.node_id
        nid = self._next_id
        self._next_id += 1
        t.node_id = nid
        t._tape = self
        if t.requires_grad:
            self._leaves[nid] = t
        return nid

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into every tracked leaf's ``grad``.

        Returns the leaf gradient map for this sweep. Repeated calls
        without ``zero_grad`` accumulate, by contract.
        """
        if loss.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self._records:
            raise ValueError("backward on an empty tape")
        if loss._tape is not self or loss.node_id is None:
            raise ValueError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for out_id, in_ids, rule in reversed(self._records):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for iid, gin in zip(in_ids, rule(g)):
                if iid is None or gin is None:
                    continue
                acc = grads.get(iid)
                grads[iid] = gin if acc is None else acc + gin

        out: dict[Tensor, np.ndarray] = {}
        for nid, leaf in self._leaves.items():
            g = grads.get(nid)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            out[leaf] = leaf.grad
        return out


def _tracked(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad or t._tape is tape


def _apply(out_data: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap a forward result, recording the backward rule if needed."""
    out = Tensor._wrap(out_data)
    tape = Tape.current()
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        in_ids = tuple(tape._register(t) if _tracked(t, tape) else None for t in inputs)
        tape._records.append((tape._register(out), in_ids, rule))
    return out


def constant(data) -> Tensor:
    """An untracked tensor in the engine dtype."""
    return Tensor(data, requires_grad=False)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=_DEFAULT_DTYPE))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the pre-broadcast operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_elementwise(sa: tuple, sb: tuple) -> None:
    # Permitted: equal shapes, scalar, a trailing row vector, or equal-rank
    # shapes differing only in size-1 axes. Anything wilder is built
    # explicitly via matmul with a ones column.
    if sa == sb:
        return
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"elementwise shapes {sa} and {sb} do not broadcast") from None
    for s, o in ((sa, sb), (sb, sa)):
        if np.prod(s, dtype=int) == 1:
            return
        if len(s) == 1 and len(o) >= 1 and o[-1] == s[0]:
            return
    if len(sa) == len(sb):
        return
    raise ShapeError(f"elementwise broadcast {sa} vs {sb} is not supported "
                     "(scalar and row broadcast only)")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _apply(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _apply(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a.shape, b.shape)
    da, db, sa, sb = a.data, b.data, a.shape, b.shape
    return _apply(da * db, (a, b),
                  lambda g: (_unbroadcast(g * db, sa), _unbroadcast(g * da, sb)))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _apply(a.data * np.asarray(c, dtype=a.data.dtype), (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def matmul(a, b) -> Tensor:
    """Matrix product with the usual vector and stacked-batch conventions.

    1-D operands are treated as a row (left) or column (right) and the
    inserted axis is squeezed from the result; leading batch axes
    broadcast, with gradients summed back over broadcast axes.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    da = a.data[None, :] if a.ndim == 1 else a.data
    db = b.data[:, None] if b.ndim == 1 else b.data
    if da.shape[-1] != db.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        out = np.matmul(da, db)
    except ValueError:
        raise ShapeError(f"matmul batch shapes disagree: {a.shape} x {b.shape}") from None
    a_vec, b_vec = a.ndim == 1, b.ndim == 1
    if a_vec and b_vec:
        out = out[..., 0, 0]
    elif b_vec:
        out = out[..., 0]
    elif a_vec:
        out = out[..., 0, :]

    sa, sb = da.shape, db.shape

    def rule(g):
        g2 = g
        if b_vec:
            g2 = g2[..., None]
        if a_vec:
            g2 = g2[..., None, :]
        ga = _unbroadcast(np.matmul(g2, np.swapaxes(db, -1, -2)), sa)
        gb = _unbroadcast(np.matmul(np.swapaxes(da, -1, -2), g2), sb)
        if a_vec:
            ga = ga[0]
        if b_vec:
            gb = gb[:, 0]
        return ga, gb

    return _apply(out, (a, b), rule)


def _unary(a, out_data: np.ndarray, dlocal: np.ndarray) -> Tensor:
    return _apply(out_data, (a,), lambda g: (g * dlocal,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _unary(a, y, 1.0 - y * y)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # stable in both tails
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    y[~pos] = e / (1.0 + e)
    return _unary(a, y, y * (1.0 - y))


def absval(a) -> Tensor:
    a = _as_tensor(a)
    # sign(0) = 0, the subgradient convention
    return _unary(a, np.abs(a.data), np.sign(a.data))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _unary(a, np.log(a.data), 1.0 / a.data)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return _unary(a, y, y)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    y = np.clip(a.data, lo, hi)
    inside = ((a.data > lo) & (a.data < hi)).astype(a.data.dtype)
    return _unary(a, y, inside)


def dropout(a, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Zero entries with probability p, scaling survivors by 1/(1-p).

    Identity (same object, no rng draw) in eval mode or at p=0, so that
    disabling dropout cannot shift other random streams.
    """
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype)
    m = keep / np.asarray(1.0 - p, dtype=a.data.dtype)
    return _unary(a, a.data * m, m)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis; each row sums to 1 within 1e-12."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _apply(y, (a,),
                  lambda g: ((g - (g * y).sum(axis=-1, keepdims=True)) * y,))


def log_softmax_rows(a) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _apply(out, (a,),
                  lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat axis={axis} shapes disagree: {[t.shape for t in ts]}") from None
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _apply(out, ts, rule)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def rule(g):
        z = np.zeros(shape, dtype=g.dtype)
        z[idx] = g
        return (z,)

    return _apply(a.data[idx], (a,), rule)


def pick_columns(a, cols: np.ndarray) -> Tensor:
    """Select one column per row of a 2-D tensor: out[i] = a[i, cols[i]]."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"pick_columns expects 2-D input, got {a.shape}")
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def rule(g):
        z = np.zeros(shape, dtype=g.dtype)
        z[rows, cols] = g
        return (z,)

    return _apply(a.data[rows, cols], (a,), rule)


def lookup(table, ids: np.ndarray) -> Tensor:
    """Embedding retrieval; backward scatter-adds into the table gradient."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise VocabularyError(
            f"id out of range for table of {table.shape[0]} rows: "
            f"[{ids.min()}, {ids.max()}]")
    shape = table.shape

    def rule(g):
        z = np.zeros(shape, dtype=g.dtype)
        np.add.at(z, ids, g)
        return (z,)

    return _apply(table.data[ids], (table,), rule)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    shape = a.shape

    def rule(g):
        return (np.full(shape, float(g) / n, dtype=g.dtype),)

    return _apply(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), rule)


def sum_axis(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        out = np.asarray(a.data.sum(), dtype=a.data.dtype)

        def rule(g):
            return (np.full(shape, float(g), dtype=g.dtype),)
    else:
        out = a.data.sum(axis=axis)

        def rule(g):
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _apply(out, (a,), rule)


def transpose_last2(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose needs >= 2 dims, got {a.shape}")
    return _apply(np.swapaxes(a.data, -1, -2), (a,),
                  lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.shape
    return _apply(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))

"""Small reverse-mode automatic differentiation engine over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape`.  With no
active tape they run as plain numpy computations, which is how inference paths
avoid closure overhead.

    >>> w = DiffValue(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(relu(matmul(w, w)))
    >>> tape.backward(loss)
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DiffValue",
    "Tape",
    "ShapeError",
    "as_value",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "softplus",
    "add_bias",
    "scale_rows",
    "minimum",
    "layer_norm",
    "softmax",
    "softmax_cross_entropy",
    "mse",
    "sum_all",
    "sum_squares",
    "reshape",
    "slice_cols",
    "concat_cols",
    "backward",
    "grad_check",
]

_node_ids = itertools.count()
_tape_stack: list["Tape"] = []


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class DiffValue:
    """A dense float64 tensor that may take part in a differentiation tape."""

    __slots__ = ("data", "_grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 3 or arr.size == 0:
            raise ShapeError(f"unsupported tensor shape {arr.shape}")
        self.data = arr
        self._grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "DiffValue":
        # fast path for op outputs; skips the defensive copy
        out = object.__new__(cls)
        out.data = arr
        out._grad = None
        out.requires_grad = False
        out.node_id = next(_node_ids)
        out._parents = ()
        out._backward = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"DiffValue{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of recorded operations.

    Used as a context manager; every op executed inside the ``with`` block whose
    inputs require gradients is appended in execution order, which is already a
    topological order.
    """

    def __init__(self):
        self.nodes: list[DiffValue] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: DiffValue) -> None:
        backward(self, loss)


def _active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def as_value(x) -> DiffValue:
    """Wrap arrays and scalars as constant DiffValues; pass DiffValues through."""
    if isinstance(x, DiffValue):
        return x
    return DiffValue(x)


def _record(out_arr: np.ndarray, parents: tuple, backward_fn: Callable) -> DiffValue:
    out = DiffValue._wrap(out_arr)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _check_same(a: DiffValue, b: DiffValue, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> DiffValue:
    """Matrix product of ``[m, k]`` and ``[k, n]`` operands."""
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    A, B = a.data, b.data

    def _bw(g):
        ga = g @ B.T if a.requires_grad else None
        gb = A.T @ g if b.requires_grad else None
        return ga, gb

    return _record(A @ B, (a, b), _bw)


def add_bias(a, bias) -> DiffValue:
    """Add a bias row of shape ``[n]`` or ``[1, n]`` to every row of ``a [m, n]``."""
    a, bias = as_value(a), as_value(bias)
    n = a.shape[-1]
    if a.data.ndim != 2 or bias.data.size != n:
        raise ShapeError(f"add_bias: cannot add bias {bias.shape} to rows of {a.shape}")
    brow = bias.data.reshape(1, n)
    bshape = bias.shape

    def _bw(g):
        gb = g.sum(axis=0).reshape(bshape) if bias.requires_grad else None
        return g, gb

    return _record(a.data + brow, (a, bias), _bw)


def scale_rows(a, s) -> DiffValue:
    """Multiply row ``i`` of ``a [m, n]`` by ``s[i]`` where ``s`` has shape ``[m, 1]``."""
    a, s = as_value(a), as_value(s)
    if a.data.ndim != 2 or s.shape != (a.shape[0], 1):
        raise ShapeError(f"scale_rows: need [m,1] scale for {a.shape}, got {s.shape}")
    A, S = a.data, s.data

    def _bw(g):
        ga = g * S if a.requires_grad else None
        gs = (g * A).sum(axis=1, keepdims=True) if s.requires_grad else None
        return ga, gs

    return _record(A * S, (a, s), _bw)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_same(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_same(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return _record(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, factor: float) -> DiffValue:
    a = as_value(a)
    factor = float(factor)
    return _record(a.data * factor, (a,), lambda g: (g * factor,))


def relu(a) -> DiffValue:
    # derivative at exactly zero is zero
    a = as_value(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> DiffValue:
    a = as_value(a)
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> DiffValue:
    a = as_value(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a) -> DiffValue:
    a = as_value(a)
    x = a.data
    y = np.logaddexp(0.0, x)
    return _record(y, (a,), lambda g: (g * _sigmoid(x),))


def minimum(a, ceiling: float) -> DiffValue:
    """Elementwise ``min(a, ceiling)`` against a scalar; zero gradient where clipped."""
    a = as_value(a)
    keep = a.data <= ceiling
    return _record(np.where(keep, a.data, ceiling), (a,), lambda g: (g * keep,))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "softplus": softplus}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None) -> DiffValue:
    """Dispatch an elementwise op by name; ``scale`` takes a scalar as ``b``."""
    if op in _UNARY:
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- normalization


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> DiffValue:
    """Normalize each row of ``x`` to zero mean and unit variance, then apply gain and bias.

    ``gain``/``bias`` of ``None`` mean the identity affine map.  A 1-d ``x`` is
    treated as a single row.
    """
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x = as_value(x)
    X = x.data
    one_d = X.ndim == 1
    if one_d:
        X = X.reshape(1, -1)
    d = X.shape[-1]
    for p, nm in ((gain, "gain"), (bias, "bias")):
        if p is not None and as_value(p).data.size != d:
            raise ShapeError(f"layer_norm: {nm} has shape {as_value(p).shape}, expected {d} entries")
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    var = np.einsum("ij,ij->i", xc, xc)[:, None] / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    parents = [x]
    G = B = None
    if gain is not None:
        gain = as_value(gain)
        G = gain.data.reshape(1, d)
        parents.append(gain)
    if bias is not None:
        bias = as_value(bias)
        B = bias.data.reshape(1, d)
        parents.append(bias)
    y = xhat if G is None else xhat * G
    if B is not None:
        y = y + B
    out_shape = x.shape

    def _bw(g):
        g2 = g.reshape(-1, d)
        grads = []
        gx = g2 if G is None else g2 * G
        # d/dx of standardization, per row
        dx = inv * (gx - gx.mean(axis=1, keepdims=True)
                    - xhat * (np.einsum("ij,ij->i", gx, xhat)[:, None] / d))
        grads.append(dx.reshape(out_shape))
        if gain is not None:
            grads.append((g2 * xhat).sum(axis=0).reshape(gain.shape) if gain.requires_grad else None)
        if bias is not None:
            grads.append(g2.sum(axis=0).reshape(bias.shape) if bias.requires_grad else None)
        return tuple(grads)

    return _record(y.reshape(out_shape), tuple(parents), _bw)


# ---------------------------------------------------------------- losses & reductions


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (max-subtracted)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, target, weights=None) -> DiffValue:
    """Mean of ``-log softmax(logits)[target]`` over rows.

    ``logits`` is ``[c]`` with an integer ``target`` or ``[B, c]`` with an integer
    array of ``B`` targets.  Optional per-row ``weights`` replace the plain mean by
    ``sum(w * ce) / B``.
    """
    logits = as_value(logits)
    Z = logits.data
    single = Z.ndim == 1
    if single:
        Z = Z.reshape(1, -1)
    if Z.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 1-d or 2-d, got {logits.shape}")
    n, c = Z.shape
    t = np.asarray(target, dtype=np.int64).reshape(-1)
    if t.shape[0] != n:
        raise ShapeError(f"softmax_cross_entropy: {n} rows but {t.shape[0]} targets")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise ValueError(f"softmax_cross_entropy: target outside [0, {c})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    zmax = Z.max(axis=1, keepdims=True)
    shifted = Z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.dot(w, lse - shifted[rows, t]) / n)
    out_shape = logits.shape

    def _bw(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, t] -= 1.0
        return ((p * (w[:, None] * (g[0] / n))).reshape(out_shape),)

    return _record(np.array([loss]), (logits,), _bw)


def mse(a, b) -> DiffValue:
    """Mean squared difference between ``a`` and a constant ``b`` of equal shape."""
    a = as_value(a)
    B = b.data if isinstance(b, DiffValue) else np.asarray(b, dtype=np.float64)
    if a.shape != B.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {B.shape}")
    diff = a.data - B
    n = diff.size
    return _record(np.array([np.sum(diff * diff) / n]), (a,), lambda g: (diff * (2.0 * g[0] / n),))


def sum_all(a) -> DiffValue:
    a = as_value(a)
    shape = a.shape
    return _record(np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),))


def sum_squares(a) -> DiffValue:
    a = as_value(a)
    A = a.data
    return _record(np.array([np.sum(A * A)]), (a,), lambda g: (2.0 * g[0] * A,))


# ---------------------------------------------------------------- shape plumbing


def reshape(a, shape: Sequence[int]) -> DiffValue:
    a = as_value(a)
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _record(out, (a,), lambda g: (g.reshape(old),))


def slice_cols(a, start: int, stop: int) -> DiffValue:
    """Columns ``start:stop`` of a 2-d value (or elements of a 1-d value)."""
    a = as_value(a)
    shape = a.shape

    def _bw(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _record(a.data[..., start:stop], (a,), _bw)


def concat_cols(values: Sequence) -> DiffValue:
    vals = [as_value(v) for v in values]
    rows = {v.shape[:-1] for v in vals}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: leading dims differ {[v.shape for v in vals]}")
    bounds = np.cumsum([0] + [v.shape[-1] for v in vals])

    def _bw(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(vals)))

    return _record(np.concatenate([v.data for v in vals], axis=-1), tuple(vals), _bw)


# ---------------------------------------------------------------- backward pass


def backward(tape: Tape, loss: DiffValue) -> None:
    """Accumulate ``d loss / d value`` into ``.grad`` of every value on the tape and its leaves."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    adj: dict[int, tuple[DiffValue, np.ndarray]] = {loss.node_id: (loss, np.ones_like(loss.data))}
    for node in reversed(tape.nodes):
        entry = adj.pop(node.node_id, None)
        if entry is None:
            continue
        g = entry[1]
        node._grad = g if node._grad is None else node._grad + g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = adj.get(parent.node_id)
            adj[parent.node_id] = (parent, pg if prev is None else prev[1] + pg)
    # what remains are leaves (parameters or values recorded on another tape)
    for v, g in adj.values():
        if v.requires_grad:
            v._grad = g if v._grad is None else v._grad + g


# ---------------------------------------------------------------- verification


def grad_check(
    fn: Callable[[], DiffValue],
    params: Iterable[DiffValue],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    ``fn`` builds the computation and returns a scalar loss.  Error per coordinate
    is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  When
    ``max_coords`` is given, that many coordinates per parameter are sampled.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("grad_check eps must lie in [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().item()
            flat[i] = orig - eps
            fm = fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            an = ga.reshape(-1)[i]
            worst = max(worst, abs(an - num) / max(1.0, abs(an), abs(num)))
    for p in params:
        p.zero_grad()
    return worst

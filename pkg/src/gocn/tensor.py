"""Dense float64 matrices with a define-by-run reverse-mode tape.

Every value is a :class:`Matrix` wrapping a read-only numpy array. Values
created through :meth:`Tape.watch` (and everything computed from them) are
recorded on that tape; :func:`grad` replays the recorded adjoints in reverse
order. Plain numpy arrays and python floats passed to the primitives are
treated as constants.

Scalars are 0-d matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Matrix",
    "Tape",
    "TapeError",
    "ShapeError",
    "make_rng",
    "as_matrix",
    "matmul",
    "add",
    "sub",
    "scale",
    "transpose",
    "hadamard",
    "relu",
    "row_softmax",
    "frobenius_norm_sq",
    "trace_quadratic",
    "sum_all",
    "log",
    "power",
    "clip_min",
    "select",
    "solve",
    "stack_scalars",
    "grad",
    "finite_diff_check",
    "GradCheckReport",
]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, stream)``.

    PCG64 output for a given SeedSequence is identical on every platform
    numpy supports, so distinct streams of one seed can be handed to
    independent consumers (split, init, dropout) without coupling them.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


class Matrix:
    __slots__ = ("data", "tape", "_id")

    def __init__(self, data, tape: Tape | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"Matrix must be 0-d, 1-d or 2-d, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.tape = tape
        self._id = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> Matrix:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single entry, shape is {self.data.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        taped = "" if self.tape is None else ", taped"
        return f"Matrix(shape={self.shape}{taped})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if _is_scalar_like(other):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)


@dataclass
class _Node:
    out: int
    parents: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records primitive applications for a single forward + backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._shapes: list[tuple[int, ...]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _register(self, m: Matrix) -> Matrix:
        if self._consumed:
            raise TapeError("tape already consumed by a backward pass")
        m.tape = self
        m._id = len(self._shapes)
        self._shapes.append(m.data.shape)
        return m

    def watch(self, value) -> Matrix:
        """Mark ``value`` as a differentiable input and return its taped copy."""
        data = value.data if isinstance(value, Matrix) else value
        return self._register(Matrix(data))

    def _record(self, out: Matrix, parents: Sequence[Matrix | None], backward) -> Matrix:
        self._register(out)
        ids = tuple(-1 if p is None else p._id for p in parents)
        self._nodes.append(_Node(out._id, ids, backward))
        return out


def as_matrix(x) -> Matrix:
    return x if isinstance(x, Matrix) else Matrix(x)


def _is_scalar_like(x) -> bool:
    if isinstance(x, Matrix):
        return x.data.ndim == 0
    return np.ndim(x) == 0


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Matrix) and a.tape is not None:
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("operands are recorded on different tapes")
    return tape


def _op(data: np.ndarray, inputs: Sequence, backward) -> Matrix:
    """Wrap ``data`` as the output of a primitive over ``inputs``.

    ``backward(g)`` returns one adjoint per input (``None`` when unneeded).
    Only taped inputs take part in the reverse sweep.
    """
    out = Matrix(data)
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    parents = [a if isinstance(a, Matrix) and a.tape is tape else None for a in inputs]
    return tape._record(out, parents, backward)


def _needs(x) -> bool:
    return isinstance(x, Matrix) and x.tape is not None


def _check_same(name: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    A, B = a.data, b.data
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {A.shape} by {B.shape}")

    def backward(g):
        return (g @ B.T if _needs(a) else None, A.T @ g if _needs(b) else None)

    return _op(A @ B, (a, b), backward)


def add(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    _check_same("add", a.data, b.data)
    return _op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    _check_same("sub", a.data, b.data)
    return _op(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a, s) -> Matrix:
    """``s * a`` for a scalar ``s``; ``s`` may itself be a taped 0-d Matrix."""
    a, s = as_matrix(a), as_matrix(s)
    if s.data.ndim != 0:
        raise ShapeError(f"scale: factor must be a scalar, got shape {s.shape}")
    A, sv = a.data, float(s.data)

    def backward(g):
        da = g * sv if _needs(a) else None
        ds = np.asarray(np.sum(g * A)) if _needs(s) else None
        return (da, ds)

    return _op(A * sv, (a, s), backward)


def transpose(a) -> Matrix:
    a = as_matrix(a)
    return _op(a.data.T, (a,), lambda g: (g.T,))


def hadamard(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    _check_same("hadamard", a.data, b.data)
    A, B = a.data, b.data
    return _op(A * B, (a, b), lambda g: (g * B if _needs(a) else None, g * A if _needs(b) else None))


def relu(a) -> Matrix:
    # subgradient at exactly 0 is 0
    a = as_matrix(a)
    mask = a.data > 0
    return _op(np.where(mask, a.data, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),))


def row_softmax(a) -> Matrix:
    a = as_matrix(a)
    A = a.data
    if A.ndim != 2 or A.shape[1] < 1:
        raise ShapeError(f"row_softmax needs a matrix with at least one column, got {A.shape}")
    e = np.exp(A - A.max(axis=1, keepdims=True))
    P = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (P * (g - np.sum(g * P, axis=1, keepdims=True)),)

    return _op(P, (a,), backward)


def frobenius_norm_sq(a) -> Matrix:
    a = as_matrix(a)
    A = a.data
    return _op(np.asarray(np.sum(A * A)), (a,), lambda g: (2.0 * float(g) * A,))


def trace_quadratic(z, m) -> Matrix:
    """``Tr(Z^T M Z)``."""
    z, m = as_matrix(z), as_matrix(m)
    Z, M = z.data, m.data
    if M.ndim != 2 or Z.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[1] != Z.shape[0]:
        raise ShapeError(f"trace_quadratic: Z {Z.shape} incompatible with M {M.shape}")
    MZ = M @ Z

    def backward(g):
        g = float(g)
        dz = g * (MZ + M.T @ Z) if _needs(z) else None
        dm = g * (Z @ Z.T) if _needs(m) else None
        return (dz, dm)

    return _op(np.asarray(np.sum(Z * MZ)), (z, m), backward)


def sum_all(a) -> Matrix:
    a = as_matrix(a)
    shape = a.data.shape
    return _op(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def log(a) -> Matrix:
    a = as_matrix(a)
    A = a.data
    return _op(np.log(A), (a,), lambda g: (g / A,))


def power(a, p: float) -> Matrix:
    """Elementwise ``a ** p`` for a constant exponent."""
    a = as_matrix(a)
    A = a.data
    return _op(A**p, (a,), lambda g: (g * p * A ** (p - 1.0),))


def clip_min(a, lo: float) -> Matrix:
    """``max(a, lo)`` elementwise; the adjoint is blocked where the floor is active."""
    a = as_matrix(a)
    keep = a.data > lo
    return _op(np.where(keep, a.data, lo), (a,), lambda g: (np.where(keep, g, 0.0),))


def select(a, rows, cols) -> Matrix:
    """Gather entries ``a[rows[i], cols[i]]`` into a vector."""
    a = as_matrix(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.data.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _op(a.data[rows, cols], (a,), backward)


def solve(a, b) -> Matrix:
    """``a^{-1} b`` by LU; adjoints ``dB = a^{-T} g`` and ``dA = -dB X^T``."""
    a, b = as_matrix(a), as_matrix(b)
    A, B = a.data, b.data
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[1] != B.shape[0]:
        raise ShapeError(f"solve: system {A.shape} incompatible with right-hand side {B.shape}")
    X = np.linalg.solve(A, B)

    def backward(g):
        db = np.linalg.solve(A.T, g)
        da = -db @ X.T if _needs(a) else None
        return (da, db if _needs(b) else None)

    return _op(X, (a, b), backward)


def stack_scalars(items: Sequence) -> Matrix:
    """Collect 0-d values into a 1-d vector."""
    items = [as_matrix(x) for x in items]
    for x in items:
        if x.data.ndim != 0:
            raise ShapeError(f"stack_scalars: expected scalars, got shape {x.shape}")
    data = np.array([float(x.data) for x in items])
    return _op(data, items, lambda g: tuple(np.asarray(gi) for gi in g))


# --------------------------------------------------------------------------
# reverse sweep


def grad(f: Matrix, inputs: Sequence[Matrix]) -> list[np.ndarray]:
    """Gradients of scalar ``f`` with respect to each watched input.

    Consumes the tape: recording on it or calling ``grad`` again afterwards
    raises :class:`TapeError`.
    """
    if not isinstance(f, Matrix) or f.tape is None:
        raise TapeError("f is not recorded on a tape")
    tape = f.tape
    if tape.consumed:
        raise TapeError("tape already consumed by a backward pass")
    if f.data.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {f.shape}")
    for x in inputs:
        if x.tape is not tape:
            raise TapeError("input is not watched on the same tape as f")
    tape._consumed = True

    adj: dict[int, np.ndarray] = {f._id: np.ones(f.data.shape)}
    for node in reversed(tape._nodes):
        g = adj.pop(node.out, None)
        if g is None:
            continue
        for pid, dp in zip(node.parents, node.backward(g)):
            if pid < 0 or dp is None:
                continue
            dp = np.asarray(dp, dtype=np.float64).reshape(tape._shapes[pid])
            if pid in adj:
                adj[pid] = adj[pid] + dp
            else:
                adj[pid] = dp
    return [adj.get(x._id, np.zeros(x.data.shape)) for x in inputs]


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst_index: tuple[int, ...]
    tolerance: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def finite_diff_check(
    f: Callable[[Matrix], Matrix],
    x,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-7,
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    The relative error of entry i is ``|g_i - n_i| / max(|g_i|, |n_i|, floor)``;
    ``floor`` keeps entries whose true derivative is zero from dividing by
    rounding noise.
    """
    x0 = np.array(as_matrix(x).data, dtype=np.float64)
    tape = Tape()
    xt = tape.watch(x0)
    (g,) = grad(f(xt), [xt])

    num = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        xp = x0.copy()
        xp[idx] += step
        xm = x0.copy()
        xm[idx] -= step
        num[idx] = (float(f(Matrix(xp))) - float(f(Matrix(xm)))) / (2.0 * step)

    diff = np.abs(g - num)
    rel = diff / np.maximum(np.maximum(np.abs(g), np.abs(num)), floor)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckReport(
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        max_abs_error=float(diff.max()) if diff.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        tolerance=tolerance,
        analytic=g,
        numeric=num,
    )

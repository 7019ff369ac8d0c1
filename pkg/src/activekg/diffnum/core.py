"""Reverse-mode autodiff on small float64 tensors (rank <= 2).

A `Tape` records primitive applications while active; `Tape.backward` walks
the records in reverse and populates `.grad` on every reachable tensor with
`requires_grad=True`. Tapes are cheap, per-episode objects: build one, run
the episode under it, backprop, drop it.

Design constraints honored here:
  * float64 only, row-major, no broadcasting beyond scalar-with-anything
  * shape errors name the op and the offending shapes
  * softmax / log-softmax / BCE are log-sum-exp stabilized
  * running backward twice without `reset()` raises
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .backend import kernels


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_ACTIVE: list["Tape | None"] = []


def active_tape() -> "Tape | None":
    return _ACTIVE[-1] if _ACTIVE else None


class Tape:
    """Dynamic record of primitive applications for one backward pass."""

    __slots__ = ("_records", "_consumed")

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], bw: Callable) -> None:
        out._tape = self
        out._idx = len(self._records)
        self._records.append((out, parents, bw))

    def backward(self, root: "Tensor") -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        if root._tape is not self:
            raise TapeError("backward root was not produced on this tape")
        if root.data.size != 1:
            raise TapeError(f"backward root must be scalar, got shape {root.data.shape}")
        self._consumed = True
        root.grad = np.ones_like(root.data)
        for idx in range(root._idx, -1, -1):
            out, parents, bw = self._records[idx]
            g = out.grad
            if g is None:
                continue
            pgrads = bw(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = pg
                else:
                    p.grad = p.grad + pg

    def reset(self) -> None:
        """Clear intermediate grads and allow another backward pass.

        Grads of leaf tensors (parameters) are left alone; callers zero
        those explicitly when they mean to.
        """
        self._consumed = False
        for out, _, _ in self._records:
            out.grad = None


class no_tape:
    """Context manager that suspends recording (detached forward passes)."""

    def __enter__(self) -> None:
        _ACTIVE.append(None)

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_idx")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"Tensor: rank {arr.ndim} not supported (max 2), shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._idx: int = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has shape {self.data.shape}, not scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; floats and ints wrap as constant scalars
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.float64(x))
    raise TypeError(f"cannot use {type(x).__name__} in a Tensor op")


def constant(x) -> Tensor:
    return _wrap(x)


def _emit(out_data: np.ndarray, parents: tuple[Tensor, ...], bw: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, bw)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}")


# ---------------------------------------------------------------- arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    da, db = a.data, b.data
    return _emit(
        da * db,
        (a, b),
        lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("div", a, b)
    da, db = a.data, b.data
    return _emit(
        da / db,
        (a, b),
        lambda g: (
            _unbroadcast(g / db, da.shape),
            _unbroadcast(-g * da / (db * db), db.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    da, db = a.data, b.data
    if da.ndim == 2 and db.ndim == 1:
        if da.shape[1] != db.shape[0]:
            raise ShapeError(f"matmul: {da.shape} @ {db.shape}")
        return _emit(da @ db, (a, b), lambda g: (np.outer(g, db), da.T @ g))
    if da.ndim == 1 and db.ndim == 2:
        if da.shape[0] != db.shape[0]:
            raise ShapeError(f"matmul: {da.shape} @ {db.shape}")
        return _emit(da @ db, (a, b), lambda g: (db @ g, np.outer(da, g)))
    if da.ndim == 2 and db.ndim == 2:
        if da.shape[1] != db.shape[0]:
            raise ShapeError(f"matmul: {da.shape} @ {db.shape}")
        return _emit(da @ db, (a, b), lambda g: (g @ db.T, da.T @ g))
    if da.ndim == 1 and db.ndim == 1:
        if da.shape[0] != db.shape[0]:
            raise ShapeError(f"matmul: {da.shape} @ {db.shape}")
        return _emit(np.float64(da @ db), (a, b), lambda g: (g * db, g * da))
    raise ShapeError(f"matmul: unsupported ranks {da.shape} @ {db.shape}")


def dot(a: Tensor, b: Tensor) -> Tensor:
    return matmul(a, b)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """w @ x + b on 1-d x, fused into a single tape record (hot path)."""
    dw, dx, db = w.data, x.data, b.data
    if dw.ndim != 2 or dx.ndim != 1 or db.ndim != 1 or dw.shape[1] != dx.shape[0] or dw.shape[0] != db.shape[0]:
        raise ShapeError(f"affine: {dw.shape} @ {dx.shape} + {db.shape}")

    def bw(g):
        return kernels.affine_bw(dw, dx, g)

    return _emit(kernels.affine(dw, dx, db), (w, x, b), bw)


# ----------------------------------------------------------------- reshapes


def sum_(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _emit(np.float64(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape = a.data.shape
    n = a.data.size
    return _emit(np.float64(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def sum0(a: Tensor) -> Tensor:
    """Sum over axis 0 of a rank-2 tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum0: expected rank 2, got shape {a.data.shape}")
    k = a.data.shape[0]
    return _emit(a.data.sum(axis=0), (a,), lambda g: (np.tile(g, (k, 1)),))


def mean0(a: Tensor) -> Tensor:
    """Mean over axis 0 of a rank-2 tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean0: expected rank 2, got shape {a.data.shape}")
    k = a.data.shape[0]
    return _emit(a.data.mean(axis=0), (a,), lambda g: (np.tile(g / k, (k, 1)),))


def stack(vs: Sequence[Tensor]) -> Tensor:
    """Stack rank-1 tensors into rows of a rank-2 tensor."""
    if not vs:
        raise ShapeError("stack: empty input")
    n = vs[0].data.shape
    for v in vs:
        if v.data.ndim != 1 or v.data.shape != n:
            raise ShapeError(f"stack: expected uniform rank-1 shapes, got {[v.data.shape for v in vs]}")
    return _emit(np.stack([v.data for v in vs]), tuple(vs), lambda g: tuple(g[i] for i in range(len(vs))))


def concat(vs: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-1 tensors."""
    if not vs:
        raise ShapeError("concat: empty input")
    for v in vs:
        if v.data.ndim != 1:
            raise ShapeError(f"concat: expected rank-1 inputs, got shape {v.data.shape}")
    sizes = [v.data.shape[0] for v in vs]
    offs = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(sizes)))

    return _emit(np.concatenate([v.data for v in vs]), tuple(vs), bw)


def row(table: Tensor, i: int) -> Tensor:
    if table.data.ndim != 2:
        raise ShapeError(f"row: expected rank 2, got shape {table.data.shape}")
    shape = table.data.shape

    def bw(g):
        gt = np.zeros(shape)
        gt[i] = g
        return (gt,)

    return _emit(table.data[i].copy(), (table,), bw)


def slice_vec(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"slice_vec: expected rank 1, got shape {a.data.shape}")
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"slice_vec: range [{start}, {stop}) invalid for shape {a.data.shape}")
    n = a.data.shape[0]

    def bw(g):
        ga = np.zeros(n)
        ga[start:stop] = g
        return (ga,)

    return _emit(a.data[start:stop].copy(), (a,), bw)


def pick(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"pick: expected rank 1, got shape {a.data.shape}")
    n = a.data.shape[0]

    def bw(g):
        ga = np.zeros(n)
        ga[i] = float(np.asarray(g).reshape(()))
        return (ga,)

    return _emit(np.float64(a.data[i]), (a,), bw)


# --------------------------------------------------------------- nonlinear


def softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"softmax: expected rank 1, got shape {a.data.shape}")
    y = kernels.softmax(a.data)
    return _emit(y, (a,), lambda g: (kernels.softmax_bw(y, g),))


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"log_softmax: expected rank 1, got shape {a.data.shape}")
    y = kernels.log_softmax(a.data)
    return _emit(y, (a,), lambda g: (kernels.log_softmax_bw(y, g),))


def logsumexp(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"logsumexp: expected rank 1, got shape {a.data.shape}")
    val = kernels.logsumexp(a.data)
    sm = kernels.softmax(a.data)
    return _emit(np.float64(val), (a,), lambda g: (g * sm,))


def _ew(op: str, a: Tensor) -> np.ndarray:
    d = a.data
    return d if d.ndim == 1 else d.reshape(-1)


def sigmoid(a: Tensor) -> Tensor:
    flat = a.data.reshape(-1)
    y = kernels.sigmoid(flat).reshape(a.data.shape)
    return _emit(y, (a,), lambda g: (kernels.sigmoid_bw(y.reshape(-1), g.reshape(-1)).reshape(a.data.shape),))


def tanh(a: Tensor) -> Tensor:
    flat = a.data.reshape(-1)
    y = kernels.tanh_(flat).reshape(a.data.shape)
    return _emit(y, (a,), lambda g: (kernels.tanh_bw(y.reshape(-1), g.reshape(-1)).reshape(a.data.shape),))


def softplus(a: Tensor) -> Tensor:
    flat = a.data.reshape(-1)
    y = kernels.softplus(flat).reshape(a.data.shape)
    return _emit(y, (a,), lambda g: (kernels.softplus_bw(flat, g.reshape(-1)).reshape(a.data.shape),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    d = a.data
    return _emit(np.log(d), (a,), lambda g: (g / d,))


def square(a: Tensor) -> Tensor:
    d = a.data
    return _emit(d * d, (a,), lambda g: (2.0 * g * d,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _emit(y, (a,), lambda g: (g / (2.0 * y),))


def straight_through_onehot(soft: Tensor) -> Tensor:
    """Forward: one-hot at argmax(soft). Backward: identity to the soft weights."""
    if soft.data.ndim != 1:
        raise ShapeError(f"straight_through_onehot: expected rank 1, got shape {soft.data.shape}")
    hard = np.zeros_like(soft.data)
    hard[int(soft.data.argmax())] = 1.0
    return _emit(hard, (soft,), lambda g: (g,))


def bce_with_logits(logit: Tensor, target: float) -> Tensor:
    """Binary cross-entropy from a scalar logit, log-sum-exp stabilized.

    loss = max(z, 0) - z * y + log(1 + exp(-|z|))
    """
    if logit.data.size != 1:
        raise ShapeError(f"bce_with_logits: expected scalar logit, got shape {logit.data.shape}")
    z = float(logit.data.reshape(()))
    val = max(z, 0.0) - z * target + math.log1p(math.exp(-abs(z)))
    sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))

    def bw(g):
        return (np.asarray(g * (sig - target)).reshape(logit.data.shape),)

    return _emit(np.float64(val), (logit,), bw)


def entropy_from_logits(a: Tensor) -> Tensor:
    """Shannon entropy of softmax(a), stable at sharp logits: H = lse(a) - p.a"""
    return sub(logsumexp(a), dot(softmax(a), a))


# ------------------------------------------------------------------ dispatch

PRIMITIVES: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "affine": affine,
    "sum": sum_,
    "mean": mean,
    "sum0": sum0,
    "mean0": mean0,
    "slice_vec": slice_vec,
    "stack": stack,
    "concat": concat,
    "row": row,
    "pick": pick,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "logsumexp": logsumexp,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "square": square,
    "sqrt": sqrt,
    "straight_through_onehot": straight_through_onehot,
    "bce_with_logits": bce_with_logits,
}


def forward_primitive(op: str, inputs: Sequence) -> Tensor:
    """Apply a primitive by name. `inputs` holds the op's positional args."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise KeyError(f"unknown primitive {op!r}") from None
    if op in ("stack", "concat"):
        return fn(list(inputs))
    return fn(*inputs)


# ------------------------------------------------------------------ sampling


def gumbel_sample(shape: tuple[int, ...] | int, rng: np.random.Generator) -> Tensor:
    """Standard Gumbel(0, 1) draws: g = -log(-log(u)), u ~ U(0, 1)."""
    u = rng.random(shape)
    # rng.random lives in [0, 1); nudge zeros away from the log singularity
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return Tensor(-np.log(-np.log(u)))


def normal_sample(shape: tuple[int, ...] | int, rng: np.random.Generator) -> Tensor:
    return Tensor(rng.standard_normal(shape))


# ------------------------------------------------------------------ gradcheck


def gradcheck(
    f: Callable[[list[Tensor]], Tensor],
    inputs: list[Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
) -> float:
    """Compare tape gradients of scalar f against central finite differences.

    Returns the worst relative error, raising AssertionError past `rtol`.
    The relative error uses a unit floor so near-zero gradients are compared
    absolutely.
    """
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = f(inputs)
        tape.backward(out)
    worst = 0.0
    for t in inputs:
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_tape():
                fp = f(inputs).item()
            flat[i] = orig - h
            with no_tape():
                fm = f(inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(ana.reshape(-1)[i])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
            if err > rtol:
                raise AssertionError(
                    f"gradcheck failed at input shape {t.data.shape} index {i}: "
                    f"analytic {a:.8g} vs numeric {num:.8g} (rel err {err:.3g})"
                )
    return worst

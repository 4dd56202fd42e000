"""Dense float64 tensors with taped reverse-mode differentiation.

The operation set is exactly what the mask decoder needs: elementwise
arithmetic, 2-d matmul and shape moves, row softmax, channel concat, and a
scalar reduction. Convolution, pixel shuffle and grid sampling live in
``nn`` and hook into the same tape through :func:`record_op`.

Gradients are define-by-run: ops executed inside a ``with Tape():`` block
append one entry each, and :func:`backward` replays the tape once in
reverse recording order (recording order is a topological order by
construction, since an op's inputs exist before it runs). Outside a tape
nothing is recorded, so inference and evaluation pay no bookkeeping.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    """A dense n-d array of float64 with an optional gradient buffer.

    ``data`` is C-contiguous, so its flat view is the row-major storage.
    Tensors are treated as immutable after creation; only ``grad`` is
    written, by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.dims}")
        return float(self.data.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(dims={self.dims}, requires_grad={self.requires_grad})"


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Ordered record of one forward pass, rebuilt per pass (define-by-run)."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)


_TAPES: list[Tape] = []


def record_op(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> None:
    """Append an op to the innermost active tape.

    No-op when no tape is active or no parent is traced, so untaped code
    paths stay allocation-free. ``backward_fn(grad_out)`` must accumulate
    into the parents via :func:`accumulate_grad`.
    """
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPES[-1]._entries.append((out, parents, backward_fn))


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every traced tensor under the recorded graph.

    ``loss`` must be a single-element tensor. Grads are set (not
    accumulated) per call: every tensor the tape touches is reset first,
    and traced tensors left off the loss path end up with zeros.
    """
    if tape is None:
        if not _TAPES:
            raise RuntimeError("backward() requires an active or explicitly passed Tape")
        tape = _TAPES[-1]
    if loss.numel() != 1:
        raise ShapeError(f"loss must be scalar, got dims {loss.dims}")

    involved: dict[int, Tensor] = {}
    for out, parents, _ in tape._entries:
        involved[id(out)] = out
        for p in parents:
            involved[id(p)] = p
    for t in involved.values():
        t.grad = None

    loss.grad = np.ones_like(loss.data)
    for out, parents, fn in reversed(tape._entries):
        if out.grad is None:
            continue  # not on the loss path; contributes nothing
        fn(out.grad)

    for t in involved.values():
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# Elementwise ops


def _check_same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name}: shape {a.dims} vs {b.dims}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def fn(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    record_op(out, (a, b), fn)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def fn(g):
        accumulate_grad(a, g)
        accumulate_grad(b, -g)

    record_op(out, (a, b), fn)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def fn(g):
        accumulate_grad(a, g * b.data)
        accumulate_grad(b, g * a.data)

    record_op(out, (a, b), fn)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    out = Tensor(a.data / b.data)

    def fn(g):
        accumulate_grad(a, g / b.data)
        accumulate_grad(b, -g * out.data / b.data)

    record_op(out, (a, b), fn)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def fn(g):
        accumulate_grad(a, g * s)

    record_op(out, (a,), fn)
    return out


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data + float(s))

    def fn(g):
        accumulate_grad(a, g)

    record_op(out, (a,), fn)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data)

    def fn(g):
        accumulate_grad(a, g * out.data * (1.0 - out.data))

    record_op(out, (a,), fn)
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input (callers clamp first)")
    out = Tensor(np.log(a.data))

    def fn(g):
        accumulate_grad(a, g / a.data)

    record_op(out, (a,), fn)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data >= lo) & (a.data <= hi)

    def fn(g):
        accumulate_grad(a, g * inside)

    record_op(out, (a,), fn)
    return out


# ---------------------------------------------------------------------------
# Linear algebra and shape moves


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.dims} and {b.dims}")
    if a.dims[1] != b.dims[0]:
        raise ShapeError(f"matmul inner dims differ: {a.dims} vs {b.dims}")
    out = Tensor(a.data @ b.data)

    def fn(g):
        accumulate_grad(a, g @ b.data.T)
        accumulate_grad(b, a.data.T @ g)

    record_op(out, (a, b), fn)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {a.dims}")
    out = Tensor(a.data.T)

    def fn(g):
        accumulate_grad(a, g.T)

    record_op(out, (a,), fn)
    return out


def reshape(a: Tensor, dims) -> Tensor:
    dims = tuple(int(d) for d in dims)
    target = int(np.prod(dims)) if dims else 1
    if target != a.numel():
        raise ShapeError(f"cannot reshape {a.dims} to {dims}")
    out = Tensor(a.data.reshape(dims))

    def fn(g):
        accumulate_grad(a, g.reshape(a.data.shape))

    record_op(out, (a,), fn)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_rows needs a 2-d tensor, got {a.dims}")
    if not (0 <= start < stop <= a.dims[0]):
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {a.dims}")
    out = Tensor(a.data[start:stop])

    def fn(g):
        buf = np.zeros_like(a.data)
        buf[start:stop] = g
        accumulate_grad(a, buf)

    record_op(out, (a,), fn)
    return out


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-F vector to every row of an (N, F) tensor."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.dims[1] != v.dims[0]:
        raise ShapeError(f"add_rowvec: {a.dims} vs {v.dims}")
    out = Tensor(a.data + v.data)

    def fn(g):
        accumulate_grad(a, g)
        accumulate_grad(v, g.sum(axis=0))

    record_op(out, (a, v), fn)
    return out


def concat_channels(tensors) -> Tensor:
    """Stack (C_i, H, W) tensors along the channel axis, argument order kept."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    hw = tensors[0].dims[1:]
    for t in tensors:
        if t.data.ndim != 3:
            raise ShapeError(f"concat_channels needs 3-d tensors, got {t.dims}")
        if t.dims[1:] != hw:
            raise ShapeError(f"concat_channels spatial mismatch: {t.dims} vs (*, {hw[0]}, {hw[1]})")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
    offsets = np.cumsum([0] + [t.dims[0] for t in tensors])

    def fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            accumulate_grad(t, g[lo:hi])

    record_op(out, tuple(tensors), fn)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def fn(g):
        accumulate_grad(a, np.full_like(a.data, float(g)))

    record_op(out, (a,), fn)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, stabilized by row-max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-d tensor, got {a.dims}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = Tensor(e / e.sum(axis=1, keepdims=True))

    def fn(g):
        y = out.data
        accumulate_grad(a, (g - (g * y).sum(axis=1, keepdims=True)) * y)

    record_op(out, (a,), fn)
    return out


# ---------------------------------------------------------------------------
# Finite-difference oracle


def finite_diff_grad(f, x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar-valued ``f`` at ``x``.

    The independent oracle for every analytic backward rule in the
    package. ``f`` receives a plain (untraced) tensor and must return a
    scalar Tensor or float; evaluations run outside any tape.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def eval_at(arr):
        r = f(Tensor(arr))
        return r.item() if isinstance(r, Tensor) else float(r)

    base = x.data.copy()
    flat = base.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = eval_at(base)
        flat[i] = orig - eps
        lo = eval_at(base)
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * eps)
    return Tensor(g.reshape(x.data.shape))

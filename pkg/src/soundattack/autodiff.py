"""A small tape-based reverse-mode autodiff engine over numpy arrays.

Every operation appends one node to its tape; ``Tape.backward`` walks the
nodes in reverse append order exactly once.  Plain arrays and floats mixed
into an expression are constants.

    tape = Tape()
    x = tape.leaf(np.ones(3))
    y = ad.sum(ad.sigmoid(x * 2.0))
    grads = tape.backward(y)
    grads[x]
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor operators

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, index={self.index})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Gradients:
    """Gradient buffer returned by a backward pass, indexed by tensor."""

    def __init__(self, grads: list):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads[t.index]
        return np.zeros_like(t.value) if g is None else g


class Tape:
    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int | None, ...]] = []
        self.backwards: list[Backward | None] = []

    def __len__(self):
        return len(self.values)

    def leaf(self, value) -> Tensor:
        """Record an input.  float32 arrays stay float32; anything else becomes float64."""
        arr = np.asarray(value)
        return self._push(np.array(arr, dtype=arr.dtype if arr.dtype == np.float32 else float), (), None)

    def _push(self, value, parents, backward) -> Tensor:
        self.values.append(value)
        self.parents.append(parents)
        self.backwards.append(backward)
        return Tensor(value, self, len(self.values) - 1)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> Gradients:
        if output.tape is not self:
            raise ValueError("output tensor belongs to a different tape")
        grads: list = [None] * len(self.values)
        owned = [False] * len(self.values)  # buffer is private, safe to add into
        grads[output.index] = np.ones_like(output.value) if seed is None else np.asarray(seed, float)
        for i in range(output.index, -1, -1):
            g = grads[i]
            fn = self.backwards[i]
            grads[i] = g if fn is None else None  # interior gradients are not kept
            if g is None or fn is None:
                continue
            for p, gp in zip(self.parents[i], fn(g)):
                if p is None or gp is None:
                    continue
                if gp.dtype != self.values[p].dtype:
                    gp = gp.astype(self.values[p].dtype)
                if grads[p] is None:
                    grads[p] = gp
                elif owned[p] and grads[p].shape == np.shape(gp):
                    grads[p] += gp
                else:
                    grads[p] = grads[p] + gp
                    owned[p] = True
        return Gradients(grads)


def value(x) -> np.ndarray:
    """The array behind ``x``; float32 arrays are kept, everything else is float64."""
    if isinstance(x, Tensor):
        return x.value
    arr = np.asarray(x)
    return arr if arr.dtype == np.float32 else arr.astype(float)


def _operand(x):
    # Python scalars stay weakly typed so float32 expressions remain float32
    if isinstance(x, Tensor):
        return x.value
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    return value(x)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Tensor):
            if tape is not None and x.tape is not tape:
                raise ValueError("tensors from different tapes")
            tape = x.tape
    return tape


def _idx(x):
    return x.index if isinstance(x, Tensor) else None


def _record(out: np.ndarray, inputs: tuple, backward: Backward):
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    return tape._push(out, tuple(_idx(x) for x in inputs), backward)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def _grad_if(x, fn):
    # skip gradient work for constant operands
    return fn() if isinstance(x, Tensor) else None


def add(a, b):
    va, vb = _operand(a), _operand(b)
    return _record(
        va + vb,
        (a, b),
        lambda g: (
            _grad_if(a, lambda: unbroadcast(g, va.shape)),
            _grad_if(b, lambda: unbroadcast(g, vb.shape)),
        ),
    )


def sub(a, b):
    va, vb = _operand(a), _operand(b)
    return _record(
        va - vb,
        (a, b),
        lambda g: (
            _grad_if(a, lambda: unbroadcast(g, va.shape)),
            _grad_if(b, lambda: unbroadcast(-g, vb.shape)),
        ),
    )


def mul(a, b):
    va, vb = _operand(a), _operand(b)
    return _record(
        va * vb,
        (a, b),
        lambda g: (
            _grad_if(a, lambda: unbroadcast(g * vb, va.shape)),
            _grad_if(b, lambda: unbroadcast(g * va, vb.shape)),
        ),
    )


def div(a, b):
    va, vb = _operand(a), _operand(b)
    out = va / vb
    return _record(
        out,
        (a, b),
        lambda g: (
            _grad_if(a, lambda: unbroadcast(g / vb, va.shape)),
            _grad_if(b, lambda: unbroadcast(-g * out / vb, vb.shape)),
        ),
    )


def neg(a):
    return _record(-value(a), (a,), lambda g: (-g,))


def power(a, exponent: float):
    va = value(a)
    return _record(va**exponent, (a,), lambda g: (g * exponent * va ** (exponent - 1),))


def exp(a):
    out = np.exp(value(a))
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    va = value(a)
    return _record(np.log(va), (a,), lambda g: (g / va,))


def sqrt(a):
    out = np.sqrt(value(a))
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a):
    va = value(a)
    pos = va > 0
    return _record(np.where(pos, va, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a):
    out = expit(value(a))
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(value(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out**2),))


def clip(a, lo: float, hi: float):
    """Clamp; the gradient is zero where the clamp is active."""
    va = value(a)
    inside = (va >= lo) & (va <= hi)
    return _record(np.clip(va, lo, hi), (a,), lambda g: (g * inside,))


def _row_mean(x: np.ndarray, col: np.ndarray) -> np.ndarray:
    # mean over a short last axis; a matrix-vector product is far faster than
    # numpy's reduction loop here
    return x @ col


def layer_norm(a, eps: float = 1e-5, relu: bool = False):
    """Normalize the last axis to zero mean and unit variance (no affine part).

    ``relu=True`` fuses a trailing ReLU into the same node.
    """
    va = value(a)
    col = np.full((va.shape[-1], 1), 1.0 / va.shape[-1], dtype=va.dtype)
    centered = va - _row_mean(va, col)
    inv = 1.0 / np.sqrt(_row_mean(centered * centered, col) + eps)
    normed = centered * inv
    out = np.maximum(normed, 0.0) if relu else normed

    def backward(g):
        if relu:
            g = g * (normed > 0)
        gm = _row_mean(g, col)
        gy = _row_mean(g * normed, col)
        return (inv * (g - gm - normed * gy),)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------- linear algebra / shape


def _matmul_stacked(a, b, va, vb):
    # (..., k) @ (k, d) as a single 2-D product over the flattened leading axes
    flat = va.reshape(-1, va.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ vb.T).reshape(va.shape) if isinstance(a, Tensor) else None
        gb = flat.T @ g2 if isinstance(b, Tensor) else None
        return ga, gb

    return _record((flat @ vb).reshape(va.shape[:-1] + (vb.shape[1],)), (a, b), backward)


def linear(xs, w, b):
    """``concat(xs, -1) @ w + b`` without materializing the concatenation.

    ``xs`` is one array of shape (..., k) or a list of arrays whose last axes
    sum to k; ``w`` has shape (k, d) and ``b`` shape (d,).
    """
    parts = list(xs) if isinstance(xs, (list, tuple)) else [xs]
    vals = [value(x) for x in parts]
    vw, vb = value(w), value(b)
    lead = vals[0].shape[:-1]
    flats = [v.reshape(-1, v.shape[-1]) for v in vals]
    bounds = np.cumsum([0] + [v.shape[-1] for v in vals])
    blocks = [vw[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
    out = flats[0] @ blocks[0]
    for f, blk in zip(flats[1:], blocks[1:]):
        out += f @ blk
    out += vb

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gxs = [
            (g2 @ blk.T).reshape(v.shape) if isinstance(x, Tensor) else None
            for x, v, blk in zip(parts, vals, blocks)
        ]
        gw = None
        if isinstance(w, Tensor):
            gw = np.concatenate([f.T @ g2 for f in flats], axis=0)
        gb = g2.sum(axis=0) if isinstance(b, Tensor) else None
        return (*gxs, gw, gb)

    return _record(out.reshape(lead + (vw.shape[1],)), (*parts, w, b), backward)


def matmul(a, b):
    va, vb = value(a), value(b)
    if va.ndim >= 3 and vb.ndim == 2:
        return _matmul_stacked(a, b, va, vb)
    need_a, need_b = isinstance(a, Tensor), isinstance(b, Tensor)

    def backward(g):
        ga = gb = None
        if need_a:
            if vb.ndim == 1:
                ga = np.multiply.outer(g, vb) if va.ndim > 1 else g * vb
            else:
                g2 = g[..., None, :] if va.ndim == 1 else g
                ga = g2 @ np.swapaxes(vb, -1, -2)
                if va.ndim == 1:
                    ga = ga[..., 0, :]
            ga = unbroadcast(ga, va.shape)
        if need_b:
            if va.ndim == 1:
                gb = np.multiply.outer(va, g)
            else:
                g2 = g[..., None] if vb.ndim == 1 else g
                gb = np.swapaxes(va, -1, -2) @ g2
                if vb.ndim == 1:
                    gb = gb[..., 0]
            gb = unbroadcast(gb, vb.shape)
        return ga, gb

    return _record(va @ vb, (a, b), backward)


def matmul_tn(a, b):
    """``swapaxes(a, -1, -2) @ b`` for stacks of matrices.

    The gradient for ``a`` comes out in ``a``'s own layout, which avoids a
    strided accumulation through a transpose node.
    """
    va, vb = value(a), value(b)
    if va.ndim < 2 or vb.ndim < 2:
        raise ValueError("matmul_tn needs at least 2-D operands")

    def backward(g):
        ga = unbroadcast(vb @ np.swapaxes(g, -1, -2), va.shape) if isinstance(a, Tensor) else None
        gb = unbroadcast(va @ g, vb.shape) if isinstance(b, Tensor) else None
        return ga, gb

    return _record(np.swapaxes(va, -1, -2) @ vb, (a, b), backward)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    va = value(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, va.shape),)

    return _record(np.sum(va, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False):
    va = value(a)
    count = va.size if axis is None else np.prod([va.shape[ax] for ax in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    va = value(a)
    return _record(va.reshape(shape), (a,), lambda g: (g.reshape(va.shape),))


def swapaxes(a, ax1: int, ax2: int):
    return _record(np.swapaxes(value(a), ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(xs: Sequence, axis: int = -1):
    vals = [value(x) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(np.concatenate(vals, axis=axis), tuple(xs), backward)


def take(a, indices, axis: int):
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    va = value(a)
    idx = np.asarray(indices)
    size = va.shape[axis]
    if idx.ndim == 1 and len(idx) == size and np.array_equal(np.sort(idx), np.arange(size)):
        # a permutation: the gradient is the inverse gather
        inverse = np.argsort(idx)
        return _record(np.take(va, idx, axis=axis), (a,), lambda g: (np.take(g, inverse, axis=axis),))

    def backward(g):
        out = np.zeros_like(va)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _record(np.take(va, idx, axis=axis), (a,), backward)


# ---------------------------------------------------------------- optimizer


class Adam:
    """Adam over a list of arrays, updated in place.

    ``maximize=True`` performs gradient ascent (used by the attacks).
    """

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        maximize: bool = False,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.sign = 1.0 if maximize else -1.0
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p += self.sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

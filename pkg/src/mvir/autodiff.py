"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine covers exactly the operations the fusion model graph needs:
matrix product, dilated 1-D convolution, softmax, layer norm, relu,
concat/slice/reshape, dropout, and a handful of reductions. Tensors are
immutable once created within a graph evaluation, so creation order is a
valid topological order; ``backward`` walks the recorded graph in reverse
creation order and accumulates gradients into every tensor that requires
them. Gradients of shared subexpressions sum, and max-style reductions
route their gradient to the argmax element (lowest index on ties).

numpy provides the dense storage and the vectorized arithmetic inside each
operation; every backward rule here is hand-derived and checked against
central finite differences in the test suite.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

_seq = itertools.count()


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        # order="C" keeps the row-major invariant without promoting 0-d scalars
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Populate ``grad`` for every requires_grad tensor reachable from self.

        Only scalar outputs can seed a backward pass. Existing gradient
        buffers are accumulated into, not reset; callers zero them between
        optimization steps.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() requires a scalar output, got shape {self.shape}")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in visited:
                continue
            visited.add(id(t))
            order.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append(p)
        # Reverse creation order is a topological order: inputs always
        # predate the op outputs they feed.
        order.sort(key=lambda t: t._seq, reverse=True)
        for t in order:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        self.grad = self.grad + np.ones_like(self.data)
        for t in order:
            if t._backward is not None:
                t._backward(t.grad)

    # -- scalar / elementwise arithmetic ---------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add_const(self, -float(other))

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("tensor/tensor division is not part of the op set")
        return div_const(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports adding a length-k row bias to an n-by-k matrix."""
    if a.shape == b.shape:
        def rule(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g
        return _from_op(a.data + b.data, (a, b), rule)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def rule(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g.sum(axis=0)
        return _from_op(a.data + b.data[None, :], (a, b), rule)
    raise DimensionError(f"add shapes {a.shape} and {b.shape} do not align")


def add_const(a: Tensor, c: float) -> Tensor:
    def rule(g):
        if a.requires_grad:
            a.grad += g
    return _from_op(a.data + c, (a,), rule)


def scale(a: Tensor, c: float) -> Tensor:
    def rule(g):
        if a.requires_grad:
            a.grad += c * g
    return _from_op(a.data * c, (a,), rule)


def div_const(a: Tensor, c: float) -> Tensor:
    """True division by a constant (not multiplication by its reciprocal)."""
    def rule(g):
        if a.requires_grad:
            a.grad += g / c
    return _from_op(a.data / c, (a,), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {a.shape} and {b.shape} do not align")
    def rule(g):
        if a.requires_grad:
            a.grad += g * b.data
        if b.requires_grad:
            b.grad += g * a.data
    return _from_op(a.data * b.data, (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    def rule(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g
    return _from_op(a.data @ b.data, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    def rule(g):
        if a.requires_grad:
            a.grad += g.T
    return _from_op(a.data.T, (a,), rule)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def rule(g):
        if a.requires_grad:
            a.grad += g.reshape(a.shape)
    return _from_op(a.data.reshape(shape), (a,), rule)


def concat_axis(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Join tensors along ``axis``; all other dimensions must match."""
    if not parts:
        raise UsageError("concat_axis of an empty sequence")
    ndim = parts[0].data.ndim
    if axis < 0 or axis >= ndim:
        raise DimensionError(f"concat axis {axis} invalid for {ndim}-d tensors")
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise DimensionError(
                f"concat rank mismatch: {parts[0].shape} vs {p.shape}")
        for ax in range(ndim):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise DimensionError(
                    f"concat shapes {parts[0].shape} and {p.shape} differ on axis {ax}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                p.grad += g[tuple(idx)]
    return _from_op(np.concatenate([p.data for p in parts], axis=axis), parts, rule)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got shape {a.shape}")
    def rule(g):
        if a.requires_grad:
            a.grad[:, lo:hi] += g
    return _from_op(a.data[:, lo:hi], (a,), rule)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a vector as n identical rows; gradient sums over the copies."""
    if v.data.ndim != 1:
        raise DimensionError(f"tile_rows expects a vector, got shape {v.shape}")
    def rule(g):
        if v.requires_grad:
            v.grad += g.sum(axis=0)
    return _from_op(np.tile(v.data, (n, 1)), (v,), rule)


def relu(a: Tensor) -> Tensor:
    def rule(g):
        if a.requires_grad:
            a.grad += g * (a.data > 0)
    return _from_op(np.maximum(a.data, 0.0), (a,), rule)


def log(a: Tensor) -> Tensor:
    def rule(g):
        if a.requires_grad:
            a.grad += g / a.data
    return _from_op(np.log(a.data), (a,), rule)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient is zero outside the open interval."""
    inside = (a.data > lo) & (a.data < hi)
    def rule(g):
        if a.requires_grad:
            a.grad += g * inside
    return _from_op(np.clip(a.data, lo, hi), (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    def rule(g):
        if a.requires_grad:
            a.grad += g
    return _from_op(np.sum(a.data), (a,), rule)


def fold_sum(a: Tensor) -> Tensor:
    """Strict left-to-right sum over flattened elements.

    Same gradient as sum_all; the fixed accumulation order makes the value
    bit-reproducible against an element-by-element scan, which numpy's
    pairwise summation is not.
    """
    total = 0.0
    for v in a.data.reshape(-1):
        total += float(v)
    def rule(g):
        if a.requires_grad:
            a.grad += g
    return _from_op(total, (a,), rule)


def mean_axis0(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"mean_axis0 expects a matrix, got shape {a.shape}")
    n = a.shape[0]
    def rule(g):
        if a.requires_grad:
            a.grad += g[None, :] / n
    return _from_op(a.data.mean(axis=0), (a,), rule)


def vmax(a: Tensor) -> Tensor:
    """Maximum over all elements; gradient routes to the first (lowest-index) argmax."""
    idx = int(np.argmax(a.data))
    def rule(g):
        if a.requires_grad:
            a.grad.reshape(-1)[idx] += float(g)
    return _from_op(np.max(a.data), (a,), rule)


def softmax_axis(a: Tensor, axis: int) -> Tensor:
    """Exponentials normalized along ``axis``, max-subtracted for stability."""
    if axis < -a.data.ndim or axis >= a.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    def rule(g):
        if a.requires_grad:
            a.grad += out * (g - (g * out).sum(axis=axis, keepdims=True))
    return _from_op(out, (a,), rule)


_LN_EPS = 1e-5


def layer_norm(a: Tensor, gain: Tensor, shift: Tensor) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine by gain and shift."""
    d = a.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/shift {gain.shape}/{shift.shape} do not match last dim {d}")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    normed = centered * inv
    out = normed * gain.data + shift.data

    def rule(g):
        if gain.requires_grad:
            gain.grad += (g * normed).reshape(-1, d).sum(axis=0)
        if shift.requires_grad:
            shift.grad += g.reshape(-1, d).sum(axis=0)
        if a.requires_grad:
            gn = g * gain.data
            # d/dx of (x - mean) * inv, with inv depending on the row variance
            a.grad += inv * (gn
                             - gn.mean(axis=-1, keepdims=True)
                             - normed * (gn * normed).mean(axis=-1, keepdims=True))
    return _from_op(out, (a, gain, shift), rule)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Zero each element with probability p and rescale survivors by 1/(1-p).

    Identity in eval mode and at p == 0. The mask comes from the explicit
    generator so a run seed reproduces every stochastic choice.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate {p} outside [0, 1)")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise UsageError("training-mode dropout requires a random generator")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    def rule(g):
        if a.requires_grad:
            a.grad += g * keep
    return _from_op(a.data * keep, (a,), rule)


def dilated_conv1d(x: Tensor, kernel: Tensor, bias: Tensor, dilation: int) -> Tensor:
    """1-D convolution over the first axis with dilated taps and same-size output.

    ``x`` is L-by-C_in, ``kernel`` is w-by-C_in-by-C_out with w odd, and the
    input is zero-padded by (w-1)*dilation/2 positions on each side so the
    output keeps length L. Positions that fall outside the input contribute
    zero.
    """
    if kernel.data.ndim != 3:
        raise ConfigurationError(f"kernel must be w-by-C_in-by-C_out, got shape {kernel.shape}")
    w, cin, cout = kernel.shape
    if w % 2 == 0:
        raise ConfigurationError(f"kernel width {w} must be odd")
    if not isinstance(dilation, int) or dilation < 1:
        raise ConfigurationError(f"dilation {dilation} must be a positive integer")
    if x.data.ndim != 2 or x.shape[1] != cin:
        raise DimensionError(f"input shape {x.shape} does not match kernel input width {cin}")
    if bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} does not match {cout} output channels")
    length = x.shape[0]
    center = (w - 1) // 2
    out = np.tile(bias.data, (length, 1))
    taps = []
    for j in range(w):
        off = (j - center) * dilation
        lo, hi = max(0, -off), min(length, length - off)
        if lo >= hi:
            continue
        out[lo:hi] += x.data[lo + off:hi + off] @ kernel.data[j]
        taps.append((j, lo, hi, off))

    def rule(g):
        if bias.requires_grad:
            bias.grad += g.sum(axis=0)
        for j, lo, hi, off in taps:
            if kernel.requires_grad:
                kernel.grad[j] += x.data[lo + off:hi + off].T @ g[lo:hi]
            if x.requires_grad:
                x.grad[lo + off:hi + off] += g[lo:hi] @ kernel.data[j].T
    return _from_op(out, (x, kernel, bias), rule)


def receptive_field(width: int, dilation: int) -> int:
    """Span of input positions one conv output sees: (w-1)*dilation + 1."""
    return (width - 1) * dilation + 1


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar graph function to central differences.

    Returns the max over all parameter elements of
    |analytic - numeric| / max(1, |analytic|, |numeric|). ``f`` is rebuilt
    on every call, so it must be a pure function of the current parameter
    data (fix dropout masks or run in eval mode).
    """
    out = f()
    if out.data.size != 1:
        raise UsageError(f"grad_check requires a scalar-valued function, got shape {out.shape}")
    for p in params:
        p.grad = np.zeros_like(p.data)
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = f().item()
            flat[i] = saved - h
            f_minus = f().item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst

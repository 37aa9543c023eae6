"""Minimal reverse-mode tape over numpy arrays.

All differentiable pipeline code is written against the free functions in
this module. Each function accepts either plain ndarrays (pure numpy fast
path, returns an ndarray) or :class:`Var` nodes (builds the tape, returns a
``Var``), so forward/inference code and training code share one
implementation. Reductions use numpy's deterministic evaluation order, which
keeps training trajectories reproducible for a fixed seed.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import signal


class Var:
    """A node in the computation graph: an ndarray value plus its adjoint."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray <op> Var defer to our reflected ops
    __array_priority__ = 1000

    def __init__(self, value, parents: Sequence["Var"] = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def accum(self, g, own: bool = False) -> None:
        """Add a gradient contribution. ``own=True`` promises ``g`` is a fresh
        array no other node aliases, letting the first contribution be
        adopted without a copy."""
        if self.grad is None:
            self.grad = g if (own and isinstance(g, np.ndarray)) else np.array(g)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this (scalar or array) node with seed grad 1."""
        topo: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accum(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def is_var(x) -> bool:
    return isinstance(x, Var)


def val(x) -> np.ndarray:
    """Underlying ndarray of a Var, or the input coerced to an ndarray."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def detach(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary ops -------------------------------------------------

def add(a, b):
    if not (is_var(a) or is_var(b)):
        return np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64)
    av, bv = val(a), val(b)
    out = Var(av + bv, [p for p in (a, b) if is_var(p)])

    def bwd(g):
        if is_var(a):
            ga = _unbroadcast(g, av.shape)
            a.accum(ga, own=ga is not g)
        if is_var(b):
            gb = _unbroadcast(g, bv.shape)
            b.accum(gb, own=gb is not g)

    out._backward = bwd
    return out


def mul(a, b):
    if not (is_var(a) or is_var(b)):
        return np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)
    av, bv = val(a), val(b)
    out = Var(av * bv, [p for p in (a, b) if is_var(p)])

    def bwd(g):
        if is_var(a):
            a.accum(_unbroadcast(g * bv, av.shape), own=True)
        if is_var(b):
            b.accum(_unbroadcast(g * av, bv.shape), own=True)

    out._backward = bwd
    return out


def div(a, b):
    if not (is_var(a) or is_var(b)):
        return np.asarray(a, dtype=np.float64) / np.asarray(b, dtype=np.float64)
    av, bv = val(a), val(b)
    out = Var(av / bv, [p for p in (a, b) if is_var(p)])

    def bwd(g):
        if is_var(a):
            a.accum(_unbroadcast(g / bv, av.shape), own=True)
        if is_var(b):
            b.accum(_unbroadcast(-g * av / (bv * bv), bv.shape), own=True)

    out._backward = bwd
    return out


def maximum(a, b):
    if not (is_var(a) or is_var(b)):
        return np.maximum(np.asarray(a, dtype=np.float64), b)
    av, bv = val(a), val(b)
    out = Var(np.maximum(av, bv), [p for p in (a, b) if is_var(p)])
    mask = av >= bv  # ties take the left branch

    def bwd(g):
        if is_var(a):
            a.accum(_unbroadcast(g * mask, av.shape), own=True)
        if is_var(b):
            b.accum(_unbroadcast(g * ~mask, bv.shape), own=True)

    out._backward = bwd
    return out


def minimum(a, b):
    if not (is_var(a) or is_var(b)):
        return np.minimum(np.asarray(a, dtype=np.float64), b)
    av, bv = val(a), val(b)
    out = Var(np.minimum(av, bv), [p for p in (a, b) if is_var(p)])
    mask = av <= bv

    def bwd(g):
        if is_var(a):
            a.accum(_unbroadcast(g * mask, av.shape), own=True)
        if is_var(b):
            b.accum(_unbroadcast(g * ~mask, bv.shape), own=True)

    out._backward = bwd
    return out


def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    if not (is_var(a) or is_var(b)):
        return np.where(cond, val(a), val(b))
    av, bv = val(a), val(b)
    out = Var(np.where(cond, av, bv), [p for p in (a, b) if is_var(p)])

    def bwd(g):
        if is_var(a):
            a.accum(_unbroadcast(g * cond, av.shape), own=True)
        if is_var(b):
            b.accum(_unbroadcast(g * ~cond, bv.shape), own=True)

    out._backward = bwd
    return out


# -- elementwise unary ops ---------------------------------------------------

def _unary(x, fwd, dfn):
    if not is_var(x):
        return fwd(np.asarray(x, dtype=np.float64))
    y = fwd(x.value)
    out = Var(y, (x,))

    def bwd(g):
        x.accum(g * dfn(x.value, y), own=True)

    out._backward = bwd
    return out


def exp(x):
    return _unary(x, np.exp, lambda xv, yv: yv)


def sin(x):
    return _unary(x, np.sin, lambda xv, yv: np.cos(xv))


def cos(x):
    return _unary(x, np.cos, lambda xv, yv: -np.sin(xv))


def log(x):
    return _unary(x, np.log, lambda xv, yv: 1.0 / xv)


def sqrt(x):
    return _unary(x, np.sqrt, lambda xv, yv: 0.5 / yv)


def tanh(x):
    return _unary(x, np.tanh, lambda xv, yv: 1.0 - yv * yv)


def sigmoid(x):
    def fwd(xv):
        out = np.empty_like(xv)
        pos = xv >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
        e = np.exp(xv[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return _unary(x, fwd, lambda xv, yv: yv * (1.0 - yv))


def relu(x):
    return _unary(x, lambda xv: np.maximum(xv, 0.0), lambda xv, yv: (xv > 0).astype(np.float64))


def absolute(x):
    return _unary(x, np.abs, lambda xv, yv: np.sign(xv))


def square(x):
    return _unary(x, np.square, lambda xv, yv: 2.0 * xv)


def power(x, p: float):
    p = float(p)
    return _unary(x, lambda xv: xv**p, lambda xv, yv: p * xv ** (p - 1.0))


# -- shape & reduction ops ---------------------------------------------------

def reshape(x, shape):
    if not is_var(x):
        return np.reshape(np.asarray(x, dtype=np.float64), shape)
    out = Var(x.value.reshape(shape), (x,))
    out._backward = lambda g: x.accum(g.reshape(x.value.shape))
    return out


def swapaxes(x, a1: int, a2: int):
    if not is_var(x):
        return np.swapaxes(np.asarray(x, dtype=np.float64), a1, a2)
    out = Var(np.swapaxes(x.value, a1, a2), (x,))
    out._backward = lambda g: x.accum(np.swapaxes(g, a1, a2))
    return out


def sum(x, axis=None, keepdims=False):  # noqa: A001 - numpy-style name
    if not is_var(x):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    y = np.sum(x.value, axis=axis, keepdims=keepdims)
    out = Var(y, (x,))

    def bwd(g):
        if axis is None:
            x.accum(np.broadcast_to(g, x.value.shape))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        x.accum(np.broadcast_to(gg, x.value.shape))

    out._backward = bwd
    return out


def mean(x, axis=None, keepdims=False):
    xv = val(x)
    if axis is None:
        n = xv.size
    elif isinstance(axis, tuple):
        n = int(np.prod([xv.shape[a] for a in axis]))
    else:
        n = xv.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def _fancy_key(key) -> bool:
    if isinstance(key, tuple):
        return any(isinstance(k, (np.ndarray, list)) for k in key)
    return isinstance(key, (np.ndarray, list))


def getitem(x, key):
    if not is_var(x):
        return np.asarray(x, dtype=np.float64)[key]
    out = Var(x.value[key], (x,))
    fancy = _fancy_key(key)  # repeated indices need scatter-add

    def bwd(g):
        gx = np.zeros_like(x.value)
        if fancy:
            np.add.at(gx, key, g)
        else:
            gx[key] += g
        x.accum(gx, own=True)

    out._backward = bwd
    return out


def take0(x, idx):
    """Gather rows along axis 0; adjoint is scatter-add (repeats allowed)."""
    idx = np.asarray(idx)
    return getitem(x, idx)


def scatter0(x, idx, size: int):
    """Rows of ``x`` placed at ``idx`` in a zero array of ``size`` rows."""
    idx = np.asarray(idx)
    xv = val(x)
    out_val = np.zeros((size,) + xv.shape[1:])
    np.add.at(out_val, idx, xv)
    if not is_var(x):
        return out_val
    out = Var(out_val, (x,))
    out._backward = lambda g: x.accum(g[idx], own=False)
    return out


def concatenate(parts, axis=0):
    if not any(is_var(p) for p in parts):
        return np.concatenate([val(p) for p in parts], axis=axis)
    vals = [val(p) for p in parts]
    out = Var(np.concatenate(vals, axis=axis), [p for p in parts if is_var(p)])
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if is_var(p):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p.accum(g[tuple(sl)])

    out._backward = bwd
    return out


def stack(parts, axis=0):
    expanded = []
    for p in parts:
        v = val(p)
        shape = list(v.shape)
        shape.insert(axis if axis >= 0 else v.ndim + 1 + axis, 1)
        expanded.append(reshape(p, tuple(shape)))
    return concatenate(expanded, axis=axis)


def matmul(a, b):
    if not (is_var(a) or is_var(b)):
        return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    av, bv = val(a), val(b)
    if av.ndim >= 2 and bv.ndim == 2:
        # stacked-rows case: one flat GEMM beats numpy's batched loop
        k = av.shape[-1]
        fwd = (av.reshape(-1, k) @ bv).reshape(av.shape[:-1] + (bv.shape[1],))
        out = Var(fwd, [p for p in (a, b) if is_var(p)])

        def bwd(g):
            g2 = g.reshape(-1, bv.shape[1])
            if is_var(a):
                a.accum((g2 @ bv.T).reshape(av.shape), own=True)
            if is_var(b):
                b.accum(av.reshape(-1, k).T @ g2, own=True)

        out._backward = bwd
        return out

    out = Var(av @ bv, [p for p in (a, b) if is_var(p)])

    def bwd(g):
        if is_var(a):
            ga = g @ np.swapaxes(bv, -1, -2) if bv.ndim > 1 else np.outer(g, bv).reshape(av.shape)
            a.accum(_unbroadcast(ga, av.shape), own=True)
        if is_var(b):
            if av.ndim == 1:
                gb = np.outer(av, g).reshape(bv.shape) if bv.ndim > 1 else av * g
            else:
                gb = np.swapaxes(av, -1, -2) @ g
            b.accum(_unbroadcast(gb, bv.shape), own=True)

    out._backward = bwd
    return out


def softmax(x, axis=-1):
    m = np.max(val(x), axis=axis, keepdims=True)  # shift is gradient-free
    e = exp(add(x, -m))
    return div(e, sum(e, axis=axis, keepdims=True))


# -- 2D filtering (custom ops with exact adjoints) ---------------------------

def pad_reflect2d(x, r: int):
    """Reflect-pad the last two axes by ``r`` (no edge repeat, numpy 'reflect')."""
    xv = val(x)
    h, w = xv.shape[-2], xv.shape[-1]
    ri = np.pad(np.arange(h), r, mode="reflect")
    ci = np.pad(np.arange(w), r, mode="reflect")
    if not is_var(x):
        return xv[..., ri[:, None], ci[None, :]]
    out = Var(xv[..., ri[:, None], ci[None, :]], (x,))

    def bwd(g):
        gx = np.zeros_like(xv)
        np.add.at(gx, (..., ri[:, None], ci[None, :]), g)
        x.accum(gx)

    out._backward = bwd
    return out


def conv2d_valid(x, kernel: np.ndarray):
    """Valid-mode 2D correlation of ``x`` (H,W) with a constant kernel."""
    kernel = np.asarray(kernel, dtype=np.float64)
    flipped = kernel[::-1, ::-1]

    def fwd(xv):
        return signal.fftconvolve(xv, flipped, mode="valid")

    if not is_var(x):
        return fwd(val(x))
    out = Var(fwd(x.value), (x,))

    def bwd(g):
        x.accum(signal.fftconvolve(g, kernel, mode="full"))

    out._backward = bwd
    return out


def custom_op(inputs: Sequence, forward_out: np.ndarray, backward: Callable):
    """Wrap an externally computed forward result into the tape.

    ``backward(g)`` must return one gradient array (or None) per input, in
    order; gradients for non-Var inputs are ignored.
    """
    var_inputs = [p for p in inputs if is_var(p)]
    if not var_inputs:
        return forward_out
    out = Var(forward_out, var_inputs)

    def bwd(g):
        grads = backward(g)
        for p, gp in zip(inputs, grads):
            if is_var(p) and gp is not None:
                p.accum(gp)

    out._backward = bwd
    return out

"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to its :class:`Var` nodes in
execution order; :meth:`Tape.backward` walks that record once in reverse.
Primitives accept plain arrays as well: when none of the inputs is a ``Var``
they simply return the numpy result, so the same model code serves both
training (taped) and inference (untaped).

Example::

    tape = Tape()
    p = tape.leaf(np.array([1.0, 2.0, 3.0]))
    loss = ad.sum(ad.square(p))
    tape.backward(loss)
    p.grad  # array([2., 4., 6.])
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import fft as _fft


class TapeError(RuntimeError):
    """Misuse of a tape: reuse after backward, foreign nodes, cycles."""


class Var:
    __slots__ = ("value", "tape", "index", "grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, name: str | None = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape}, node={self.index})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)


class _Node:
    __slots__ = ("inputs", "backward", "op")

    def __init__(self, inputs, backward, op):
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tape:
    """Ordered record of primitive applications.

    A tape can be replayed backward exactly once; record a fresh tape for
    every optimization step.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: list[Var] = []
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        if self._consumed:
            raise TapeError("tape already replayed; record a new one")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite leaf {name or ''}".strip())
        v = Var(value, self, len(self._nodes), name)
        self._nodes.append(_Node((), None, "leaf"))
        self._leaves.append(v)
        return v

    def record(self, value: np.ndarray, inputs: Sequence, backward: Callable, op: str) -> Var:
        if self._consumed:
            raise TapeError("tape already replayed; record a new one")
        v = Var(value, self, len(self._nodes))
        self._nodes.append(_Node(tuple(inputs), backward, op))
        return v

    def backward(self, loss: Var) -> dict[Var, np.ndarray]:
        """Fill ``.grad`` on every leaf and return ``{leaf: grad}``.

        Leaves that do not influence ``loss`` receive exact zeros.
        """
        if self._consumed:
            raise TapeError("tape already replayed; record a new one")
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self._nodes[i]
            if g is None or node.backward is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if not isinstance(inp, Var) or gi is None:
                    continue
                if inp.tape is not self:
                    raise TapeError("node from a different tape")
                if inp.index >= i:
                    raise TapeError(f"cycle: node {i} ({node.op}) consumes node {inp.index}")
                gi = _unbroadcast(gi, inp.value.shape)
                grads[inp.index] = gi if grads[inp.index] is None else grads[inp.index] + gi
        out = {}
        for leaf in self._leaves:
            g = grads[leaf.index]
            leaf.grad = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64)
            out[leaf] = leaf.grad
        # saved intermediates live in the closures; drop them
        for node in self._nodes:
            node.backward = None
        self._consumed = True
        return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _emit(op: str, value, inputs: Sequence, backward: Callable):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite result in {op}")
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise TapeError(f"{op}: inputs recorded on different tapes")
            tape = x.tape
    if tape is None:
        return value
    return tape.record(value, inputs, backward, op)


def value_of(x) -> np.ndarray:
    """The numeric value of a node or array."""
    return _val(x)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    return _emit("add", _val(a) + _val(b), (a, b), lambda g: (g, g))


def sub(a, b):
    return _emit("sub", _val(a) - _val(b), (a, b), lambda g: (g, -g))


def neg(a):
    return _emit("neg", -_val(a), (a,), lambda g: (-g,))


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    av, bv = _val(a), _val(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv
    return _emit("div", out, (a, b), lambda g: (g / bv, -g * out / bv))


def div_floor(a, b, floor: float):
    """``a / max(b, floor)``; no gradient reaches ``b`` where it is floored."""
    av, bv = _val(a), _val(b)
    active = bv > floor
    den = np.where(active, bv, floor)
    out = av / den
    return _emit("div_floor", out, (a, b), lambda g: (g / den, np.where(active, -g * out / den, 0.0)))


def power(a, p: float):
    av = _val(a)
    out = av ** p
    return _emit("power", out, (a,), lambda g: (g * p * av ** (p - 1),))


def square(a):
    av = _val(a)
    return _emit("square", av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a):
    with np.errstate(invalid="ignore"):
        out = np.sqrt(_val(a))
    return _emit("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    out = np.exp(_val(a))
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a):
    av = _val(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _emit("log", out, (a,), lambda g: (g / av,))


def absolute(a):
    av = _val(a)
    return _emit("abs", np.abs(av), (a,), lambda g: (g * np.sign(av),))


def clamp(a, lo: float, hi: float):
    """Clip to ``[lo, hi]``; the gradient is exactly zero outside."""
    av = _val(a)
    inside = (av >= lo) & (av <= hi)
    return _emit("clamp", np.clip(av, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = _val(a)
    th = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + th)

    def back(g):
        dth = (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * dth),)

    return _emit("gelu", out, (a,), back)


# ----------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    av = _val(a)
    shape = av.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", av.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims: bool = False):
    av = _val(a)
    count = av.size if axis is None else int(np.prod([av.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -------------------------------------------------------------------- shaping

def reshape(a, shape):
    av = _val(a)
    return _emit("reshape", av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def concat(xs: Sequence, axis: int = 0):
    vals = [_val(x) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _emit("concat", np.concatenate(vals, axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


# ------------------------------------------------------------- layer kernels

def channel_mix(x, w, b=None):
    """Pointwise linear map over the channel axis: [B,I,N] x [I,O] (+ [O]) -> [B,O,N]."""
    xv, wv = _val(x), _val(w)
    out = np.einsum("bin,io->bon", xv, wv)
    if b is not None:
        out = out + _val(b)[None, :, None]

    def back(g):
        gx = np.einsum("bon,io->bin", g, wv)
        gw = np.einsum("bin,bon->io", xv, g)
        gb = g.sum(axis=(0, 2)) if b is not None else None
        return gx, gw, gb

    return _emit("channel_mix", out, (x, w, b), back)


def spectral_conv(x, w_re, w_im):
    """Truncated Fourier-mode convolution on the supplied grid.

    ``x`` is [B, I, N]; the complex weights ``w_re + i w_im`` are [I, O, m] and
    multiply the lowest ``m`` nonnegative frequencies. Higher modes are zeroed.
    """
    xv, wr, wi = _val(x), _val(w_re), _val(w_im)
    n = xv.shape[-1]
    m = wr.shape[-1]
    if m > n // 2 + 1:
        raise ValueError(f"{m} Fourier modes exceed the {n // 2 + 1} available on a grid of {n} points")
    w = wr + 1j * wi
    xf = _fft.fft(xv)[..., :m]
    yf = np.einsum("bik,iok->bok", xf, w)
    out = _fft.irfft(yf, n)

    def back(g):
        c = _fft.hermitian_weights(m, n)
        gy = _fft.fft(g)[..., :m] * (c / n)
        gxf = np.einsum("bok,iok->bik", gy, np.conj(w))
        gw = np.einsum("bok,bik->iok", gy, np.conj(xf))
        pad = np.zeros(xv.shape, dtype=complex)
        pad[..., :m] = gxf
        gx = n * _fft.ifft(pad).real
        return gx, gw.real, gw.imag

    return _emit("spectral_conv", out, (x, w_re, w_im), back)


def l2norm(a, axis=None):
    """Euclidean norm; the gradient at an exactly zero vector is taken as 0."""
    av = _val(a)
    out = np.sqrt(np.sum(av * av, axis=axis))

    def back(g):
        o = out if axis is None else np.expand_dims(out, axis)
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(o > 0, o, 1.0)
        return (np.where(o > 0, gg * av / safe, 0.0),)

    return _emit("l2norm", out, (a,), back)

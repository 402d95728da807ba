"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active (``with Tape() as tape:``)
are appended to it whenever at least one input requires a gradient. Calling
:meth:`Tape.backward` walks the recorded nodes in reverse append order and
accumulates gradients additively, so a tensor used twice receives the sum of
both contributions. Outside of a tape every operation is a plain forward
computation.

Broadcasting is limited on purpose: operands must have equal shapes, one of them
must be a scalar, or the shape of one must be a trailing suffix of the other
(``[B, T, H] + [H]``).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity was produced or supplied."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape (non-scalar root, reuse, missing tape)."""


_ACTIVE_TAPES: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Node:
    __slots__ = ("op", "inputs", "outputs", "backward_fn")

    def __init__(self, op, inputs, outputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op, inputs, outputs, backward_fn) -> None:
        self.nodes.append(Node(op, tuple(inputs), tuple(outputs), backward_fn))

    def backward(self, loss: "Tensor") -> None:
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {loss.shape}")
        if self.consumed:
            raise TapeError("backward already ran on this tape; start a new Tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            out_grads = [grads.get(id(o)) for o in node.outputs]
            if all(g is None for g in out_grads):
                continue
            out_grads = [
                np.zeros_like(o.data) if g is None else g
                for o, g in zip(node.outputs, out_grads)
            ]
            in_grads = node.backward_fn(out_grads if len(out_grads) > 1 else out_grads[0])
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient produced by backward of '{node.op}'")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    touched[key] = inp
        for key, t in touched.items():
            g = grads[key].reshape(t.shape)
            t.grad = g if t.grad is None else t.grad + g
        # drop the graph so tape <-> tensor cycles do not pin large buffers
        self.nodes.clear()


def backward(loss: "Tensor") -> None:
    """Populate ``.grad`` of every requires_grad tensor reachable from ``loss``."""
    if loss._tape is None:
        raise TapeError("loss is not attached to a tape; run the forward pass inside `with Tape():`")
    loss._tape.backward(loss)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if check and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} contains NaN or Inf".replace("  ", " "))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; divide by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=-1, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def tanh(self):
        return tanh(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, check=False)
    if track:
        out._tape = tape
        tape.record(op, inputs, (out,), backward_fn)
    return out


def _emit_many(op: str, datas, inputs: Sequence[Tensor], backward_fn: Callable) -> tuple:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor(d, requires_grad=track, check=False) for d in datas)
    if track:
        for o in outs:
            o._tape = tape
        tape.record(op, inputs, outs, backward_fn)
    return outs


# ---------------------------------------------------------------------------
# broadcasting


def _is_scalar(shape) -> bool:
    return len(shape) == 0 or (len(shape) == 1 and shape[0] == 1)


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if _is_scalar(b):
        return a
    if _is_scalar(a):
        return b
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise DimensionError(f"cannot broadcast shapes {a} and {b} (only scalar and trailing-suffix broadcasting)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if _is_scalar(shape):
        return np.asarray(g.sum()).reshape(shape)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _emit("mul", ad * bd, (a, b), bw)


# ---------------------------------------------------------------------------
# unary elementwise


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: g * (1.0 - y * y))


def sin(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("sin", np.sin(xd), (x,), lambda g: g * np.cos(xd))


def cos(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("cos", np.cos(xd), (x,), lambda g: -g * np.sin(xd))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: g * y)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("square", xd * xd, (x,), lambda g: 2.0 * g * xd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: g * mask)


def maximum(x: Tensor, c: float) -> Tensor:
    """Elementwise ``max(x, c)`` against a scalar; ties send the gradient to ``x``."""
    mask = x.data >= c
    return _emit("maximum", np.where(mask, x.data, c), (x,), lambda g: g * mask)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return _emit("gelu", xd * cdf, (x,), lambda g: g * (cdf + xd * pdf))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., M, K] @ b[K, N]`` or batched ``a[..., M, K] @ b[..., K, N]``."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _emit("matmul", ad @ bd, (a, b), bw)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: g.reshape(old))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,), lambda g: np.transpose(g, inv))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit("concat", np.concatenate([x.data for x in xs], axis=axis), xs, bw)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {x.ndim}")
    ax = axis % x.ndim
    if x.shape[ax] == 0:
        raise DomainError(f"cannot reduce over empty axis {axis}")
    return ax


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        if x.size == 0:
            raise DomainError("cannot reduce an empty tensor")
        shape = x.shape
        return _emit("sum", np.asarray(x.data.sum()), (x,), lambda g: np.broadcast_to(g, shape).copy())
    ax = _norm_axis(x, axis)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, shape).copy()

    return _emit("sum", x.data.sum(axis=ax, keepdims=keepdims), (x,), bw)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else x.shape[_norm_axis(x, axis)]
    if n == 0:
        raise DomainError("cannot take the mean of an empty tensor")
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


def reduce_max(x: Tensor, axis: int = -1, keepdims=False) -> Tensor:
    """Max along ``axis``; the backward pass routes each slice's gradient to its
    first (lowest-index) maximal element."""
    ax = _norm_axis(x, axis)
    moved = np.moveaxis(x.data, ax, -1)
    lead = moved.shape[:-1]
    m = moved.shape[-1]
    flat = np.ascontiguousarray(moved.reshape(-1, m))
    vals, idx = kernels.rowmax(flat)
    out = vals.reshape(lead)
    if keepdims:
        out = np.expand_dims(out, ax)

    def bw(g):
        gm = kernels.rowmax_scatter(np.ascontiguousarray(g.reshape(-1)), idx, m)
        return np.moveaxis(gm.reshape(lead + (m,)), -1, ax)

    return _emit("max", out, (x,), bw)


# ---------------------------------------------------------------------------
# fused neural-network ops


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(x, axis)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)
    return _emit("softmax", y, (x,), lambda g: y * (g - (g * y).sum(axis=ax, keepdims=True)))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [B, C], got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DomainError("labels must be integers")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise DomainError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    if n == 0:
        raise DomainError("empty batch")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))

    def bw(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1.0
        return p * (g / n)

    return _emit("softmax_cross_entropy", np.asarray(loss), (logits,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance) and apply ``gain``/``bias``."""
    h = x.shape[-1]
    if h < 2:
        raise DimensionError("layer_norm needs at least two features")
    if gain.shape != (h,) or bias.shape != (h,):
        raise DimensionError(f"gain/bias must have shape ({h},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = inv / h * (h * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", xhat * gd + bias.data, (x, gain, bias), bw)


def wave_modulate(h: Tensor, omega: Tensor, phi: Tensor, t) -> tuple:
    """Phase-modulate ``h[..., T, H]`` by ``cos``/``sin`` of ``omega * t + phi``.

    Returns the real and imaginary parts as two tensors of the same shape as
    ``h``. ``t`` is a plain array of sample times (not differentiated).
    """
    t = np.ascontiguousarray(t, dtype=np.float64)
    nt, nh = h.shape[-2], h.shape[-1]
    if t.shape != (nt,):
        raise DimensionError(f"time grid must have shape ({nt},), got {t.shape}")
    if omega.shape != (nh,) or phi.shape != (nh,):
        raise DimensionError(f"omega/phi must have shape ({nh},)")
    lead = h.shape[:-2]
    hd = np.ascontiguousarray(h.data.reshape(-1, nt, nh))
    pr, pi, c, s = kernels.wave_forward(hd, np.ascontiguousarray(omega.data), np.ascontiguousarray(phi.data), t)

    def bw(gs):
        g_r, g_i = gs
        dh, dw, dp = kernels.wave_backward(
            hd, c, s, t,
            np.ascontiguousarray(g_r.reshape(hd.shape)),
            np.ascontiguousarray(g_i.reshape(hd.shape)))
        return dh.reshape(h.shape), dw, dp

    return _emit_many("wave_modulate", (pr.reshape(h.shape), pi.reshape(h.shape)), (h, omega, phi), bw)


def check_finite(x: Tensor, stage: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"non-finite values after stage '{stage}'")
    return x

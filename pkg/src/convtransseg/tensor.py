"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations executed while a
:class:`Tape` is active are recorded as nodes (op id, input refs, output ref,
backward closure); :func:`backward` replays the tape in reverse and
accumulates gradients into the ``grad`` field of every leaf that requires
them. With no active tape, operations are plain numpy calls, which is what
evaluation-mode forward passes use.

Conventions fixed here:
  * conv2d is cross-correlation (no kernel flip)
  * max_pool2 breaks ties toward the first element in row-major window order
  * softmax is shift-stabilised over the last dimension
  * dropout is inverted dropout (survivors scaled by 1/(1-p))
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import backend
from .errors import ConfigurationError, UsageError
from .rng import RngState

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "relu",
    "softmax_lastdim",
    "log_softmax_lastdim",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "linear",
    "conv2d",
    "max_pool2",
    "batch_norm2d",
    "layer_norm",
    "dropout",
    "set_nan_checks",
]

_ACTIVE_TAPE: Optional["Tape"] = None
_NAN_CHECKS = False


def set_nan_checks(enabled: bool) -> None:
    """Verify finiteness of every op output (slow; used by tests)."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


class Tensor:
    """n-dimensional value, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def cast(self, dtype) -> "Tensor":
        """New leaf tensor with converted dtype (detaches from any graph)."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs, output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops; inputs of every node precede it."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None


def _record(op: str, inputs, out: Tensor, backward_fn: Callable) -> Tensor:
    if _NAN_CHECKS and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape.nodes.append(TapeNode(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf on the tape.

    Calling twice without clearing grads doubles them (accumulation
    semantics). Gradients of interior nodes live only for the duration of
    the walk.
    """
    tape = tape if tape is not None else _ACTIVE_TAPE
    if tape is None or not tape.nodes:
        raise UsageError("backward needs a non-empty tape")
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")

    produced = {id(n.output) for n in tape.nodes}
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def send(t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        if id(t) in produced:
            f = flows.get(id(t))
            flows[id(t)] = g if f is None else f + g
        elif t.grad is None:
            t.grad = np.array(g, copy=True)
        else:
            t.grad = t.grad + g

    for node in reversed(tape.nodes):
        g = flows.pop(id(node.output), None)
        if g is None:
            continue
        grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, grads):
            if gi is not None:
                send(t, gi)


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(op: str, a, b, fwd, bwd_a, bwd_b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        out = Tensor(fwd(a.data, b.data), requires_grad=a.requires_grad or b.requires_grad)
        needs = (a.requires_grad, b.requires_grad)

        def backward_fn(g):
            ga = _unbroadcast(bwd_a(g, a.data, b.data), a.shape) if needs[0] else None
            gb = _unbroadcast(bwd_b(g, a.data, b.data), b.shape) if needs[1] else None
            return ga, gb

        return _record(op, (a, b), out, backward_fn)
    if isinstance(a, Tensor):
        bv = b
        out = Tensor(fwd(a.data, bv), requires_grad=a.requires_grad)
        return _record(op, (a,), out, lambda g: (_unbroadcast(bwd_a(g, a.data, bv), a.shape),))
    av = a
    out = Tensor(fwd(av, b.data), requires_grad=b.requires_grad)
    return _record(op, (b,), out, lambda g: (_unbroadcast(bwd_b(g, av, b.data), b.shape),))


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=a.requires_grad)
    return _record("neg", (a,), out, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), requires_grad=a.requires_grad)
    return _record("exp", (a,), out, lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)
    return _record("log", (a,), out, lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), requires_grad=a.requires_grad)
    return _record("relu", (a,), out, lambda g: (g * (a.data > 0),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)
    needs = (a.requires_grad, b.requires_grad)

    def backward_fn(g):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if needs[1]:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record("matmul", (a, b), out, backward_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape),)

    return _record("sum", (a,), out, backward_fn)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis), 1.0 / float(n))


def softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def backward_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax_lastdim", (a,), out, backward_fn)


def log_softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(ls, requires_grad=a.requires_grad)

    def backward_fn(g):
        return (g - np.exp(ls) * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax_lastdim", (a,), out, backward_fn)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ConfigurationError(f"reshape {a.shape} -> {shape}: element counts differ")
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), requires_grad=a.requires_grad)
    return _record("transpose", (a,), out, lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------------------
# neural-network ops


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last dimension, batched over all leading ones."""
    d_in, d_out = weight.shape
    if x.shape[-1] != d_in:
        raise ConfigurationError(
            f"linear: input last extent {x.shape[-1]} != weight d_in {d_in} (x {x.shape}, weight {weight.shape})"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    out = Tensor((x2 @ weight.data + bias.data).reshape(*lead, d_out), requires_grad=x.requires_grad or weight.requires_grad or bias.requires_grad)
    needs = (x.requires_grad, weight.requires_grad, bias.requires_grad)

    def backward_fn(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data.T).reshape(x.shape) if needs[0] else None
        gw = x2.T @ g2 if needs[1] else None
        gb = g2.sum(axis=0) if needs[2] else None
        return gx, gw, gb

    return _record("linear", (x, weight, bias), out, backward_fn)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Cross-correlation with a square odd kernel, stride 1."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_in_w, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"conv2d kernel must be square and odd, got {k}x{k2}")
    if c_in != c_in_w:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has C_in={c_in} (shape {x.shape}) but weight expects {c_in_w} (shape {weight.shape})"
        )
    p = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    hp, wp = h + 2 * p, w + 2 * p
    oh, ow = hp - k + 1, wp - k + 1
    cols = backend.im2col(xp, k)  # (N, C_in*k*k, OH*OW)
    wm = weight.data.reshape(c_out, c_in * k * k)
    y = np.matmul(wm, cols) + bias.data[:, None]
    out = Tensor(
        y.reshape(n, c_out, oh, ow),
        requires_grad=x.requires_grad or weight.requires_grad or bias.requires_grad,
    )
    needs = (x.requires_grad, weight.requires_grad, bias.requires_grad)

    def backward_fn(g):
        gm = g.reshape(n, c_out, oh * ow)
        gx = gw = gb = None
        if needs[2]:
            gb = gm.sum(axis=(0, 2))
        if needs[1]:
            gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if needs[0]:
            dcols = np.matmul(wm.T, gm)
            dxp = backend.col2im(dcols, n, c_in, hp, wp, k)
            gx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return gx, gw, gb

    return _record("conv2d", (x, weight, bias), out, backward_fn)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first max in row-major window order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"max_pool2 needs even spatial extents, got {h}x{w}")
    oh, ow = h // 2, w // 2
    windows = x.data.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    idx = windows.argmax(axis=-1)
    out = Tensor(
        np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0],
        requires_grad=x.requires_grad,
    )

    def backward_fn(g):
        gw = np.zeros((n, c, oh, ow, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _record("max_pool2", (x,), out, backward_fn)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    Training mode uses batch statistics and updates the running buffers in
    place; eval mode normalises with the running statistics.
    """
    n, c, h, w = x.shape
    m = n * h * w
    if training and m < 2:
        raise ConfigurationError(f"batch_norm2d training mode needs N*H*W >= 2, got {m}")
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mean
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(y, requires_grad=x.requires_grad or gamma.requires_grad or beta.requires_grad)
    needs = (x.requires_grad, gamma.requires_grad, beta.requires_grad)

    def backward_fn(g):
        gx = ggamma = gbeta = None
        if needs[2]:
            gbeta = g.sum(axis=(0, 2, 3))
        if needs[1]:
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
        if needs[0]:
            scale = (gamma.data * inv)[None, :, None, None]
            if training:
                gm = g.mean(axis=(0, 2, 3))[None, :, None, None]
                gxh = (g * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
                gx = scale * (g - gm - xhat * gxh)
            else:
                gx = scale * g
        return gx, ggamma, gbeta

    return _record("batch_norm2d", (x, gamma, beta), out, backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last dimension only, then apply the affine pair."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigurationError(f"layer_norm affine shape {gamma.shape} does not match last extent {d}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    y = gamma.data * xhat + beta.data
    out = Tensor(y, requires_grad=x.requires_grad or gamma.requires_grad or beta.requires_grad)
    needs = (x.requires_grad, gamma.requires_grad, beta.requires_grad)
    reduce_axes = tuple(range(x.ndim - 1))

    def backward_fn(g):
        gx = ggamma = gbeta = None
        if needs[2]:
            gbeta = g.sum(axis=reduce_axes)
        if needs[1]:
            ggamma = (g * xhat).sum(axis=reduce_axes)
        if needs[0]:
            gg = g * gamma.data
            gm = gg.mean(axis=-1, keepdims=True)
            gxh = (gg * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (gg - gm - xhat * gxh)
        return gx, ggamma, gbeta

    return _record("layer_norm", (x, gamma, beta), out, backward_fn)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[RngState]) -> Tensor:
    """Inverted dropout; identity in eval mode or at p = 0."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an RngState")
    scale = 1.0 / (1.0 - p)
    m = rng.keep_mask(p, x.shape).astype(x.dtype) * np.asarray(scale, dtype=x.dtype)
    out = Tensor(x.data * m, requires_grad=x.requires_grad)
    return _record("dropout", (x,), out, lambda g: (g * m,))

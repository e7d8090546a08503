"""Dense tensor type with reverse-mode differentiation.

Tensors wrap a numpy array (float32 or float64) and are immutable by
convention: every operation returns a fresh Tensor. While a GradientTape is
active, operations append themselves to the tape in execution order, which is
replayed backwards to produce parameter gradients.

Numerical policy: every primitive validates its output for NaN/Inf when debug
checks are enabled (the default) and raises NumericError instead of letting a
non-finite value propagate.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

float32 = np.float32
float64 = np.float64

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(ValueError):
    """Invalid configuration (bad group count, unknown mode, ...)."""


class NumericError(ArithmeticError):
    """A primitive produced NaN/Inf, or numeric preconditions failed."""


_debug_checks = True


def set_debug_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf validation; returns the previous setting."""
    global _debug_checks
    previous = _debug_checks
    _debug_checks = bool(enabled)
    return previous


def debug_checks_enabled() -> bool:
    return _debug_checks


def _validate_finite(arr: np.ndarray, op: str) -> None:
    if not _debug_checks:
        return
    # Single-pass screen: a float64 sum is NaN/Inf iff the array holds a
    # NaN/Inf (finite desk-scale sums cannot overflow float64).
    if math.isfinite(float(arr.sum(dtype=np.float64))):
        return
    bad = np.size(arr) - int(np.isfinite(arr).sum())
    raise NumericError(f"{op}: produced {bad} non-finite value(s) in output of shape {arr.shape}")


# ---------------------------------------------------------------------------
# MAC instrumentation (used by the profiler's executed-op cross-check)

class MacCounter:
    """Counts multiply-accumulates actually executed by conv/matmul kernels."""

    def __init__(self) -> None:
        self.macs = 0


_mac_counter: MacCounter | None = None


@contextmanager
def count_macs():
    global _mac_counter
    previous = _mac_counter
    counter = MacCounter()
    _mac_counter = counter
    try:
        yield counter
    finally:
        _mac_counter = previous


def _add_macs(n: int) -> None:
    if _mac_counter is not None:
        _mac_counter.macs += int(n)


# ---------------------------------------------------------------------------
# Tensor and gradient tape

class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.dtype not in _FLOAT_DTYPES:
            raise ConfigError(f"tensor dtype must be float32/float64, got {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad})"

    # arithmetic sugar -------------------------------------------------
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
            raise ConfigError("tensor/tensor division is not a primitive; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _slice(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Records primitive applications in execution order.

    The record is topologically ordered by construction (an op can only be
    recorded after its inputs exist), so the adjoint pass is a single reverse
    sweep. One tape may be active at a time.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._active = False

    def __enter__(self) -> "GradientTape":
        global _active_tape
        if _active_tape is not None:
            raise ConfigError("a GradientTape is already active")
        _active_tape = self
        self._active = True
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_tape
        _active_tape = None
        self._active = False

    def __len__(self) -> int:
        return len(self._nodes)

    def gradients(self, loss: Tensor, params: dict[str, Tensor]) -> dict[str, Tensor]:
        """Adjoint pass from a scalar loss to every given parameter.

        Parameters the loss does not depend on receive zero gradients.
        """
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            gout = grads.pop(id(node.out), None)
            if gout is None:
                continue
            gins = node.backward(gout)
            for tensor, gin in zip(node.inputs, gins):
                if gin is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
        out: dict[str, Tensor] = {}
        for name, p in params.items():
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            out[name] = Tensor(g)
        return out


_active_tape: GradientTape | None = None


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    _validate_finite(data, op)
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad and _active_tape is not None:
        _active_tape._nodes.append(_Node(out, inputs, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ConfigError(f"{op}: mixed dtypes {a.dtype.name} vs {b.dtype.name}")


# ---------------------------------------------------------------------------
# constructors

def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_same_dtype(a, b, "add")
    data = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_same_dtype(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_same_dtype(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _result(data, "mul", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces via the finite check
        data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _result(data, "exp", (a,), backward)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result(data, "log", (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _result(data, "relu", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Evaluate on the stable side of each branch so extreme logits saturate
    # to 0/1 instead of overflowing.
    pos = x >= 0
    z = np.where(pos, -x, x)
    ez = np.exp(z)
    data = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _result(data, "sigmoid", (a,), backward)


# ---------------------------------------------------------------------------
# shape primitives

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _result(data, "reshape", (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _result(data, "transpose", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t, "concat")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i, t in enumerate(tensors):
            if not t.requires_grad:
                pieces.append(None)
                continue
            index: list = [slice(None)] * g.ndim
            index[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return _result(data, "concat", tensors, backward)


def _slice(a: Tensor, index) -> Tensor:
    data = a.data[index]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.dtype)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _result(data, "slice", (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).astype(a.dtype, copy=False).copy(),)

    return _result(np.asarray(data), "sum", (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            g2 = g
        else:
            g2 = g if keepdims else np.expand_dims(g, axis)
        return ((np.broadcast_to(g2, a.shape) / n).astype(a.dtype, copy=False),)

    return _result(np.asarray(data), "mean", (a,), backward)


# ---------------------------------------------------------------------------
# linear-algebra primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner axes disagree: a axis -1 is {a.shape[-1]}, b axis -2 is {b.shape[-2]} "
            f"(shapes {a.shape} x {b.shape})")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"matmul leading axes not broadcastable: {a.shape} x {b.shape}") from err
    _add_macs(data.size * a.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _result(data, "matmul", (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis. weight: [out, in], bias: [out]."""
    _check_same_dtype(x, weight, "linear")
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input last axis {x.shape[-1]} != weight in-axis {weight.shape[1]}")
    data = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        data = data + bias.data
    _add_macs((x.size // x.shape[-1]) * weight.shape[0] * weight.shape[1])

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        x2 = x.data.reshape(-1, weight.shape[1])
        gx = (g @ weight.data) if x.requires_grad else None
        gw = (g2.T @ x2) if weight.requires_grad else None
        if bias is None:
            return (gx, gw)
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return (gx, gw, gb)

    return _result(data, "linear", inputs, backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _result(data, "softmax", (a,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over integer class labels."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, classes] logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ConfigError(f"labels out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logprob = z - np.log(denom)
    data = np.asarray(-logprob[np.arange(n), labels].mean())

    def backward(g):
        grad = ez / denom
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return _result(data, "cross_entropy", (logits,), backward)


# ---------------------------------------------------------------------------
# convolution primitives (tap decomposition: one matmul / broadcast
# multiply-accumulate per kernel element, over strided views of the padded
# input; the adjoints mirror the same taps)

def _conv2d_pointwise(x: np.ndarray, w2: np.ndarray, stride: int):
    """1x1 kernel: a channel map, batched GEMM over frames without copies."""
    n, cin, h, wd = x.shape
    xs = x if stride == 1 else np.ascontiguousarray(x[:, :, ::stride, ::stride])
    ho, wo = xs.shape[2], xs.shape[3]
    x3 = xs.reshape(n, cin, ho * wo)
    out = np.matmul(w2, x3).reshape(n, w2.shape[0], ho, wo)

    def backward(g, need_x: bool, need_w: bool):
        g3 = g.reshape(n, w2.shape[0], ho * wo)
        gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])) if need_w else None
        gx = None
        if need_x:
            gxs = np.matmul(w2.T, g3).reshape(n, cin, ho, wo)
            if stride == 1:
                gx = gxs
            else:
                gx = np.zeros_like(x)
                gx[:, :, ::stride, ::stride] = gxs
        return gx, (gw.reshape(w2.shape + (1, 1)) if gw is not None else None)

    return out, backward


def _conv2d_im2col(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    """General kernel: one gather into column form, one fat GEMM."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, cin * kh * kw)
    w2 = w.reshape(cout, -1)
    out = np.ascontiguousarray(
        (cols @ w2.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g, need_x: bool, need_w: bool):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape) if need_w else None
        gx = None
        if need_x:
            if stride == 1 and kh == kw and kh - 1 - padding >= 0:
                # input gradient = correlation of g with the transposed,
                # spatially flipped kernel
                w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
                gx, _ = _conv2d_im2col(g, w_t, 1, kh - 1 - padding)
            else:
                dcols = (g2 @ w2).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
                gx_p = np.zeros_like(xp)
                for ky in range(kh):
                    for kx in range(kw):
                        gx_p[:, :, ky:ky + stride * ho:stride,
                             kx:kx + stride * wo:stride] += dcols[..., ky, kx]
                gx = gx_p[:, :, padding:padding + h, padding:padding + wd] \
                    if padding else gx_p
        return gx, gw

    return out, backward


def _conv2d_depthwise(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    """groups == channels: per-channel taps, broadcast multiply-accumulate."""
    n, c, h, wd = x.shape
    _, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            v = xp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
            out += w[None, :, 0, ky, kx, None, None] * v
    def backward(g, need_x: bool, need_w: bool):
        gw = np.zeros_like(w) if need_w else None
        gx_p = np.zeros_like(xp) if need_x else None
        for ky in range(kh):
            for kx in range(kw):
                sl = (slice(None), slice(None),
                      slice(ky, ky + stride * ho, stride), slice(kx, kx + stride * wo, stride))
                if gw is not None:
                    gw[:, 0, ky, kx] = (g * xp[sl]).sum(axis=(0, 2, 3))
                if gx_p is not None:
                    gx_p[sl] += w[None, :, 0, ky, kx, None, None] * g
        gx = None
        if gx_p is not None:
            gx = gx_p[:, :, padding:padding + h, padding:padding + wd] if padding else gx_p
        return gx, gw

    return out, backward


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation over [N, C, H, W] with zero padding.

    weight: [C_out, C_in/groups, kh, kw]. groups == C_in gives depthwise
    behavior (one kernel per channel).
    """
    _check_same_dtype(x, weight, "conv2d")
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N, C, H, W], got {x.shape}")
    n, cin, h, wd = x.shape
    if weight.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-D, got {weight.shape}")
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups != 0:
        raise ConfigError(f"conv2d: {cin} input channels not divisible by groups={groups}")
    if cout % groups != 0:
        raise ConfigError(f"conv2d: {cout} output channels not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"conv2d: kernel expects {cin_g} channels/group, input provides {cin // groups}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} with padding {padding} does not fit input {h}x{wd}")

    if groups == cin and cout == cin:
        data, bw = _conv2d_depthwise(x.data, weight.data, stride, padding)
    elif groups == 1 and kh == 1 and kw == 1 and padding == 0:
        data, bw = _conv2d_pointwise(x.data, weight.data[:, :, 0, 0], stride)
    elif groups == 1:
        data, bw = _conv2d_im2col(x.data, weight.data, stride, padding)
    else:
        cg_in, cg_out = cin // groups, cout // groups
        parts = []
        backs = []
        for g in range(groups):
            part, back = _conv2d_im2col(
                np.ascontiguousarray(x.data[:, g * cg_in:(g + 1) * cg_in]),
                weight.data[g * cg_out:(g + 1) * cg_out], stride, padding)
            parts.append(part)
            backs.append(back)
        data = np.concatenate(parts, axis=1)

        def bw(g, need_x, need_w):
            gx = np.zeros_like(x.data) if need_x else None
            gw = np.zeros_like(weight.data) if need_w else None
            for gi, back in enumerate(backs):
                gxg, gwg = back(g[:, gi * cg_out:(gi + 1) * cg_out], need_x, need_w)
                if gx is not None:
                    gx[:, gi * cg_in:(gi + 1) * cg_in] = gxg
                if gw is not None:
                    gw[gi * cg_out:(gi + 1) * cg_out] = gwg
            return gx, gw

    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        data = data + bias.data[None, :, None, None]
    _add_macs(n * ho * wo * cout * cin_g * kh * kw)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx, gw = bw(g, x.requires_grad, weight.requires_grad)
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return (gx, gw, gb)

    return _result(data, "conv2d", inputs, backward)


def conv1d_temporal(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise temporal convolution over [N, C, T]; zero padding keeps T.

    weight: [C, 1, k] with odd k, one kernel per channel.
    """
    _check_same_dtype(x, weight, "conv1d_temporal")
    if x.ndim != 3:
        raise ShapeError(f"conv1d_temporal expects [N, C, T], got {x.shape}")
    n, c, t = x.shape
    if t < 1:
        raise ShapeError("conv1d_temporal: empty temporal axis")
    if weight.ndim != 3 or weight.shape[0] != c or weight.shape[1] != 1:
        raise ShapeError(f"conv1d_temporal: kernel shape {weight.shape} != ({c}, 1, k)")
    k = weight.shape[2]
    if k % 2 != 1:
        raise ConfigError(f"conv1d_temporal: kernel size {k} must be odd")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    data = np.zeros_like(x.data)
    for kt in range(k):
        data += weight.data[None, :, 0, kt, None] * xp[:, :, kt:kt + t]
    if bias is not None:
        if bias.shape != (c,):
            raise ShapeError(f"conv1d_temporal: bias shape {bias.shape} != ({c},)")
        data = data + bias.data[None, :, None]
    _add_macs(n * c * t * k)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx_p = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        for kt in range(k):
            if gw is not None:
                gw[:, 0, kt] = (g * xp[:, :, kt:kt + t]).sum(axis=(0, 2))
            if gx_p is not None:
                gx_p[:, :, kt:kt + t] += weight.data[None, :, 0, kt, None] * g
        gx = gx_p[:, :, pad:pad + t] if (gx_p is not None and pad) else gx_p
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2)) if bias.requires_grad else None
        return (gx, gw, gb)

    return _result(data, "conv1d_temporal", inputs, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean over [N, C, H, W] -> [N, C, 1, 1]."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N, C, H, W], got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    data = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / hw, x.shape).astype(x.dtype, copy=False),)

    return _result(data, "global_avg_pool", (x,), backward)


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool2d: window {kernel} does not fit input {h}x{w}")
    fill = np.finfo(x.dtype).min
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=fill)
    windows = np.empty((kernel * kernel, n, c, ho, wo), dtype=x.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            windows[ky * kernel + kx] = xp[:, :, ky:ky + stride * ho:stride,
                                           kx:kx + stride * wo:stride]
    arg = windows.argmax(axis=0)
    data = np.take_along_axis(windows, arg[None], axis=0)[0]

    def backward(g):
        gx_p = np.zeros_like(xp)
        for tap in range(kernel * kernel):
            ky, kx = divmod(tap, kernel)
            sl = (slice(None), slice(None),
                  slice(ky, ky + stride * ho, stride), slice(kx, kx + stride * wo, stride))
            gx_p[sl] += np.where(arg == tap, g, 0)
        if padding:
            return (gx_p[:, :, padding:padding + h, padding:padding + w],)
        return (gx_p,)

    return _result(data, "maxpool2d", (x,), backward)


class BatchNormState:
    """Running statistics owned by a batch-norm layer (not trainable)."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, *,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of [N, C, H, W] with affine transform.

    Training mode normalizes with batch statistics (biased variance) and
    updates the running statistics in place with the given momentum.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects [N, C, H, W], got {x.shape}")
    if eps <= 0:
        raise ConfigError("batch_norm: eps must be positive")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    if training:
        count = n * h * w
        if count <= 1:
            raise ShapeError("batch_norm: a single sample per channel has degenerate statistics")
        mu = x.data.mean(axis=(0, 2, 3))
        var = np.maximum(np.mean(np.square(x.data), axis=(0, 2, 3)) - mu * mu, 0.0)
        state.mean += momentum * (mu - state.mean)
        state.var += momentum * (var - state.var)
    else:
        mu = state.mean
        var = state.var
    inv = 1.0 / np.sqrt(var + eps)
    scale = (gamma.data * inv).astype(x.dtype)
    shift = (beta.data - mu * scale).astype(x.dtype)
    data = x.data * scale[None, :, None, None]
    data += shift[None, :, None, None]

    def backward(g):
        # xhat is recomputed here instead of stored by the forward pass
        xhat = (x.data - mu[None, :, None, None].astype(x.dtype))
        xhat *= inv[None, :, None, None].astype(x.dtype)
        gsum = g.sum(axis=(0, 2, 3))
        gxhat = np.einsum("nchw,nchw->c", g, xhat, optimize=False)
        gg = gxhat if gamma.requires_grad else None
        gb = gsum if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            if training:
                m = n * h * w
                gx = g - (gsum / m)[None, :, None, None]
                xhat *= (gxhat / m)[None, :, None, None]
                gx -= xhat
                gx *= scale[None, :, None, None]
            else:
                gx = g * scale[None, :, None, None]
        return (gx, gg, gb)

    return _result(data, "batch_norm", (x, gamma, beta), backward)

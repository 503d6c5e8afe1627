"""Dense float tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy array (float32 for all production
paths; float64 is accepted so gradient-check utilities can run a 64-bit
shadow of the same graph). Every operation records its parents and a
vector-Jacobian-product closure on the output, so ``backward()`` on a
scalar loss fills ``.grad`` on all tracked leaves by walking the recorded
graph once in reverse topological order.

Intermediate gradients live only for the duration of a ``backward()``
call; leaf gradients persist and accumulate across calls until
``zero_grad()``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateStatisticsError,
    DimensionError,
)

_grad_enabled = True


class no_grad:
    """Context manager disabling graph recording (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # ------------------------------------------------------------------
    # basic introspection

    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # ------------------------------------------------------------------
    # autodiff machinery

    def backward(self) -> None:
        """Backpropagate from a scalar; accumulates into leaf ``.grad``."""
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise ContractError("backward on a tensor with no tracked inputs")
        order = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # operator sugar -----------------------------------------------------

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

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _toposort(root: Tensor):
    """Nodes reachable from ``root`` through tracked parents, root first."""
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    order.reverse()
    return order


def _make(data: np.ndarray, parents, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _coerce(value, like: np.ndarray) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _coerce(a, b.data if isinstance(b, Tensor) else np.float32(0))
    b = _coerce(b, a.data)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _coerce(a, b.data if isinstance(b, Tensor) else np.float32(0))
    b = _coerce(b, a.data)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _coerce(a, b.data if isinstance(b, Tensor) else np.float32(0))
    b = _coerce(b, a.data)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _coerce(a, b.data if isinstance(b, Tensor) else np.float32(0))
    b = _coerce(b, a.data)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    p = float(exponent)
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), vjp)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp)


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out = np.maximum(a.data, np.asarray(floor, dtype=a.data.dtype))

    def vjp(g):
        return (g * (a.data > floor),)

    return _make(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _make(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), vjp)


# ----------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axis = _norm_axis(axis, a.data.ndim)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(np.asarray(out), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axis = _norm_axis(axis, a.data.ndim)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else int(
        np.prod([a.data.shape[i] for i in axis])
    )

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.data.shape),)

    return _make(np.asarray(out), (a,), vjp)


def channel_mean(a: Tensor) -> Tensor:
    """Mean over the channel axis of an NCHW tensor, keepdims."""
    return tmean(a, axis=1, keepdims=True)


def channel_max(a: Tensor) -> Tensor:
    """Max over the channel axis of an NCHW tensor, keepdims.

    Gradient routes to the first occurrence of the maximum along the
    channel axis.
    """
    idx = a.data.argmax(axis=1, keepdims=True)
    out = np.take_along_axis(a.data, idx, axis=1)

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return _make(out, (a,), vjp)


def take_channel(a: Tensor, index: np.ndarray) -> Tensor:
    """Select per-pixel channels: out[n,i,j] = a[n, index[n,i,j], i, j]."""
    idx = index[:, None]
    out = np.take_along_axis(a.data, idx, axis=1)[:, 0]

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, idx, g[:, None], axis=1)
        return (gx,)

    return _make(out, (a,), vjp)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, vjp)


# ----------------------------------------------------------------------
# activations over channels


def softmax_channel(z: Tensor) -> Tensor:
    """Per-pixel softmax across the channel axis, max-subtracted."""
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (z,), vjp)


# ----------------------------------------------------------------------
# spatial operations


def _check_4d(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise DimensionError(f"{name} expects an NCHW tensor, got rank {x.data.ndim}")


def _im2col(arr: np.ndarray, kh, kw, stride, padding) -> np.ndarray:
    """Patch matrix (N*H'*W', Cin*kh*kw) for gemm-based correlation."""
    n, cin, h, w = arr.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xp = arr if padding == 0 else np.pad(
        arr, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, cin * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) with broadcast bias."""
    _check_4d(x, "conv2d input")
    _check_4d(weight, "conv2d weight")
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 1 has {cin}, weight axis 1 has {cin_w}"
        )
    if kh < 1 or kw < 1 or stride < 1 or padding < 0:
        raise ConfigurationError(
            f"conv2d needs kh,kw>=1, stride>=1, padding>=0; got k=({kh},{kw}), "
            f"stride={stride}, padding={padding}"
        )
    if (h + 2 * padding - kh) % stride or (w + 2 * padding - kw) % stride:
        raise ConfigurationError(
            f"conv2d output extent is not integral for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"conv2d output extent {ho}x{wo} is not positive")

    cols = _im2col(x.data, kh, kw, stride, padding)
    w_mat = weight.data.reshape(cout, cin * kh * kw)
    out_mat = cols @ w_mat.T
    if bias is not None:
        out_mat += bias.data
    out = np.ascontiguousarray(
        out_mat.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def vjp(g):
        go = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        grad_w = grad_x = grad_b = None
        if weight.requires_grad:
            grad_w = (go.T @ cols).reshape(weight.data.shape)
        if bias is not None and bias.requires_grad:
            grad_b = go.sum(axis=0)
        if x.requires_grad:
            if stride == 1 and padding <= kh - 1 and padding <= kw - 1:
                # full correlation of the padded upstream gradient with the
                # channel-transposed, spatially flipped kernel
                wt = np.ascontiguousarray(
                    weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                ).reshape(cin, cout * kh * kw)
                gcols = _im2col(g, kh, kw, 1, kh - 1 - padding) \
                    if kh == kw else None
                if gcols is None:
                    gcols = _im2col(
                        np.pad(g, ((0, 0), (0, 0),
                                   (kh - 1 - padding, kh - 1 - padding),
                                   (kw - 1 - padding, kw - 1 - padding))),
                        kh, kw, 1, 0)
                grad_x = np.ascontiguousarray(
                    (gcols @ wt.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
            else:
                gcols = (go @ w_mat).reshape(n, ho, wo, cin, kh, kw)
                gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
                hp, wp = h + 2 * padding, w + 2 * padding
                gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
                for a in range(kh):
                    for b in range(kw):
                        gxp[:, :, a:a + stride * (ho - 1) + 1:stride,
                            b:b + stride * (wo - 1) + 1:stride] += gcols[..., a, b]
                grad_x = gxp if padding == 0 else gxp[
                    :, :, padding:padding + h, padding:padding + w]
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, grad_b

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, vjp)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """k x k max pooling; gradient routes to the first max per window."""
    _check_4d(x, "maxpool2d")
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise DimensionError(
            f"maxpool2d extents must divide by {k}: spatial axes are {h}x{w}"
        )
    ho, wo = h // k, w // k
    win = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        buf = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        gx = buf.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(n, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), vjp)


def avgpool2d(x: Tensor, k: int) -> Tensor:
    """k x k average pooling (used to bring features down to a coarser stage)."""
    _check_4d(x, "avgpool2d")
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise DimensionError(
            f"avgpool2d extents must divide by {k}: spatial axes are {h}x{w}"
        )
    ho, wo = h // k, w // k
    out = x.data.reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def vjp(g):
        gx = np.broadcast_to(
            g[:, :, :, None, :, None] / (k * k), (n, c, ho, k, wo, k))
        return (gx.reshape(n, c, h, w),)

    return _make(out, (x,), vjp)


_BLUR_KERNEL = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


def blurpool2d(x: Tensor) -> Tensor:
    """Anti-aliased stride-2 downsampling.

    Depthwise 3x3 binomial filter ([1,2,1] outer [1,2,1])/16 with reflect
    padding 1, then stride-2 subsampling. Preserves constant fields.
    """
    _check_4d(x, "blurpool2d")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(
            f"blurpool2d needs even extents: spatial axes are {h}x{w}"
        )
    ho, wo = h // 2, w // 2
    kern = _BLUR_KERNEL.astype(x.data.dtype)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros((n, c, ho, wo), dtype=x.data.dtype)
    for a in range(3):
        for b in range(3):
            out += kern[a, b] * xp[:, :, a:a + 2 * ho - 1:2, b:b + 2 * wo - 1:2]

    def vjp(g):
        gxp = np.zeros((n, c, h + 2, w + 2), dtype=g.dtype)
        for a in range(3):
            for b in range(3):
                gxp[:, :, a:a + 2 * ho - 1:2, b:b + 2 * wo - 1:2] += kern[a, b] * g
        # fold the reflect padding back onto its interior sources
        gxp[:, :, 2, :] += gxp[:, :, 0, :]
        gxp[:, :, h - 1, :] += gxp[:, :, h + 1, :]
        gxp[:, :, :, 2] += gxp[:, :, :, 0]
        gxp[:, :, :, w - 1] += gxp[:, :, :, w + 1]
        return (np.ascontiguousarray(gxp[:, :, 1:h + 1, 1:w + 1]),)

    return _make(out, (x,), vjp)


def _up2_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    """Double one spatial axis with half-pixel-center bilinear weights."""
    arr = np.moveaxis(arr, axis, -1)
    prev = np.concatenate([arr[..., :1], arr[..., :-1]], axis=-1)
    nxt = np.concatenate([arr[..., 1:], arr[..., -1:]], axis=-1)
    out = np.empty(arr.shape[:-1] + (2 * arr.shape[-1],), dtype=arr.dtype)
    out[..., 0::2] = 0.25 * prev + 0.75 * arr
    out[..., 1::2] = 0.75 * arr + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _up2_axis_grad(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge = g[..., 0::2]
    go = g[..., 1::2]
    gx = 0.75 * (ge + go)
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(gx, -1, axis)


def upsample_bilinear2x(x: Tensor) -> Tensor:
    """2x bilinear upsampling with half-pixel centers (align-corners false)."""
    _check_4d(x, "upsample_bilinear2x")
    out = _up2_axis(_up2_axis(x.data, 2), 3)

    def vjp(g):
        return (_up2_axis_grad(_up2_axis_grad(g, 3), 2),)

    return _make(out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean, keeping singleton H and W axes."""
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g):
        return (np.broadcast_to(g / (h * w), x.data.shape),)

    return _make(out, (x,), vjp)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place with ``momentum`` (running
    variance uses the unbiased estimate). Eval mode normalizes with the
    running buffers.
    """
    _check_4d(x, "batchnorm2d")
    n, c, h, w = x.data.shape
    count = n * h * w
    shape_c = (1, c, 1, 1)
    if training:
        if count < 2:
            raise DegenerateStatisticsError(
                f"batch statistics need at least 2 elements per channel, got {count}"
            )
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / (count - 1))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(shape_c)) * inv_std.reshape(shape_c)
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)
        xhat = (x.data - running_mean.reshape(shape_c).astype(x.data.dtype)) \
            * inv_std.reshape(shape_c)
    out = gamma.data.reshape(shape_c) * xhat + beta.data.reshape(shape_c)

    def vjp(g):
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        scale = (gamma.data * inv_std).reshape(shape_c)
        if training:
            grad_x = scale * (
                g
                - grad_beta.reshape(shape_c) / count
                - xhat * grad_gamma.reshape(shape_c) / count
            )
        else:
            grad_x = scale * g
        return grad_x, grad_gamma, grad_beta

    return _make(out, (x, gamma, beta), vjp)

"""Differentiable network primitives on NCHW tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, as_tensor, concat, getitem, make_op, reduce, reshape, transpose

GELU_C = 0.7978845608
GELU_A = 0.044715


@dataclass
class ConvKernel:
    """Convolution weights ``[out_c, in_c/groups, kh, kw]`` plus settings.

    ``padding=None`` selects same-padding for stride 1 (``k // 2`` per side).
    """

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int | tuple | None = None
    groups: int = 1

    def __post_init__(self):
        self.weight = as_tensor(self.weight)
        if self.bias is not None:
            self.bias = as_tensor(self.bias)
        if self.weight.ndim != 4:
            raise ShapeError("conv kernel must be rank 4", self.weight.shape)
        out_c = self.weight.shape[0]
        if self.groups < 1 or out_c % self.groups:
            raise ShapeError(f"groups={self.groups} does not divide out channels", self.weight.shape)
        if self.bias is not None and self.bias.shape != (out_c,):
            raise ShapeError("bias must have one entry per output channel", self.bias.shape, (out_c,))
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def pads(self) -> tuple:
        kh, kw = self.weight.shape[2:]
        if self.padding is None:
            return kh // 2, kw // 2
        if isinstance(self.padding, int):
            return self.padding, self.padding
        return tuple(self.padding)


def conv2d(x, kernel: ConvKernel) -> Tensor:
    """2-D cross-correlation with zero padding, optional bias and groups."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("conv2d expects NCHW input", x.shape)
    n, c, h, w = x.shape
    if c != kernel.in_channels:
        raise ShapeError(
            f"conv2d: input has {c} channels, kernel expects {kernel.in_channels}",
            x.shape, kernel.weight.shape,
        )
    kh, kw = kernel.weight.shape[2:]
    ph, pw = kernel.pads()
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError("conv2d: kernel larger than padded input", x.shape, kernel.weight.shape)
    g = kernel.groups
    if g == 1 and kh == kw == 1 and kernel.stride == 1 and ph == pw == 0:
        return _pointwise(x, kernel.weight, kernel.bias)
    if g == c == kernel.out_channels:
        return _depthwise(x, kernel.weight, kernel.bias, kernel.stride, ph, pw)
    if g == 1:
        return _dense(x, kernel.weight, kernel.bias, kernel.stride, ph, pw)
    per_in, per_out = c // g, kernel.out_channels // g
    outs = []
    for i in range(g):
        xi = getitem(x, (slice(None), slice(i * per_in, (i + 1) * per_in)))
        wi = getitem(kernel.weight, slice(i * per_out, (i + 1) * per_out))
        bi = None if kernel.bias is None else getitem(kernel.bias, slice(i * per_out, (i + 1) * per_out))
        outs.append(_dense(xi, wi, bi, kernel.stride, ph, pw))
    return concat(outs, axis=1)


def _inputs(x, weight, bias):
    return (x, weight) if bias is None else (x, weight, bias)


def _pointwise(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    n, c, h, w = x.shape
    o = weight.shape[0]
    wm = weight.data.reshape(o, c)
    xm = x.data.reshape(n, c, h * w)
    out = np.matmul(wm, xm)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def back(g):
        gm = g.reshape(n, o, h * w)
        dx = np.matmul(wm.T, gm).reshape(x.shape)
        dw = np.einsum("noh,nch->oc", gm, xm).reshape(weight.shape)
        if bias is None:
            return dx, dw
        return dx, dw, gm.sum(axis=(0, 2))

    return make_op("conv1x1", out.reshape(n, o, h, w), _inputs(x, weight, bias), back,
                   flops=2 * n * o * c * h * w)


def _pad(a: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == pw == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _depthwise(x: Tensor, weight: Tensor, bias, stride: int, ph: int, pw: int) -> Tensor:
    n, c, h, w = x.shape
    kh, kw = weight.shape[2:]
    xp = _pad(x.data, ph, pw)
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    wd = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x.data, wd))
    for i in range(kh):
        for j in range(kw):
            out += wd[None, :, i, j, None, None] * xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back(g):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                win = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                dxp[win] += wd[None, :, i, j, None, None] * g
                dw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[win])
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return make_op("conv_depthwise", out, _inputs(x, weight, bias), back, flops=2 * out.size * kh * kw)


def _dense(x: Tensor, weight: Tensor, bias, stride: int, ph: int, pw: int) -> Tensor:
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = _pad(x.data, ph, pw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wm = weight.data.reshape(o, -1)
    out = cols @ wm.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (gm.T @ cols).reshape(weight.shape)
        dcols = (gm @ wm).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        if bias is None:
            return dx, dw
        return dx, dw, gm.sum(axis=0)

    return make_op("conv2d", np.ascontiguousarray(out), _inputs(x, weight, bias), back,
                   flops=2 * out.size * c * kh * kw)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalise across channels (axis 1) at every spatial position."""
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = x.shape[1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise ShapeError("layer_norm: gain/offset must have one entry per channel", x.shape, gain.shape, offset.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gd, od = gain.data.reshape(bshape), offset.data.reshape(bshape)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * rstd
    other = tuple(i for i in range(x.ndim) if i != 1)

    def back(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=other), g.sum(axis=other)

    return make_op("layer_norm", xhat * gd + od, (x, gain, offset), back, flops=8 * x.size)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range", x.shape)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", y, (x,), back, flops=4 * x.size)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_op("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),), flops=4 * x.size)


def gelu(x) -> Tensor:
    """Tanh-approximated GELU."""
    x = as_tensor(x)
    xd = x.data
    inner = GELU_C * (xd + GELU_A * xd ** 3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def back(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_op("gelu", y, (x,), back, flops=10 * x.size)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_op("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid, "tanh": tanh}


def activate(kind: str, x) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def directional_avg_pool(x, direction: str) -> Tensor:
    """``vertical`` averages over W (N×C×H×1); ``horizontal`` over H (N×C×1×W)."""
    if direction == "vertical":
        return reduce("mean", x, 3, keep_dims=True)
    if direction == "horizontal":
        return reduce("mean", x, 2, keep_dims=True)
    raise ValueError(f"unknown pooling direction {direction!r}")


def space_to_depth(x) -> Tensor:
    """Fold each 2×2 block into channels: out channel = c*4 + 2*row + col."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("space_to_depth requires even spatial extents", x.shape)
    y = reshape(x, (n, c, h // 2, 2, w // 2, 2))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (n, c * 4, h // 2, w // 2))


def depth_to_space(x) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c % 4:
        raise ShapeError("depth_to_space requires channels divisible by 4", x.shape)
    y = reshape(x, (n, c // 4, 2, 2, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, c // 4, h * 2, w * 2))


def resample(x, mode: str, mixer: ConvKernel) -> Tensor:
    """Halve (``down``) or double (``up``) the resolution.

    ``down``: space-to-depth then a 1×1 mix from 4C to 2C channels.
    ``up``: a 1×1 mix from C to 2C channels then depth-to-space (C/2 out).
    """
    if mode == "down":
        return conv2d(space_to_depth(x), mixer)
    if mode == "up":
        return depth_to_space(conv2d(x, mixer))
    raise ValueError(f"unknown resample mode {mode!r}")


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm (smoothly, via ``eps``)."""
    x = as_tensor(x)
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True) + eps)
    y = xd / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return make_op("l2_normalize", y, (x,), back, flops=4 * x.size)

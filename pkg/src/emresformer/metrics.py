"""Full-reference image quality metrics and the SSIM training loss.

Images are ``C×H×W`` or ``N×C×H×W`` arrays (or :class:`Tensor` /
:class:`~emresformer.rain.Image`) holding values on a dynamic range ``L``,
1.0 for the normalised floats used everywhere in this package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import ConvKernel, conv2d
from .tensor import Tensor, as_tensor, mul, reduce, scale, square, sub

LUMA_BT601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    data_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def delta1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def delta2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def gaussian(self) -> np.ndarray:
        r = np.arange(self.window) - (self.window - 1) / 2.0
        g = np.exp(-(r ** 2) / (2.0 * self.sigma ** 2))
        return g / g.sum()


def _array(img) -> np.ndarray:
    if isinstance(img, Tensor):
        return img.data
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: image shapes differ", a.shape, b.shape)


def rgb_to_y(img) -> np.ndarray:
    """BT.601 luma of a 3-channel image; the channel axis is kept with extent 1."""
    a = _array(img)
    axis = a.ndim - 3
    if a.ndim not in (3, 4) or a.shape[axis] != 3:
        raise ShapeError("rgb_to_y expects 3 channels", a.shape)
    r, g, b = np.split(a, 3, axis=axis)
    return LUMA_BT601[0] * r + LUMA_BT601[1] * g + LUMA_BT601[2] * b


def _maybe_y(a: np.ndarray, y_channel: bool) -> np.ndarray:
    return rgb_to_y(a) if y_channel else a


def mse(out, gt) -> float:
    a, b = _array(out), _array(gt)
    _check_pair(a, b, "mse")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def psnr(out, gt, data_range: float = 1.0, y_channel: bool = False) -> float:
    """``10 log10(L^2 / MSE)`` in dB; identical inputs give ``inf``."""
    a, b = _array(out), _array(gt)
    _check_pair(a, b, "psnr")
    err = mse(_maybe_y(a, y_channel), _maybe_y(b, y_channel))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / err)


def mae(out, gt) -> float:
    a, b = _array(out), _array(gt)
    _check_pair(a, b, "mae")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def _as_batch(t: Tensor) -> Tensor:
    if t.ndim == 3:
        return t.reshape((1,) + t.shape)
    if t.ndim == 2:
        return t.reshape((1, 1) + t.shape)
    return t


def _blur(t: Tensor, params: SsimParams) -> Tensor:
    """Separable Gaussian filter, valid windows only."""
    c = t.shape[1]
    g = params.gaussian().astype(t.dtype)
    horiz = Tensor(np.tile(g.reshape(1, 1, 1, -1), (c, 1, 1, 1)))
    vert = Tensor(np.tile(g.reshape(1, 1, -1, 1), (c, 1, 1, 1)))
    t = conv2d(t, ConvKernel(horiz, padding=0, groups=c))
    return conv2d(t, ConvKernel(vert, padding=0, groups=c))


def ssim_map(x, y, params: SsimParams = SsimParams()) -> Tensor:
    """Per-window SSIM for N×C×H×W tensors (differentiable in both inputs)."""
    x, y = _as_batch(as_tensor(x)), _as_batch(as_tensor(y))
    if x.shape != y.shape:
        raise ShapeError("ssim: image shapes differ", x.shape, y.shape)
    if x.shape[-1] < params.window or x.shape[-2] < params.window:
        raise ShapeError(f"ssim: image smaller than the {params.window}×{params.window} window", x.shape)
    mu_x, mu_y = _blur(x, params), _blur(y, params)
    mu_xx, mu_yy, mu_xy = square(mu_x), square(mu_y), mul(mu_x, mu_y)
    var_x = sub(_blur(square(x), params), mu_xx)
    var_y = sub(_blur(square(y), params), mu_yy)
    cov = sub(_blur(mul(x, y), params), mu_xy)
    d1, d2 = params.delta1, params.delta2
    num = mul(scale(mu_xy, 2.0) + d1, scale(cov, 2.0) + d2)
    den = mul(mu_xx + mu_yy + d1, var_x + var_y + d2)
    return num / den


def ssim(out, gt, params: SsimParams = SsimParams(), y_channel: bool = False) -> float:
    """Mean SSIM over all valid Gaussian windows and channels."""
    a, b = _array(out), _array(gt)
    _check_pair(a, b, "ssim")
    a, b = _maybe_y(a, y_channel), _maybe_y(b, y_channel)
    return float(ssim_map(Tensor(a.astype(np.float64)), Tensor(b.astype(np.float64)), params).data.mean())


def ssim_loss(out, gt, params: SsimParams = SsimParams()) -> Tensor:
    """``1 - SSIM`` averaged over the batch; stays on the active tape."""
    return 1.0 - reduce("mean", ssim_map(out, gt, params))


def evaluate_pair(out, gt, params: SsimParams = SsimParams()) -> dict:
    """All report metrics for one image pair (values in [0, 1])."""
    L = params.data_range
    return {
        "psnr_y": psnr(out, gt, L, y_channel=True),
        "ssim_y": ssim(out, gt, params, y_channel=True),
        "mae": mae(out, gt),
        "psnr_rgb": psnr(out, gt, L),
        "ssim_rgb": ssim(out, gt, params),
    }

"""Training losses and evaluation metrics.

The reconstruction loss is the Charbonnier penalty applied per sample to
the whole difference vector: mean_i sqrt(||x_i - y_i||^2 + eps^2). Its
floor at x == y is exactly eps. The spectral loss is the mean absolute
difference between the half spectra of prediction and target, counting
real and imaginary parts separately. PSNR uses MAX=1 on [0,1]-clamped
images; SSIM is the standard 11x11 Gaussian-window formulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fft import rfft2d
from .tensor import Tensor, _accum, _from_op


@dataclass
class LossConfig:
    epsilon: float = 1e-3
    lambda_st: float = 0.2

    def validate(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.lambda_st < 0:
            raise ValueError(f"lambda_st must be non-negative, got {self.lambda_st}")


def charbonnier(x: Tensor, y: Tensor, eps: float = 1e-3) -> Tensor:
    """mean_i sqrt(sum((x_i - y_i)^2) + eps^2) over the leading batch axis.

    The inner reduction runs in float64 so the zero-difference floor is
    exactly eps; gradients are the analytic d / (N * sqrt(ss + eps^2)).
    """
    if x.data.shape != y.data.shape:
        raise ValueError(f"charbonnier shape mismatch: {x.shape} vs {y.shape}")
    if eps <= 0:
        raise ValueError(f"charbonnier needs eps > 0, got {eps}")
    n = x.data.shape[0]
    diff = x.data.astype(np.float64) - y.data.astype(np.float64)
    ss = (diff * diff).reshape(n, -1).sum(axis=1)
    per_sample = np.sqrt(ss + eps * eps)
    out = _from_op(np.asarray(per_sample.mean(), dtype=x.data.dtype), (x, y), None)

    def _bw():
        coef = (float(out.grad) / (n * per_sample)).reshape((n,) + (1,) * (x.data.ndim - 1))
        g = (coef * diff).astype(x.data.dtype)
        _accum(x, g)
        _accum(y, -g)

    out._backward = _bw if out.requires_grad else None
    return out


def spectral_loss(j: Tensor, j_gt: Tensor) -> Tensor:
    """Mean |difference| over the real and imaginary half-spectrum bins."""
    if j.data.shape != j_gt.data.shape:
        raise ValueError(f"spectral_loss shape mismatch: {j.shape} vs {j_gt.shape}")
    s = rfft2d(j)
    s_gt = rfft2d(j_gt)
    dr = (s.real - s_gt.real).abs().mean()
    di = (s.imag - s_gt.imag).abs().mean()
    return (dr + di) * 0.5


def total_loss(j: Tensor, j_gt: Tensor, cfg: LossConfig) -> Tensor:
    """Charbonnier plus lambda_st-weighted spectral loss."""
    cfg.validate()
    loss = charbonnier(j, j_gt, cfg.epsilon)
    if cfg.lambda_st > 0:
        loss = loss + spectral_loss(j, j_gt) * cfg.lambda_st
    return loss


# -- metrics -----------------------------------------------------------------


def _as_image_array(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return arr.astype(np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with MAX=1, on [0,1]-clamped inputs.

    Capped at 100 dB when MSE drops below 1e-10.
    """
    a = np.clip(_as_image_array(a), 0.0, 1.0)
    b = np.clip(_as_image_array(b), 0.0, 1.0)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse < 1e-10:
        return 100.0
    return float(10.0 * np.log10(1.0 / mse))


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2
    coords = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2 * _SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, win: np.ndarray) -> float:
    from numpy.lib.stride_tricks import sliding_window_view

    wa = sliding_window_view(a, (_SSIM_WINDOW, _SSIM_WINDOW))
    wb = sliding_window_view(b, (_SSIM_WINDOW, _SSIM_WINDOW))
    mu_a = np.tensordot(wa, win, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, win, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(wa * wa, win, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(wb * wb, win, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(wa * wb, win, axes=([2, 3], [0, 1]))
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean local SSIM, Gaussian 11x11 window, dynamic range 1, channel-averaged."""
    a = _as_image_array(a)
    b = _as_image_array(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"ssim expects C,H,W or H,W images, got shape {a.shape}")
    h, w = a.shape[-2:]
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, got {h}x{w}")
    win = _gaussian_window()
    return float(np.mean([_ssim_channel(a[c], b[c], win) for c in range(a.shape[0])]))

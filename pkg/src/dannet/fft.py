"""Real 2-D FFT with a fixed, explicit convention, plus a naive DFT oracle.

Forward transform is unnormalized; the inverse carries the full 1/(H*W)
factor so the round trip is the identity. The real transform stores the
non-redundant half spectrum of width Wf = W//2 + 1 (DC through Nyquist);
dropped columns are recovered from Hermitian symmetry on inversion.

Sizes are restricted to powers of two and the transform is a radix-2
decimation-in-time implementation. Butterflies run in complex128 and
results are cast back to the caller's dtype, so float32 round trips stay
well under 1e-5 even at 64x64.

``dft2d_naive`` is the test oracle: the literal double-sum definition,
capped at 16x16, never used in a training path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _from_op, concat, narrow

_BITREV_CACHE: dict = {}
_TWIDDLE_CACHE: dict = {}


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bitrev(n: int) -> np.ndarray:
    idx = _BITREV_CACHE.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        idx = np.zeros(n, dtype=np.intp)
        for i in range(n):
            r = 0
            v = i
            for _ in range(bits):
                r = (r << 1) | (v & 1)
                v >>= 1
            idx[i] = r
        _BITREV_CACHE[n] = idx
    return idx


def _twiddles(step: int, inverse: bool) -> np.ndarray:
    key = (step, inverse)
    w = _TWIDDLE_CACHE.get(key)
    if w is None:
        sign = 1.0 if inverse else -1.0
        k = np.arange(step // 2)
        w = np.exp(sign * 2j * np.pi * k / step)
        _TWIDDLE_CACHE[key] = w
    return w


def _fft_last_axis(a: np.ndarray, inverse: bool) -> np.ndarray:
    """In-place-style radix-2 DIT along the last axis; unnormalized."""
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    y = np.ascontiguousarray(a[..., _bitrev(n)], dtype=np.complex128)
    if n == 1:
        return y
    batch = y.shape[:-1]
    half = 1
    while half < n:
        step = half * 2
        w = _twiddles(step, inverse)
        blocks = y.reshape(*batch, n // step, step)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * w
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        half = step
    return y


def _fft2_complex(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Unnormalized 2-D transform over the last two axes."""
    out = _fft_last_axis(a, inverse)
    out = _fft_last_axis(out.swapaxes(-1, -2), inverse).swapaxes(-1, -2)
    return np.ascontiguousarray(out)


# -- array-level real transforms ----------------------------------------------


def rfft2_arrays(x: np.ndarray):
    """Half-spectrum forward transform of real input over the last two axes.

    Returns (real, imag) arrays of shape (..., H, W//2 + 1) in x's dtype.
    """
    h, w = x.shape[-2], x.shape[-1]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ValueError(f"rfft2 needs power-of-two spatial dims, got {h}x{w}")
    full = _fft2_complex(x.astype(np.complex128), inverse=False)
    half = full[..., : w // 2 + 1]
    return half.real.astype(x.dtype), half.imag.astype(x.dtype)


def _expand_hermitian(spec: np.ndarray, width: int) -> np.ndarray:
    """Rebuild the full-width complex spectrum from the stored half."""
    h = spec.shape[-2]
    wf = spec.shape[-1]
    full = np.empty(spec.shape[:-1] + (width,), dtype=np.complex128)
    full[..., :wf] = spec
    if width > wf:
        rows = (-np.arange(h)) % h
        src_cols = width - np.arange(wf, width)
        full[..., wf:] = np.conj(spec[..., rows, :][..., src_cols])
    return full


def irfft2_arrays(real: np.ndarray, imag: np.ndarray, width: int) -> np.ndarray:
    """Inverse of ``rfft2_arrays``; normalized by 1/(H*W)."""
    h, wf = real.shape[-2], real.shape[-1]
    if wf != width // 2 + 1 or not is_power_of_two(width):
        raise ValueError(f"spectrum width {wf} inconsistent with signal width {width}")
    spec = real.astype(np.complex128) + 1j * imag.astype(np.complex128)
    full = _expand_hermitian(spec, width)
    out = _fft2_complex(full, inverse=True).real / (h * width)
    return out.astype(real.dtype)


def dft2d_naive(x: np.ndarray) -> np.ndarray:
    """Direct double-sum 2-D DFT of a real H x W array; oracle only."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"dft2d_naive expects a 2-D array, got shape {x.shape}")
    h, w = x.shape
    if h > 16 or w > 16:
        raise ValueError(f"dft2d_naive is capped at 16x16, got {h}x{w}")
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.empty((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * hh / h + v * ww / w))
            out[u, v] = np.sum(x * phase)
    return out


# -- differentiable graph ops ---------------------------------------------------


@dataclass
class Spectrum:
    """Half spectrum of a real N,C,H,W batch: real/imag parts N,C,H,Wf."""

    real: Tensor
    imag: Tensor
    original_width: int

    @property
    def shape(self):
        return self.real.shape


def rfft2d_stacked(x: Tensor) -> Tensor:
    """Forward real FFT with real and imaginary parts stacked on channels.

    (N, C, H, W) -> (N, 2C, H, W//2+1); the first C channels are the real
    parts. Gradient is the adjoint transform.
    """
    if x.data.ndim != 4:
        raise ValueError(f"rfft2d expects N,C,H,W input, got shape {x.shape}")
    n, c, h, w = x.data.shape
    re, im = rfft2_arrays(x.data)
    out = _from_op(np.concatenate([re, im], axis=1), (x,), None)

    def _bw():
        g = out.grad
        spec = g[:, :c].astype(np.complex128) + 1j * g[:, c:].astype(np.complex128)
        full = np.zeros((n, c, h, w), dtype=np.complex128)
        full[..., : w // 2 + 1] = spec
        gx = _fft2_complex(full, inverse=True).real
        _accum(x, gx.astype(x.data.dtype))

    out._backward = _bw if out.requires_grad else None
    return out


def irfft2d_stacked(stacked: Tensor, width: int) -> Tensor:
    """Inverse of ``rfft2d_stacked``: (N, 2C, H, Wf) -> (N, C, H, width)."""
    if stacked.data.ndim != 4 or stacked.data.shape[1] % 2:
        raise ValueError(f"irfft2d expects stacked real/imag channels, got shape {stacked.shape}")
    n, c2, h, wf = stacked.data.shape
    c = c2 // 2
    if wf != width // 2 + 1 or not is_power_of_two(width):
        raise ValueError(f"spectrum width {wf} inconsistent with signal width {width}")
    out_data = irfft2_arrays(stacked.data[:, :c], stacked.data[:, c:], width)
    out = _from_op(out_data, (stacked,), None)

    def _bw():
        g = _fft2_complex(out.grad.astype(np.complex128), inverse=False) / (h * width)
        # fold the mirrored columns back onto the stored bins
        gr = g.real[..., :wf].copy()
        gi = g.imag[..., :wf].copy()
        if width > wf:
            # stored bin (h, w) was also written (conjugated) at ((H-h)%H, W-w)
            rows = (-np.arange(h)) % h
            mirror = g[..., rows, :][..., width - np.arange(1, width - wf + 1)]
            gr[..., 1 : width - wf + 1] += mirror.real
            gi[..., 1 : width - wf + 1] -= mirror.imag
        _accum(stacked, np.concatenate([gr, gi], axis=1).astype(stacked.data.dtype))

    out._backward = _bw if out.requires_grad else None
    return out


def rfft2d(x: Tensor) -> Spectrum:
    """Forward real FFT of an N,C,H,W tensor as a ``Spectrum``."""
    c = x.data.shape[1]
    stacked = rfft2d_stacked(x)
    return Spectrum(
        real=narrow(stacked, 1, 0, c),
        imag=narrow(stacked, 1, c, c),
        original_width=x.data.shape[3],
    )


def irfft2d(s: Spectrum, width: int) -> Tensor:
    """Reconstruct the real signal from a ``Spectrum``."""
    if width != s.original_width:
        raise ValueError(f"width {width} does not match spectrum's original width {s.original_width}")
    return irfft2d_stacked(concat([s.real, s.imag], axis=1), width)

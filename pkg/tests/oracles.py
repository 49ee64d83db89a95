"""Independent reference implementations used as test oracles.

Everything here is written as straight-line numpy (or explicit Python
loops) with no reuse of the library's fast paths, so agreement between
the two is meaningful.
"""

import numpy as np


def conv2d_loops(x, w, b, stride=1, padding=0):
    """Index-looped direct-summation convolution."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wdt + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wdt] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[ni, ci, i * stride + ki, j * stride + kj] * w[co, ci, ki, kj]
                    out[ni, co, i, j] = acc + b[co]
    return out


def elu_ref(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, np.exp(x) - 1.0)


def sigmoid_ref(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def block_mean_2x(x):
    """2x2 block means via explicit loops."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ni, ci, i, j] = x[ni, ci, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean()
    return out


def bilinear_weights(n_in, n_out):
    """Explicit align-corners-false interpolation weights."""
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        center = (o + 0.5) * scale - 0.5
        lo = int(np.floor(center))
        frac = center - lo
        mat[o, min(max(lo, 0), n_in - 1)] += 1.0 - frac
        mat[o, min(max(lo + 1, 0), n_in - 1)] += frac
    return mat


def resample_ref(x, mode):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    if mode == "down_half_bilinear":
        ho, wo = h // 2, w // 2
    else:
        ho, wo = 2 * h, 2 * w
    ah = bilinear_weights(h, ho)
    aw = bilinear_weights(w, wo)
    out = np.zeros((n, c, ho, wo))
    for ni in range(n):
        for ci in range(c):
            out[ni, ci] = ah @ x[ni, ci] @ aw.T
    return out


def idft2d_naive(spec_full):
    """Direct inverse of a full complex spectrum, normalized by 1/(H*W)."""
    spec_full = np.asarray(spec_full, dtype=np.complex128)
    h, w = spec_full.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for y in range(h):
        for x in range(w):
            acc = 0.0j
            for u in range(h):
                for v in range(w):
                    acc += spec_full[u, v] * np.exp(2j * np.pi * (u * y / h + v * x / w))
            out[y, x] = acc / (h * w)
    return out


def expand_half_spectrum(re, im, width):
    """Hermitian expansion of a stored half spectrum (single 2-D plane)."""
    h, wf = re.shape
    full = np.zeros((h, width), dtype=np.complex128)
    full[:, :wf] = re + 1j * im
    for u in range(h):
        for v in range(wf, width):
            full[u, v] = np.conj(full[(-u) % h, width - v])
    return full


# -- block oracles (straight-line, loop convs + naive transforms) ----------------


def _sandwich(x, conv_a, conv_b):
    pad_a = (conv_a.weight.data.shape[-1] - 1) // 2
    pad_b = (conv_b.weight.data.shape[-1] - 1) // 2
    h = conv2d_loops(x, conv_a.weight.data, conv_a.bias.data, 1, pad_a)
    return conv2d_loops(elu_ref(h), conv_b.weight.data, conv_b.bias.data, 1, pad_b)


def dual_pool_ref(x, p):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = x.copy()
    if p.variant in ("full", "ca_only"):
        pooled = x.mean(axis=(2, 3), keepdims=True) + x.max(axis=(2, 3), keepdims=True)
        gate_c = sigmoid_ref(_sandwich(pooled, p.channel_a, p.channel_b))
        out = out * gate_c
    if p.variant in ("full", "pa_only"):
        gate_s = sigmoid_ref(_sandwich(x, p.spatial_a, p.spatial_b))
        out = out * gate_s
    return out


def mst_ref(x, p):
    """Straight-line reimplementation of the MST block, full variant only."""
    from dannet.fft import dft2d_naive

    assert p.variant == "full"
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    half = c // 2
    wf = w // 2 + 1
    xg, xl = x[:, :half], x[:, half:]

    # global: naive forward DFT, stack, scaled pointwise convs, naive inverse
    re = np.zeros((n, half, h, wf))
    im = np.zeros((n, half, h, wf))
    for ni in range(n):
        for ci in range(half):
            full = dft2d_naive(xg[ni, ci])
            re[ni, ci] = full[:, :wf].real
            im[ni, ci] = full[:, :wf].imag
    stacked = np.concatenate([re, im], axis=1) / np.sqrt(h * w)
    mixed = _sandwich(stacked, p.global_a, p.global_b) * np.sqrt(h * w)
    ffc = np.zeros((n, half, h, w))
    for ni in range(n):
        for ci in range(half):
            full = expand_half_spectrum(mixed[ni, ci], mixed[ni, half + ci], w)
            ffc[ni, ci] = idft2d_naive(full).real
    r3 = _sandwich(xl, p.local3_a, p.local3_b)
    r1 = _sandwich(xl, p.local1_a, p.local1_b)
    fused = conv2d_loops(np.concatenate([ffc, r3, r1], axis=1),
                         p.fuse.weight.data, p.fuse.bias.data, 1, 0)
    return x + fused


def clagm_ref(features, guide, p):
    features = np.asarray(features, dtype=np.float64)
    gate = sigmoid_ref(_sandwich(np.asarray(guide, dtype=np.float64), p.map_a, p.map_b))
    gated = features * gate
    return conv2d_loops(np.concatenate([features, gated], axis=1),
                        p.merge.weight.data, p.merge.bias.data, 1, 1)


# -- loss / metric oracles ---------------------------------------------------------


def charbonnier_ref(x, y, eps=1e-3):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for i in range(x.shape[0]):
        ss = 0.0
        for dv in (x[i] - y[i]).reshape(-1):
            ss += dv * dv
        total += np.sqrt(ss + eps * eps)
    return total / x.shape[0]


def spectral_loss_ref(a, b):
    """Mean |spectrum difference| via the naive DFT, counting re and im bins."""
    from dannet.fft import dft2d_naive

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, c, h, w = a.shape
    wf = w // 2 + 1
    acc = 0.0
    count = 0
    for ni in range(n):
        for ci in range(c):
            da = dft2d_naive(a[ni, ci])[:, :wf]
            db = dft2d_naive(b[ni, ci])[:, :wf]
            acc += np.abs(da.real - db.real).sum() + np.abs(da.imag - db.imag).sum()
            count += 2 * h * wf
    return acc / count


def psnr_ref(a, b):
    a = np.clip(np.asarray(a, dtype=np.float64), 0, 1).reshape(-1)
    b = np.clip(np.asarray(b, dtype=np.float64), 0, 1).reshape(-1)
    acc = 0.0
    for av, bv in zip(a, b):
        acc += (av - bv) ** 2
    mse = acc / a.size
    if mse < 1e-10:
        return 100.0
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window_ref(size=11, sigma=1.5):
    win = np.zeros((size, size))
    half = (size - 1) / 2
    for i in range(size):
        for j in range(size):
            win[i, j] = np.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma))
    return win / win.sum()


def ssim_ref(a, b):
    """Direct windowed SSIM over valid positions, channel-averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    win = gaussian_window_ref()
    k = 11
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for ch in range(a.shape[0]):
        for i in range(a.shape[1] - k + 1):
            for j in range(a.shape[2] - k + 1):
                pa = a[ch, i : i + k, j : j + k]
                pb = b[ch, i : i + k, j : j + k]
                mu_a = (win * pa).sum()
                mu_b = (win * pb).sum()
                var_a = (win * pa * pa).sum() - mu_a**2
                var_b = (win * pb * pb).sum() - mu_b**2
                cov = (win * pa * pb).sum() - mu_a * mu_b
                vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
    return float(np.mean(vals))


# -- physical model oracles ----------------------------------------------------------


def haze_ref(clean, transmission, atmosphere):
    clean = np.asarray(clean, dtype=np.float64)
    out = np.zeros_like(clean)
    atm = np.broadcast_to(np.asarray(atmosphere, dtype=np.float64), clean.shape[1:])
    for ch in range(clean.shape[0]):
        for i in range(clean.shape[1]):
            for j in range(clean.shape[2]):
                t = transmission[i, j]
                out[ch, i, j] = clean[ch, i, j] * t + atm[i, j] * (1 - t)
    return out


def snow_ref(clean, t, atmosphere, z, r, color):
    clean = np.asarray(clean, dtype=np.float64)
    out = np.zeros_like(clean)
    atm = np.broadcast_to(np.asarray(atmosphere, dtype=np.float64), clean.shape[1:])
    for ch in range(clean.shape[0]):
        for i in range(clean.shape[1]):
            for j in range(clean.shape[2]):
                zr = z[i, j] * r[i, j]
                veil_free = clean[ch, i, j] * (1 - zr) + color[ch, i, j] * zr
                out[ch, i, j] = veil_free * t[i, j] + atm[i, j] * (1 - t[i, j])
    return out


def compose_ref(w_h, w_s, j_h, j_s):
    j_h = np.asarray(j_h, dtype=np.float64)
    out = np.zeros_like(j_h)
    for ni in range(j_h.shape[0]):
        for ch in range(j_h.shape[1]):
            for i in range(j_h.shape[2]):
                for j in range(j_h.shape[3]):
                    out[ni, ch, i, j] = (
                        w_h[ni, 0, i, j] * j_h[ni, ch, i, j] + w_s[ni, 0, i, j] * j_s[ni, ch, i, j]
                    )
    return out


def adam_scalar_sim(grads, lr, betas=(0.9, 0.999), eps=1e-8, p0=0.0):
    """Hand-rolled scalar Adam recurrence; returns the parameter trajectory."""
    b1, b2 = betas
    m = v = 0.0
    p = p0
    traj = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
        traj.append(p)
    return np.array(traj)

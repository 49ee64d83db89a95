"""The three composite blocks the expert networks are assembled from.

* dual-pool attention: a channel gate driven by summed global avg/max
  pooling and a spatial gate from a 1x1 bottleneck, both sigmoid-bounded,
  applied multiplicatively.
* multi-branch spectral transform (MST): channel split into a global
  branch (pointwise convs applied to the stacked real/imag half spectrum)
  and a two-scale local branch; branch outputs are concatenated, fused by
  a 1x1 conv and added back to the block input. Ablation variants swap or
  drop branches.
* cross-layer activation gate (CLAGM): a gate map produced from the
  downsampled degraded image modulates the features; original and gated
  features are merged by a 3x3 conv.

All blocks preserve the input shape and are differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .fft import irfft2d_stacked, is_power_of_two, rfft2d_stacked
from .tensor import Tensor, concat, conv2d, elu, narrow, pool, sigmoid

MST_VARIANTS = ("full", "vc", "local_only", "global_only", "no_spectral")
ATTENTION_VARIANTS = ("full", "no_dp", "ca_only", "pa_only")


@dataclass
class Conv:
    """A conv layer's parameters; padding is derived so stride 1 keeps H,W."""

    weight: Tensor
    bias: Tensor
    stride: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        k = self.weight.data.shape[-1]
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=(k - 1) // 2)


def make_conv(rng: np.random.Generator, cin: int, cout: int, k: int, stride: int = 1,
              dtype=np.float32, trainable: bool = True, init_gain: float = 1.0) -> Conv:
    """He fan-in normal weights (optionally re-scaled), zero bias."""
    std = init_gain * np.sqrt(2.0 / (cin * k * k))
    w = rng.standard_normal((cout, cin, k, k)) * std
    return Conv(
        weight=Tensor(w.astype(dtype), requires_grad=trainable),
        bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=trainable),
        stride=stride,
    )


def iter_params(obj, prefix: str = ""):
    """Yield (name, Tensor) pairs for every Conv inside a param container."""
    if isinstance(obj, Conv):
        yield f"{prefix}.weight" if prefix else "weight", obj.weight
        yield f"{prefix}.bias" if prefix else "bias", obj.bias
        return
    for f in fields(obj):
        child = getattr(obj, f.name)
        if child is None or not hasattr(child, "__dataclass_fields__"):
            continue
        sub = f"{prefix}.{f.name}" if prefix else f.name
        yield from iter_params(child, sub)


# -- dual-pool attention --------------------------------------------------------


@dataclass
class DualPoolAttnParams:
    channel_a: Optional[Conv]  # 1x1 C -> C
    channel_b: Optional[Conv]  # 1x1 C -> C
    spatial_a: Optional[Conv]  # 1x1 C -> C/r
    spatial_b: Optional[Conv]  # 1x1 C/r -> 1
    reduction: int = 4
    variant: str = "full"


def make_dual_pool(rng: np.random.Generator, channels: int, reduction: int = 4,
                   variant: str = "full", dtype=np.float32, trainable: bool = True) -> DualPoolAttnParams:
    if variant not in ("full", "ca_only", "pa_only"):
        raise ValueError(f"unknown attention variant {variant!r}")
    if channels % reduction:
        raise ValueError(f"reduction {reduction} must divide channel count {channels}")
    want_channel = variant in ("full", "ca_only")
    want_spatial = variant in ("full", "pa_only")
    return DualPoolAttnParams(
        channel_a=make_conv(rng, channels, channels, 1, dtype=dtype, trainable=trainable) if want_channel else None,
        channel_b=make_conv(rng, channels, channels, 1, dtype=dtype, trainable=trainable) if want_channel else None,
        spatial_a=make_conv(rng, channels, channels // reduction, 1, dtype=dtype, trainable=trainable) if want_spatial else None,
        spatial_b=make_conv(rng, channels // reduction, 1, 1, dtype=dtype, trainable=trainable) if want_spatial else None,
        reduction=reduction,
        variant=variant,
    )


def dual_pool_attention(x: Tensor, p: DualPoolAttnParams) -> Tensor:
    """Gate features by channel weights from pooled stats and a spatial map.

    Channel gate: sigmoid(conv(elu(conv(avgpool(x) + maxpool(x))))), shape
    N,C,1,1. Spatial gate: sigmoid(conv(elu(conv(x)))) through a C/r
    bottleneck to one channel. Both gates multiply x; output magnitude is
    strictly below |x| elementwise.
    """
    channels = x.data.shape[1]
    if channels % p.reduction:
        raise ValueError(f"dual_pool_attention needs {p.reduction} | C, got C={channels}")
    out = x
    if p.variant in ("full", "ca_only"):
        pooled = pool("avg_global", x) + pool("max_global", x)
        gate_c = sigmoid(p.channel_b(elu(p.channel_a(pooled))))
        out = out * gate_c
    if p.variant in ("full", "pa_only"):
        gate_s = sigmoid(p.spatial_b(elu(p.spatial_a(x))))
        out = out * gate_s
    return out


# -- multi-branch spectral transform ---------------------------------------------


@dataclass
class MSTParams:
    variant: str
    global_a: Optional[Conv] = None  # 1x1 on stacked spectrum (C ch) or C/2 spatial for no_spectral
    global_b: Optional[Conv] = None
    local1_a: Optional[Conv] = None  # 1x1 C/2 -> C/2
    local1_b: Optional[Conv] = None
    local3_a: Optional[Conv] = None  # 3x3 C/2 -> C/2
    local3_b: Optional[Conv] = None
    fuse: Optional[Conv] = None      # 1x1 -> C
    vc: Optional[Conv] = None        # vanilla 3x3 C -> C (vc variant only)


def _mst_branches(variant: str):
    has_global = variant in ("full", "global_only", "no_spectral")
    has_local = variant in ("full", "local_only", "no_spectral")
    return has_global, has_local


def make_mst(rng: np.random.Generator, channels: int, variant: str = "full",
             dtype=np.float32, trainable: bool = True) -> MSTParams:
    if variant not in MST_VARIANTS:
        raise ValueError(f"unknown MST variant {variant!r}")
    kw = dict(dtype=dtype, trainable=trainable)
    # the conv feeding the residual add starts at 0.1x He scale so each block
    # begins near the identity; otherwise variance compounds over the six
    # cascaded blocks with a heavy seed-dependent tail
    if variant == "vc":
        return MSTParams(
            variant="vc",
            vc=make_conv(rng, channels, channels, 3, init_gain=0.1, **kw),
        )
    if channels % 2:
        raise ValueError(f"MST needs an even channel count, got {channels}")
    half = channels // 2
    has_global, has_local = _mst_branches(variant)
    p = MSTParams(variant=variant)
    if has_global:
        g_ch = half if variant == "no_spectral" else channels  # stacked real/imag doubles C/2
        p.global_a = make_conv(rng, g_ch, g_ch, 1, **kw)
        p.global_b = make_conv(rng, g_ch, g_ch, 1, **kw)
    if has_local:
        p.local1_a = make_conv(rng, half, half, 1, **kw)
        p.local1_b = make_conv(rng, half, half, 1, **kw)
        p.local3_a = make_conv(rng, half, half, 3, **kw)
        p.local3_b = make_conv(rng, half, half, 3, **kw)
    fuse_in = half * (2 * has_local + has_global)
    p.fuse = make_conv(rng, fuse_in, channels, 1, init_gain=0.1, **kw)
    return p


def mst_block(x: Tensor, p: MSTParams) -> Tensor:
    """Split / transform / fuse block with a structural residual add.

    With all non-residual weights zeroed the block is the identity. The
    "vc" ablation replaces the whole block by one vanilla 3x3 convolution
    on the residual path.
    """
    if p.variant == "vc":
        return x + p.vc(x)

    n, channels, h, w = x.data.shape
    if channels % 2:
        raise ValueError(f"mst_block needs an even channel count, got {channels}")
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ValueError(f"mst_block needs power-of-two spatial dims, got {h}x{w}")
    half = channels // 2
    x_global = narrow(x, 1, 0, half)
    x_local = narrow(x, 1, half, half)

    has_global, has_local = _mst_branches(p.variant)
    parts = []
    if has_global:
        if p.variant == "no_spectral":
            parts.append(p.global_b(elu(p.global_a(x_global))))
        else:
            # the unnormalized forward transform leaves bins at O(sqrt(H*W))
            # times the feature scale; renormalize around the pointwise convs
            # so the ELU between them operates at O(1)
            scale = float(np.sqrt(h * w))
            spec = rfft2d_stacked(x_global) * (1.0 / scale)
            spec = p.global_b(elu(p.global_a(spec))) * scale
            parts.append(irfft2d_stacked(spec, width=w))
    if has_local:
        parts.append(p.local3_b(elu(p.local3_a(x_local))))
        parts.append(p.local1_b(elu(p.local1_a(x_local))))
    return x + p.fuse(concat(parts, axis=1))


# -- cross-layer activation gate --------------------------------------------------


@dataclass
class CLAGMParams:
    map_a: Conv   # 3x3, 3 -> C
    map_b: Conv   # 3x3, C -> C
    merge: Conv   # 3x3, 2C -> C


def make_clagm(rng: np.random.Generator, channels: int, dtype=np.float32,
               trainable: bool = True) -> CLAGMParams:
    kw = dict(dtype=dtype, trainable=trainable)
    return CLAGMParams(
        map_a=make_conv(rng, 3, channels, 3, **kw),
        map_b=make_conv(rng, channels, channels, 3, **kw),
        merge=make_conv(rng, 2 * channels, channels, 3, **kw),
    )


def clagm(features: Tensor, guide_image: Tensor, p: CLAGMParams) -> Tensor:
    """Modulate features by a gate map computed from the degraded image.

    The guide image must match the features' spatial size; the gate map is
    strictly inside (0, 1).
    """
    if features.data.shape[2:] != guide_image.data.shape[2:]:
        raise ValueError(
            f"clagm spatial mismatch: features {features.data.shape[2:]} vs guide {guide_image.data.shape[2:]}"
        )
    gate = sigmoid(p.map_b(elu(p.map_a(guide_image))))
    gated = features * gate
    return p.merge(concat([features, gated], axis=1))

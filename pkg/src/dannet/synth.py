"""Procedural clean scenes and physically modeled haze / snow degradation.

Haze follows the atmospheric scattering model

    I(x) = J(x) * t(x) + A(x) * (1 - t(x))

with transmission t in (0, 1] and atmospheric light A. Snow composes a
veiling-free snowy image first,

    K(x) = J(x) * (1 - Z(x) * R(x)) + C(x) * Z(x) * R(x)
    I(x) = K(x) * T(x) + A(x) * (1 - T(x))

where R is the binary snow location mask, Z the feathered snow intensity
and C the near-white snow color field.

All randomness is drawn from per-purpose child streams of a single seed,
so a (spec, seed) pair regenerates bitwise-identical samples. Images are
channel-first float32 in [0, 1].
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .ppm import to_bytes_image, write_ppm_bytes

MODES = ("haze", "snow", "mixed")

_TAG_CLEAN = 101
_TAG_FIELDS = 202
_TAG_AUGMENT = 303


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, tag))))


@dataclass
class HazeParams:
    transmission: np.ndarray  # (H, W) in (0, 1]
    atmosphere: Union[float, np.ndarray]  # scalar or per-pixel, in [0, 1]


@dataclass
class SnowParams:
    transmission: np.ndarray  # media transmission (H, W) in (0, 1]
    atmosphere: Union[float, np.ndarray]
    snow_mask: np.ndarray  # Z: intensities (H, W) in [0, 1]
    snow_locations: np.ndarray  # R: binary (H, W)
    snow_color: np.ndarray  # C: (3, H, W) near-white
    coverage: float = 0.0  # fraction of pixels with R == 1, reported by the generator


@dataclass
class DegradationSpec:
    """Everything the generators need; all knobs land in the manifest."""

    mode: str = "haze"
    seed: int = 0
    size: int = 32
    blob_grid: int = 4  # coarse cells per side for the smooth fields
    haze_t_range: tuple = (0.25, 0.7)
    snow_t_range: tuple = (0.3, 0.7)
    atmos_range: tuple = (0.7, 1.0)
    streak_len_range: tuple = (2.0, 8.0)  # pixels at size 32, scaled with size
    snow_cov_range: tuple = (0.04, 0.12)
    snow_band_amp: float = 0.5  # relative weight of the periodic band component
    snow_band_cycles: tuple = (2.0, 5.0)
    mixed_haze_ratio: float = 0.5

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.size < 32 or self.size & (self.size - 1):
            raise ValueError(f"size must be a power of two >= 32, got {self.size}")
        if not 0.0 <= self.mixed_haze_ratio <= 1.0:
            raise ValueError(f"mixed_haze_ratio must be in [0, 1], got {self.mixed_haze_ratio}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        spec = cls(**kwargs)
        spec.validate()
        return spec


# -- field generators ----------------------------------------------------------


def _box_blur(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, 1, mode="edge")
    acc = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            acc += p[dy : dy + x.shape[0], dx : dx + x.shape[1]]
    return acc / 9.0


def _smooth_field(rng: np.random.Generator, size: int, grid: int) -> np.ndarray:
    """Random coarse blobs upsampled and blurred, min-max normalized to [0, 1]."""
    coarse = rng.uniform(0.0, 1.0, (grid, grid))
    fld = np.kron(coarse, np.ones((size // grid, size // grid)))
    for _ in range(3):
        fld = _box_blur(fld)
    lo, hi = fld.min(), fld.max()
    if hi - lo < 1e-9:
        return np.full((size, size), 0.5)
    return (fld - lo) / (hi - lo)


def _stamp_snow_mask(rng: np.random.Generator, size: int, target_cov: float,
                     len_range) -> np.ndarray:
    """Stamp wind-aligned streaks and small ellipses until coverage is reached.

    Streaks within one image share a dominant fall direction (plus jitter),
    the way wind-driven snowfall does.
    """
    mask = np.zeros((size, size), dtype=np.float64)
    scale = size / 32.0
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    wind = rng.uniform(0, np.pi)
    for _ in range(4000):
        if mask.mean() >= target_cov:
            break
        if rng.integers(4):  # 3:1 streaks to flakes
            x0, y0 = rng.uniform(0, size, 2)
            angle = wind + rng.normal(0.0, 0.08)
            length = rng.uniform(len_range[0], len_range[1]) * scale
            steps = np.linspace(0.0, length, max(2, int(np.ceil(length * 2))))
            xs = np.clip(np.round(x0 + steps * np.cos(angle)), 0, size - 1).astype(int)
            ys = np.clip(np.round(y0 + steps * np.sin(angle)), 0, size - 1).astype(int)
            mask[ys, xs] = 1.0
        else:
            cy, cx = rng.uniform(0, size, 2)
            ry, rx = rng.uniform(0.8, 2.0, 2) * scale
            hit = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            mask[hit] = 1.0
    return mask


def gen_fields(spec: DegradationSpec):
    """Generate HazeParams or SnowParams for ``spec.mode`` (not "mixed")."""
    spec.validate()
    if spec.mode == "mixed":
        raise ValueError("gen_fields needs a concrete mode; resolve 'mixed' per sample first")
    rng = _rng(spec.seed, _TAG_FIELDS)
    size = spec.size
    atmosphere = float(rng.uniform(*spec.atmos_range))

    if spec.mode == "haze":
        lo, hi = spec.haze_t_range
        t = lo + (hi - lo) * _smooth_field(rng, size, spec.blob_grid)
        t = np.clip(t, 0.2, 1.0)
        return HazeParams(transmission=t, atmosphere=atmosphere)

    # snow veils band like real lake-effect snowfall: a smooth blob base plus
    # an oriented periodic component
    base = _smooth_field(rng, size, spec.blob_grid)
    theta = rng.uniform(0, np.pi)
    cycles = rng.uniform(*spec.snow_band_cycles)
    phase = rng.uniform(0, 2 * np.pi)
    axis = np.arange(size)
    gy, gx = np.meshgrid(axis, axis, indexing="ij")
    band = 0.5 + 0.5 * np.sin(
        2 * np.pi * cycles * (np.cos(theta) * gx + np.sin(theta) * gy) / size + phase
    )
    mix = (base + spec.snow_band_amp * band) / (1.0 + spec.snow_band_amp)
    lo, hi = spec.snow_t_range
    t = lo + (hi - lo) * mix
    t = np.clip(t, 0.2, 1.0)
    target_cov = float(rng.uniform(*spec.snow_cov_range))
    locations = _stamp_snow_mask(rng, size, target_cov, spec.streak_len_range)
    feathered = _box_blur(_box_blur(locations))
    intensity = np.clip(feathered * 2.0, 0.0, 1.0)
    color = 0.92 + 0.08 * rng.uniform(0.0, 1.0, (3, 1, 1)) - 0.04 * rng.uniform(
        0.0, 1.0, (3, size, size)
    )
    color = np.clip(color, 0.8, 1.0)
    return SnowParams(
        transmission=t,
        atmosphere=atmosphere,
        snow_mask=intensity,
        snow_locations=locations,
        snow_color=color,
        coverage=float(locations.mean()),
    )


def gen_clean(seed: int, size: int) -> np.ndarray:
    """Smooth synthetic scene: low-frequency color gradients plus shapes."""
    if size < 32 or size & (size - 1):
        raise ValueError(f"size must be a power of two >= 32, got {size}")
    rng = _rng(seed, _TAG_CLEAN)
    ax = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(ax, ax, indexing="xy")
    img = np.empty((3, size, size))
    for ch in range(3):
        a = rng.uniform(0.3, 0.7)
        b, c, d = rng.uniform(-0.35, 0.35, 3)
        img[ch] = a + b * xx + c * yy + d * xx * yy
    n_shapes = int(rng.integers(2, 6))
    grid_y, grid_x = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for _ in range(n_shapes):
        color = rng.uniform(0.05, 0.95, 3)
        alpha = rng.uniform(0.6, 1.0)
        if rng.integers(2):
            y0, x0 = rng.integers(0, size, 2)
            hgt, wdt = rng.integers(size // 8, size // 2, 2)
            sel = (grid_y >= y0) & (grid_y < y0 + hgt) & (grid_x >= x0) & (grid_x < x0 + wdt)
        else:
            cy, cx = rng.uniform(0, size, 2)
            rad = rng.uniform(size / 10, size / 4)
            sel = (grid_y - cy) ** 2 + (grid_x - cx) ** 2 <= rad**2
        img[:, sel] = (1 - alpha) * img[:, sel] + alpha * color[:, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# -- forward degradation models --------------------------------------------------


def _check_image(img: np.ndarray, what: str):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"{what} must be a (3, H, W) image, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError(f"{what} contains non-finite values")
    return img


def synth_haze(clean: np.ndarray, p: HazeParams) -> np.ndarray:
    """Apply the scattering model exactly; t broadcasts over channels."""
    clean = _check_image(clean, "clean image")
    t = np.asarray(p.transmission)
    if t.shape != clean.shape[1:]:
        raise ValueError(f"transmission shape {t.shape} does not match image {clean.shape[1:]}")
    if t.min() <= 0.0 or t.max() > 1.0:
        raise ValueError(f"transmission must lie in (0, 1], got [{t.min()}, {t.max()}]")
    atmos = np.asarray(p.atmosphere)
    if atmos.min() < 0.0 or atmos.max() > 1.0:
        raise ValueError(f"atmospheric light must lie in [0, 1], got [{atmos.min()}, {atmos.max()}]")
    return (clean * t[None] + atmos * (1.0 - t[None])).astype(clean.dtype)


def synth_snow(clean: np.ndarray, p: SnowParams) -> np.ndarray:
    """Veiling-free composite first, then the transmission veil."""
    clean = _check_image(clean, "clean image")
    loc = np.asarray(p.snow_locations)
    if not np.isin(loc, (0.0, 1.0)).all():
        raise ValueError("snow location mask must be binary")
    z = np.asarray(p.snow_mask)
    if z.min() < 0.0 or z.max() > 1.0:
        raise ValueError(f"snow mask must lie in [0, 1], got [{z.min()}, {z.max()}]")
    t = np.asarray(p.transmission)
    if t.min() <= 0.0 or t.max() > 1.0:
        raise ValueError(f"transmission must lie in (0, 1], got [{t.min()}, {t.max()}]")
    zr = (z * loc)[None]
    veil_free = clean * (1.0 - zr) + np.asarray(p.snow_color) * zr
    out = veil_free * t[None] + np.asarray(p.atmosphere) * (1.0 - t[None])
    return out.astype(clean.dtype)


# -- augmentation ----------------------------------------------------------------


def augment(pair, seed: int):
    """Apply one transform, uniform over {0,90,180,270} x {flip, no flip},
    identically to both images of the pair. Square images only."""
    degraded, clean = pair
    degraded = np.asarray(degraded)
    clean = np.asarray(clean)
    for img in (degraded, clean):
        if img.ndim != 3 or img.shape[1] != img.shape[2]:
            raise ValueError(f"augment needs square (C, S, S) images, got shape {img.shape}")
    rng = _rng(seed, _TAG_AUGMENT)
    quarter_turns = int(rng.integers(4))
    flip = bool(rng.integers(2))

    def apply(img):
        out = np.rot90(img, quarter_turns, axes=(1, 2))
        if flip:
            out = out[:, :, ::-1]
        return np.ascontiguousarray(out)

    return apply(degraded), apply(clean)


# -- dataset assembly -------------------------------------------------------------


@dataclass
class ManifestEntry:
    sample_id: int
    mode: str
    seed: int
    degraded_path: str
    clean_path: str


MANIFEST_NAME = "manifest.tsv"


def _sample_seed(base_seed: int, index: int) -> int:
    return base_seed * 100003 + index


def synthesize_pair(spec: DegradationSpec, mode: str, sample_seed: int):
    """One (degraded, clean) float pair for a resolved mode and seed."""
    clean = gen_clean(sample_seed, spec.size)
    fields = gen_fields(dataclasses.replace(spec, mode=mode, seed=sample_seed))
    degraded = synth_haze(clean, fields) if mode == "haze" else synth_snow(clean, fields)
    return degraded, clean


def make_dataset(spec: DegradationSpec, count: int, out_dir) -> str:
    """Write ``count`` degraded/clean pairs plus a manifest; returns its path.

    The manifest header records the full spec, so the dataset can be
    regenerated bit for bit from the manifest alone.
    """
    spec.validate()
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    os.makedirs(out_dir, exist_ok=True)
    ratio = spec.mixed_haze_ratio
    entries = []
    for i in range(count):
        if spec.mode == "mixed":
            mode = "haze" if int((i + 1) * ratio) > int(i * ratio) else "snow"
        else:
            mode = spec.mode
        seed = _sample_seed(spec.seed, i)
        degraded, clean = synthesize_pair(spec, mode, seed)
        dname = f"{i:04d}_degraded.ppm"
        cname = f"{i:04d}_clean.ppm"
        write_ppm_bytes(os.path.join(out_dir, dname), to_bytes_image(degraded))
        write_ppm_bytes(os.path.join(out_dir, cname), to_bytes_image(clean))
        entries.append(ManifestEntry(i, mode, seed, dname, cname))

    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    lines = [f"# spec {json.dumps(spec.to_dict(), sort_keys=True)}"]
    for e in entries:
        lines.append(f"{e.sample_id}\t{e.mode}\t{e.seed}\t{e.degraded_path}\t{e.clean_path}")
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    tmp = manifest_path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, manifest_path)
    return manifest_path


def load_manifest(path):
    """Parse a manifest into (spec or None, [ManifestEntry])."""
    spec: Optional[DegradationSpec] = None
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("spec "):
                    spec = DegradationSpec.from_dict(json.loads(body[5:]))
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"malformed manifest line: {line!r}")
            entries.append(ManifestEntry(int(parts[0]), parts[1], int(parts[2]), parts[3], parts[4]))
    return spec, entries

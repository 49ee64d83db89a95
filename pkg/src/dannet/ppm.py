"""Binary PPM (P6) and PGM (P5) image I/O, bit-exact and dependency-free.

Float images are channel-first in [0, 1]; bytes are round(v * 255) after
clamping. Writes go to a temp file in the target directory and are
renamed into place, so failures never leave partial files. Header errors
report the byte offset of the offending token.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

MAXVAL = 255


class PpmError(ValueError):
    pass


def _read_token(buf: bytes, pos: int):
    """Skip whitespace/comments, return (token, next_pos)."""
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise PpmError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def _read_header(buf: bytes, magic: bytes):
    tok, pos = _read_token(buf, 0)
    if tok != magic:
        raise PpmError(f"bad magic {tok!r} at byte 0, expected {magic.decode()}")
    dims = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise PpmError(f"non-numeric header field {tok!r} at byte {pos - len(tok)}")
        dims.append(int(tok))
    w, h, maxval = dims
    if maxval != MAXVAL:
        raise PpmError(f"unsupported maxval {maxval} at byte {pos - len(tok)}, only {MAXVAL}")
    if w < 1 or h < 1:
        raise PpmError(f"bad dimensions {w}x{h}")
    # exactly one whitespace byte separates header from raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PpmError(f"missing raster separator at byte {pos}")
    return w, h, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a P6 file into a float32 (3, H, W) array in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    w, h, pos = _read_header(buf, b"P6")
    need = 3 * w * h
    raster = buf[pos : pos + need]
    if len(raster) != need:
        raise PpmError(f"raster truncated at byte {pos + len(raster)}: need {need} bytes")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32) / MAXVAL


def to_bytes_image(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to uint8 via round(v * 255)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * MAXVAL).astype(np.uint8)


def _atomic_write(path, payload: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(path, img: np.ndarray):
    """Write a (3, H, W) float image in [0, 1] as binary P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"write_ppm expects a (3, H, W) image, got shape {img.shape}")
    data = to_bytes_image(img).transpose(1, 2, 0)
    header = f"P6\n{img.shape[2]} {img.shape[1]}\n{MAXVAL}\n".encode("ascii")
    _atomic_write(path, header + data.tobytes())


def write_ppm_bytes(path, img_u8: np.ndarray):
    """Write an already-quantized (3, H, W) uint8 image as binary P6."""
    if img_u8.dtype != np.uint8 or img_u8.ndim != 3 or img_u8.shape[0] != 3:
        raise ValueError(f"write_ppm_bytes expects (3, H, W) uint8, got {img_u8.dtype} {img_u8.shape}")
    header = f"P6\n{img_u8.shape[2]} {img_u8.shape[1]}\n{MAXVAL}\n".encode("ascii")
    _atomic_write(path, header + img_u8.transpose(1, 2, 0).tobytes())


def write_pgm(path, img: np.ndarray):
    """Write an (H, W) float image in [0, 1] as binary P5 grayscale."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"write_pgm expects an (H, W) image, got shape {img.shape}")
    data = np.round(np.clip(img.astype(np.float64), 0.0, 1.0) * MAXVAL).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{MAXVAL}\n".encode("ascii")
    _atomic_write(path, header + data.tobytes())

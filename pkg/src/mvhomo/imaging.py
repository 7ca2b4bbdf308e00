"""Frames, feature maps, pyramids and bilinear warping.

Frames and feature maps are ``(H, W)`` float64 arrays; frames live in ``[0, 1]``.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import geometry
from .errors import FormatError, ImageTooSmall, VersionError, WindowTooLarge

DEFAULT_WINDOW = 9
PYRAMID_LEVELS = 3
# BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


def check_frame(frame) -> np.ndarray:
    f = np.asarray(frame, dtype=float)
    if f.ndim != 2 or f.size == 0:
        raise ValueError(f"frame must be a non-empty 2-D array, got shape {f.shape}")
    if not np.all(np.isfinite(f)) or f.min() < 0.0 or f.max() > 1.0:
        raise ValueError("frame values must be finite and within [0, 1]")
    return f


def to_gray(image) -> np.ndarray:
    """BT.601 luma of an RGB(A) array; 2-D input passes through."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] in (3, 4):
        return img[..., :3] @ LUMA
    raise ValueError(f"unsupported image shape {img.shape}")


def bilinear_sample(img: np.ndarray, mx: np.ndarray, my: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at float coordinates.

    Returns ``(values, valid)``; ``valid`` is 1.0 where every tap carrying weight lies
    inside the image. Invalid samples are 0.
    """
    h, w = img.shape
    valid = (mx >= 0) & (mx <= w - 1) & (my >= 0) & (my <= h - 1)
    x0 = np.clip(np.floor(mx), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(my), 0, max(h - 2, 0)).astype(np.intp)
    fx = np.where(valid, mx - x0, 0.0)
    fy = np.where(valid, my - y0, 0.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    out = (1.0 - fy) * top + fy * bottom
    return np.where(valid, out, 0.0), valid.astype(float)


def clamped_sample(img: np.ndarray, mx: np.ndarray, my: np.ndarray) -> np.ndarray:
    """Bilinear sampling with coordinates clamped to the image (edge replication)."""
    h, w = img.shape
    values, _ = bilinear_sample(img, np.clip(mx, 0, w - 1), np.clip(my, 0, h - 1))
    return values


def bilinear_warp(src, h) -> tuple[np.ndarray, np.ndarray]:
    """Backward warp: ``out(x) = src(h^-1 x)``, with a validity mask."""
    src = np.asarray(src, dtype=float)
    if src.ndim != 2 or src.size == 0:
        raise ValueError("warp source must be a non-empty 2-D array")
    hinv = geometry.invert(h)
    mx, my = geometry.map_grid(hinv, src.shape[1], src.shape[0])
    return bilinear_sample(src, mx, my)


def project_features(frame, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Fixed feature projector: subtract the local ``window x window`` mean.

    Borders use replicate padding. The result is blind to global intensity offsets.
    """
    f = np.asarray(frame, dtype=float)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    if window > min(f.shape):
        raise WindowTooLarge(f"window {window} exceeds image size {f.shape[1]}x{f.shape[0]}")
    return f - ndimage.uniform_filter(f, size=window, mode="nearest")


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box average; odd trailing rows/columns are replicated first."""
    h, w = img.shape
    if h % 2:
        img = np.vstack([img, img[-1:]])
    if w % 2:
        img = np.hstack([img, img[:, -1:]])
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def build_pyramid(img, levels: int = PYRAMID_LEVELS) -> list[np.ndarray]:
    """Box-filter pyramid ordered coarse to fine (the last entry is ``img`` itself)."""
    img = np.asarray(img, dtype=float)
    need = 4 * 2 ** (levels - 1)
    if min(img.shape) < need:
        raise ImageTooSmall(f"pyramid of {levels} levels needs at least {need}x{need} pixels")
    out = [img]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out[::-1]


def level_shape(width: int, height: int, level: int, levels: int = PYRAMID_LEVELS) -> tuple[int, int]:
    k = 2 ** (levels - 1 - level)
    return math.ceil(width / k), math.ceil(height / k)


def gradients(f) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicated borders."""
    f = np.asarray(f, dtype=float)
    p = np.pad(f, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


# --- frame and mask files -------------------------------------------------

def read_frame(path) -> np.ndarray:
    """Load an 8-bit PNG/PGM (colour is converted to luma) as floats in ``[0, 1]``."""
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P", "CMYK", "LA"):
            arr = to_gray(np.asarray(im.convert("RGB"), dtype=float))
        elif im.mode in ("L", "1"):
            arr = np.asarray(im.convert("L"), dtype=float)
        else:
            raise FormatError(f"unsupported image mode {im.mode!r} in {path}")
    return arr / 255.0


def to_uint8(values) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def write_frame(path, frame) -> None:
    """Write ``frame`` (values in ``[0, 1]``) as 8-bit PNG or binary PGM by extension."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    Image.fromarray(to_uint8(frame), mode="L").save(path, format=fmt)


write_mask_png = write_frame

MASKF_MAGIC = b"MSKF"
_MASKF_HEADER = struct.Struct("<4sII")


def write_maskf(path, mask) -> None:
    """Lossless float32 mask: magic ``MSKF``, u32 width, u32 height, row-major f32 LE."""
    m = np.asarray(mask, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MASKF_HEADER.pack(MASKF_MAGIC, m.shape[1], m.shape[0]))
        fh.write(np.ascontiguousarray(m).tobytes())


def read_maskf(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _MASKF_HEADER.size:
        raise FormatError("truncated mask header", offset=len(data))
    magic, width, height = _MASKF_HEADER.unpack_from(data)
    if magic != MASKF_MAGIC:
        raise VersionError(f"unknown mask magic {magic!r}", offset=0)
    need = _MASKF_HEADER.size + 4 * width * height
    if len(data) != need:
        raise FormatError(f"mask payload should be {need} bytes, file has {len(data)}", offset=min(len(data), need))
    return np.frombuffer(data, dtype="<f4", offset=_MASKF_HEADER.size).reshape(height, width).astype(float)

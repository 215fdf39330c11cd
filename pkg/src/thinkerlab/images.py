"""Pixel-convention conversions and small color helpers.

Observations move through three numeric conventions:

* ``bytes``  -- uint8 in [0, 255], what the environment renders
* ``unit``   -- float32 in [0, 1], what the policy network consumes
* ``signed`` -- float32 in [-1, 1], what the translator networks consume

Round trips are exact up to the 1/255 quantization of the byte grid.
"""

from __future__ import annotations

import enum

import numpy as np


class Convention(enum.Enum):
    BYTES = "bytes"
    UNIT = "unit"
    SIGNED = "signed"


def bytes_to_unit(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 byte image, got dtype {img.dtype}")
    return img.astype(np.float32) / np.float32(255.0)


def unit_to_bytes(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float32)
    return np.clip(np.rint(arr * 255.0), 0.0, 255.0).astype(np.uint8)


def unit_to_signed(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) * np.float32(2.0) - np.float32(1.0)


def signed_to_unit(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float32) + np.float32(1.0)) / np.float32(2.0)


def convert(img: np.ndarray, src: Convention, dst: Convention) -> np.ndarray:
    """Convert between any two conventions via the unit representation."""
    if src == dst:
        return img
    if src == Convention.BYTES:
        unit = bytes_to_unit(img)
    elif src == Convention.SIGNED:
        unit = signed_to_unit(img)
    else:
        unit = np.asarray(img, dtype=np.float32)
    if dst == Convention.BYTES:
        return unit_to_bytes(unit)
    if dst == Convention.SIGNED:
        return unit_to_signed(unit)
    return unit


def infer_convention(img: np.ndarray) -> Convention:
    """Infer bytes vs unit vs signed from dtype and value range.

    uint8 arrays are bytes; float arrays with any negative entry are signed,
    otherwise unit. Values outside the admissible range raise.
    """
    if img.dtype == np.uint8:
        return Convention.BYTES
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"unsupported image dtype {img.dtype}")
    lo = float(img.min()) if img.size else 0.0
    hi = float(img.max()) if img.size else 0.0
    if lo < -1.0 - 1e-5 or hi > 255.0:
        raise ValueError(f"pixel values out of range [{lo}, {hi}]")
    if lo < -1e-5:
        if hi > 1.0 + 1e-5:
            raise ValueError(f"pixel values out of range [{lo}, {hi}]")
        return Convention.SIGNED
    if hi > 1.0 + 1e-5:
        raise ValueError(f"float image with values in [{lo}, {hi}] is neither unit nor signed")
    return Convention.UNIT


def to_unit(img: np.ndarray) -> np.ndarray:
    """Convert an image in any convention to unit floats."""
    return convert(img, infer_convention(img), Convention.UNIT)


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized hue/saturation/value to RGB; all components in [0, 1].

    Output shape is ``broadcast(h, s, v).shape + (3,)``.
    """
    h, s, v = np.broadcast_arrays(np.asarray(h, float), np.asarray(s, float), np.asarray(v, float))
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    rgb = np.empty(h.shape + (3,), dtype=float)
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    for idx, (r, g, b) in enumerate(choices):
        sel = i == idx
        rgb[sel, 0] = r[sel]
        rgb[sel, 1] = g[sel]
        rgb[sel, 2] = b[sel]
    return rgb


def rgb_to_hue(rgb: np.ndarray) -> np.ndarray:
    """Hue channel in [0, 1) of an RGB array with a trailing channel axis."""
    rgb = np.asarray(rgb, dtype=float)
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    hue = np.zeros(mx.shape, dtype=float)
    nz = delta > 0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    rmax = nz & (mx == r)
    gmax = nz & (mx == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    hue[rmax] = ((g[rmax] - b[rmax]) / delta[rmax]) % 6.0
    hue[gmax] = (b[gmax] - r[gmax]) / delta[gmax] + 2.0
    hue[bmax] = (r[bmax] - g[bmax]) / delta[bmax] + 4.0
    return hue / 6.0

"""Image resampling helpers: area averaging, nearest neighbor, bicubic.

All functions take and return channel-first float64 arrays.  Bicubic
uses the classic cubic convolution kernel (a = -0.5), widened and
renormalized when shrinking so that constants are preserved exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def area_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsample by an integer factor."""
    c, h, w = img.shape
    if h % factor or w % factor:
        raise ShapeError(f"extents {h}x{w} not divisible by factor {factor}")
    return img.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def nearest_upsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Pixel-replication upsample by an integer factor."""
    return np.repeat(np.repeat(img, factor, axis=1), factor, axis=2)


def _cubic(t: np.ndarray) -> np.ndarray:
    # Cubic convolution weights, a = -0.5 (Catmull-Rom).
    a = -0.5
    t = np.abs(t)
    out = np.zeros_like(t)
    m1 = t <= 1.0
    m2 = (t > 1.0) & (t < 2.0)
    out[m1] = (a + 2.0) * t[m1] ** 3 - (a + 3.0) * t[m1] ** 2 + 1.0
    out[m2] = a * t[m2] ** 3 - 5.0 * a * t[m2] ** 2 + 8.0 * a * t[m2] - 4.0 * a
    return out


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix applying 1-D bicubic resampling."""
    scale = n_in / n_out
    # When shrinking, stretch the kernel by the scale factor (antialiasing).
    kscale = max(scale, 1.0)
    radius = 2.0 * kscale
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = int(np.floor(center - radius))
        hi = int(np.ceil(center + radius))
        idx = np.arange(lo, hi + 1)
        wts = _cubic((center - idx) / kscale)
        # Clamp taps that fall off the edge onto the border sample.
        idx = np.clip(idx, 0, n_in - 1)
        total = wts.sum()
        for j, wgt in zip(idx, wts):
            mat[i, j] += wgt / total
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of a CxHxW image to (C, out_h, out_w)."""
    img = np.asarray(img, dtype=np.float64)
    rows = _resize_matrix(img.shape[1], out_h)
    cols = _resize_matrix(img.shape[2], out_w)
    tmp = np.einsum("oh,chw->cow", rows, img)
    return np.einsum("pw,cow->cop", cols, tmp)


def bicubic_down(img: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = img.shape
    if h % factor or w % factor:
        raise ShapeError(f"extents {h}x{w} not divisible by factor {factor}")
    return bicubic_resize(img, h // factor, w // factor)


def bicubic_up(img: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = img.shape
    return bicubic_resize(img, h * factor, w * factor)

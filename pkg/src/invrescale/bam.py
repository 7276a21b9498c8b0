"""Boundary mask generation: a generalized single-threshold edge pipeline.

The stages are blur -> gradient -> magnitude -> non-maximum suppression
-> threshold -> quantization.  With binary quantization and the 2-norm
magnitude this reduces to a classic single-threshold (no hysteresis)
Canny detector; the knobs worth sweeping are the gradient norm, the
threshold, and the quantization depth.

Images enter in 8-bit luma units: RGB arrays hold values in [0, 255]
and the threshold is expressed on the same scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

NORM_ONE = "l1"
NORM_TWO = "l2"


@dataclass(frozen=True)
class BamConfig:
    """Knobs of the boundary pipeline.

    sigma      Gaussian blur standard deviation, in pixels.
    threshold  magnitude below which boundary response is discarded (luma units).
    bits       quantization depth; levels occupy {0, ..., 2**bits - 1}.
    norm       "l1" (|Gx|+|Gy|) or "l2" (sqrt(Gx^2+Gy^2)).
    """

    sigma: float = 1.4
    threshold: float = 50.0
    bits: int = 1
    norm: str = NORM_TWO

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.threshold < 0:
            raise ValueError(f"threshold must be nonnegative, got {self.threshold}")
        if self.bits not in (1, 2, 3):
            raise ValueError(f"bits must be 1, 2, or 3, got {self.bits}")
        if self.norm not in (NORM_ONE, NORM_TWO):
            raise ValueError(f"norm must be {NORM_ONE!r} or {NORM_TWO!r}, got {self.norm!r}")


@dataclass
class BoundaryMap:
    """Quantized boundary levels plus the pre-quantization magnitudes.

    ``levels`` is 1xHxW of integers in [0, 2**bits - 1]; a level is zero
    exactly where ``sparse`` (the thresholded magnitude map) is zero.
    ``sparse`` is retained because the loss weighting consumes the raw
    magnitudes, not the quantized levels.
    """

    levels: np.ndarray
    sparse: np.ndarray
    config: BamConfig = field(default_factory=BamConfig)


def to_luma(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of a 3xHxW image: 0.299 R + 0.587 G + 0.114 B."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"to_luma expects 3xHxW, got {img.shape}")
    return (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def gauss_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, truncated at ceil(3*sigma), reflect padding.

    The kernel is renormalized after truncation so DC gain is exactly 1.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    k = _gauss_kernel(sigma)
    r = (len(k) - 1) // 2
    padded = np.pad(img, ((0, 0), (r, r), (r, r)), mode="reflect")
    tmp = np.zeros((img.shape[0], img.shape[1], padded.shape[2]))
    for i, wgt in enumerate(k):
        tmp += wgt * padded[:, i : i + img.shape[1], :]
    out = np.zeros_like(img)
    for j, wgt in enumerate(k):
        out += wgt * tmp[:, :, j : j + img.shape[2]]
    return out


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def sobel_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives with reflect padding.

    Gx differentiates along columns (responds to vertical edges), Gy
    along rows (responds to horizontal edges).
    """
    img = np.asarray(img, dtype=np.float64)
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    h, w = img.shape[1], img.shape[2]
    for i in range(3):
        for j in range(3):
            window = padded[:, i : i + h, j : j + w]
            gx += _SOBEL_X[i, j] * window
            gy += _SOBEL_Y[i, j] * window
    return gx, gy


def magnitude(gx: np.ndarray, gy: np.ndarray, norm: str = NORM_TWO) -> np.ndarray:
    """Gradient magnitude under the chosen norm."""
    if gx.shape != gy.shape:
        raise ShapeError(f"gradient shape mismatch: {gx.shape} vs {gy.shape}")
    if norm == NORM_TWO:
        return np.hypot(gx, gy)
    if norm == NORM_ONE:
        return np.abs(gx) + np.abs(gy)
    raise ValueError(f"unknown norm {norm!r}")


def nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Thin ridges: keep a pixel iff its magnitude is >= both neighbors
    along the gradient direction quantized to 0/45/90/135 degrees.

    Ties are kept (>=) so single-pixel ridges survive; border pixels are
    always suppressed.
    """
    if not (mag.shape == gx.shape == gy.shape):
        raise ShapeError(f"nms shape mismatch: {mag.shape}, {gx.shape}, {gy.shape}")
    m = mag[0] if mag.ndim == 3 else mag
    dx = gx[0] if gx.ndim == 3 else gx
    dy = gy[0] if gy.ndim == 3 else gy

    angle = np.degrees(np.arctan2(dy, dx)) % 180.0
    out = np.zeros_like(m)
    h, w = m.shape
    if h < 3 or w < 3:
        return out[None] if mag.ndim == 3 else out

    inner = np.s_[1 : h - 1, 1 : w - 1]
    a = angle[inner]
    c = m[inner]

    horiz = (a < 22.5) | (a >= 157.5)  # gradient ~ horizontal: compare left/right
    diag = (a >= 22.5) & (a < 67.5)  # compare down-right / up-left
    vert = (a >= 67.5) & (a < 112.5)  # compare up/down
    anti = (a >= 112.5) & (a < 157.5)  # compare down-left / up-right

    n1 = np.where(
        horiz,
        m[1 : h - 1, 2:w],
        np.where(diag, m[2:h, 2:w], np.where(vert, m[2:h, 1 : w - 1], m[2:h, 0 : w - 2])),
    )
    n2 = np.where(
        horiz,
        m[1 : h - 1, 0 : w - 2],
        np.where(diag, m[0 : h - 2, 0 : w - 2], np.where(vert, m[0 : h - 2, 1 : w - 1], m[0 : h - 2, 2:w])),
    )
    keep = (c >= n1) & (c >= n2)
    out[inner] = np.where(keep, c, 0.0)
    return out[None] if mag.ndim == 3 else out


def sparsify(thinned: np.ndarray, threshold: float) -> np.ndarray:
    """Zero out responses below the threshold (>= is kept)."""
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    return np.where(thinned >= threshold, thinned, 0.0)


def quantify(sparse: np.ndarray, bits: int, threshold: float | None = None) -> np.ndarray:
    """Map nonzero magnitudes uniformly from [threshold, max] onto {1..2**bits - 1}.

    Zeros stay zero.  The default threshold is the smallest nonzero
    magnitude, which coincides with the sparsify threshold whenever some
    pixel sits exactly at it.  A degenerate range (max == threshold)
    sends every nonzero to level 1.
    """
    if bits not in (1, 2, 3):
        raise ValueError(f"bits must be 1, 2, or 3, got {bits}")
    sparse = np.asarray(sparse, dtype=np.float64)
    levels = np.zeros(sparse.shape, dtype=np.int64)
    nz = sparse > 0
    if not nz.any():
        return levels
    lo = float(threshold) if threshold is not None else float(sparse[nz].min())
    hi = float(sparse.max())
    top = (1 << bits) - 1
    if hi <= lo:
        levels[nz] = 1
        return levels
    scaled = 1 + np.floor((sparse[nz] - lo) / (hi - lo) * top)
    levels[nz] = np.clip(scaled, 1, top).astype(np.int64)
    return levels


def bam_generate(img: np.ndarray, config: BamConfig = BamConfig()) -> BoundaryMap:
    """Run the full boundary pipeline on an RGB or luma image in [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    luma = to_luma(img) if img.shape[0] == 3 else img
    blurred = gauss_blur(luma, config.sigma)
    gx, gy = sobel_gradient(blurred)
    mag = magnitude(gx, gy, config.norm)
    thinned = nms(mag, gx, gy)
    sparse = sparsify(thinned, config.threshold)
    levels = quantify(sparse, config.bits, threshold=config.threshold)
    return BoundaryMap(levels=levels, sparse=sparse, config=config)


def levels_to_unit(levels: np.ndarray, bits: int) -> np.ndarray:
    """Rescale integer levels to [0, 1] (level / (2**bits - 1))."""
    return levels.astype(np.float64) / float((1 << bits) - 1)

"""Orthonormal 2-D Haar analysis/synthesis.

Each 2x2 block with pixels a,b (top row) and c,d (bottom row) maps to

    A = (a+b+c+d)/2    H = (a-b+c-d)/2    V = (a+b-c-d)/2    D = (a-b-c+d)/2

which is an orthogonal transform (the /2 keeps it orthonormal, so the
squared norm of the image equals the squared norm of the sub-bands and
the inverse is the transpose).  ``low`` carries the A band, ``high``
carries [H, V, D] stacked channel-wise.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


class WaveletPair(NamedTuple):
    low: np.ndarray  # (C, H/2, W/2)
    high: np.ndarray  # (3C, H/2, W/2)


def _check_even(x):
    if x.ndim != 3:
        raise ShapeError(f"expected CxHxW input, got shape {x.shape}")
    if x.shape[1] % 2:
        raise ShapeError(f"height {x.shape[1]} is odd; Haar analysis needs even extents")
    if x.shape[2] % 2:
        raise ShapeError(f"width {x.shape[2]} is odd; Haar analysis needs even extents")


def _stack(x: np.ndarray) -> np.ndarray:
    """(C,H,W) -> (4C,H/2,W/2) as [A; H; V; D] channel groups."""
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    low = (a + b + c + d) / 2.0
    hh = (a - b + c - d) / 2.0
    vv = (a + b - c - d) / 2.0
    dd = (a - b - c + d) / 2.0
    return np.concatenate([low, hh, vv, dd], axis=0)


def _unstack(s: np.ndarray) -> np.ndarray:
    """(4C,H/2,W/2) -> (C,H,W); exact inverse of :func:`_stack`."""
    c4 = s.shape[0]
    c = c4 // 4
    low, hh, vv, dd = s[:c], s[c : 2 * c], s[2 * c : 3 * c], s[3 * c :]
    h2, w2 = s.shape[1], s.shape[2]
    out = np.empty((c, h2 * 2, w2 * 2), dtype=np.float64)
    out[:, 0::2, 0::2] = (low + hh + vv + dd) / 2.0
    out[:, 0::2, 1::2] = (low - hh + vv - dd) / 2.0
    out[:, 1::2, 0::2] = (low + hh - vv - dd) / 2.0
    out[:, 1::2, 1::2] = (low - hh - vv + dd) / 2.0
    return out


def haar_forward(x: np.ndarray) -> WaveletPair:
    """Split a CxHxW image into low (A) and high ([H,V,D]) sub-bands."""
    x = np.asarray(x, dtype=np.float64)
    _check_even(x)
    s = _stack(x)
    c = x.shape[0]
    return WaveletPair(low=s[:c], high=s[c:])


def haar_inverse(pair: WaveletPair) -> np.ndarray:
    """Exact inverse of :func:`haar_forward`."""
    low = np.asarray(pair[0], dtype=np.float64)
    high = np.asarray(pair[1], dtype=np.float64)
    if high.shape[0] != 3 * low.shape[0]:
        raise ShapeError(
            f"high band must have 3x the low band's channels, got {high.shape[0]} vs {low.shape[0]}"
        )
    if high.shape[1:] != low.shape[1:]:
        raise ShapeError(f"sub-band spatial mismatch: {low.shape[1:]} vs {high.shape[1:]}")
    return _unstack(np.concatenate([low, high], axis=0))


# -- tape-recorded variants -----------------------------------------------------
#
# The transform is orthonormal, so the adjoint of analysis is synthesis
# and vice versa; both directions are registered as single primitives.


def haar_forward_t(x: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    x = ad.constant(x)
    _check_even(x.data)
    out = _stack(x.data)
    node = ad.make_node(out, (x,), lambda g: ad._accum(x, _unstack(g)), "haar_forward")
    c = x.data.shape[0]
    return ad.narrow_channels(node, 0, c), ad.narrow_channels(node, c, 3 * c)


def haar_inverse_t(low: ad.Tensor, high: ad.Tensor) -> ad.Tensor:
    low, high = ad.constant(low), ad.constant(high)
    if high.data.shape[0] != 3 * low.data.shape[0]:
        raise ShapeError(
            f"high band must have 3x the low band's channels, "
            f"got {high.data.shape[0]} vs {low.data.shape[0]}"
        )
    s = ad.concat_channels([low, high])
    return ad.make_node(_unstack(s.data), (s,), lambda g: ad._accum(s, _stack(g)), "haar_inverse")

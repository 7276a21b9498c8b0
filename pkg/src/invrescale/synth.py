"""Deterministic synthetic test images.

Small RGB images mixing smooth gradients, sharp-edged shapes, and a
little texture: enough boundary structure to exercise the edge pipeline
and make plain interpolation a beatable baseline, generated without any
external data.
"""

from __future__ import annotations

import numpy as np


def synthetic_image(seed: int, size: int = 64) -> np.ndarray:
    """One (3, size, size) image in [0, 1], fully determined by the seed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")

    # Smooth background gradient in a random direction per channel.
    img = np.empty((3, size, size), dtype=np.float64)
    for ch in range(3):
        gx, gy = rng.uniform(-1.0, 1.0, size=2)
        base = gx * xx / size + gy * yy / size
        lo, hi = base.min(), base.max()
        span = hi - lo if hi > lo else 1.0
        img[ch] = 0.2 + 0.3 * (base - lo) / span

    # Sharp-edged rectangles and disks.
    for _ in range(int(rng.integers(3, 6))):
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.uniform() < 0.5:
            h0 = int(rng.integers(0, size - 4))
            w0 = int(rng.integers(0, size - 4))
            h1 = int(rng.integers(h0 + 3, min(size, h0 + size // 2) + 1))
            w1 = int(rng.integers(w0 + 3, min(size, w0 + size // 2) + 1))
            img[:, h0:h1, w0:w1] = color[:, None, None]
        else:
            cy, cx = rng.integers(4, size - 4, size=2)
            r = int(rng.integers(3, size // 4))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            img[:, mask] = color[:, None]

    # Mild sinusoidal texture on one channel.
    ch = int(rng.integers(0, 3))
    freq = rng.uniform(0.2, 0.6)
    img[ch] += 0.05 * np.sin(freq * xx + rng.uniform(0, np.pi))

    return np.clip(img, 0.0, 1.0)


def synthetic_corpus(count: int, size: int = 64, seed: int = 0) -> list:
    return [synthetic_image(seed * 1000 + i, size) for i in range(count)]


def textured_image(seed: int, size: int = 32, occluders: int = 1) -> np.ndarray:
    """Full-coverage period-4 square-wave texture plus solid occluders.

    Plain interpolation destroys texture at this period while the
    pattern stays locally predictable from the half-resolution band, so
    these images separate learned rescaling from fixed-kernel baselines.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.empty((3, size, size), dtype=np.float64)

    base = yy if seed % 2 else xx
    phase = int(rng.integers(0, 4))
    stripe = ((base + phase) // 2) % 2
    dark = rng.uniform(0.02, 0.25, size=3)
    bright = rng.uniform(0.75, 0.98, size=3)
    for ch in range(3):
        img[ch] = np.where(stripe, dark[ch], bright[ch])

    for _ in range(occluders):
        color = rng.uniform(0.35, 0.65, size=3)
        cy, cx = rng.integers(6, size - 6, size=2)
        r = int(rng.integers(4, 7))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        for ch in range(3):
            img[ch][mask] = color[ch]

    return np.clip(img, 0.0, 1.0)


def textured_corpus(count: int, size: int = 32, seed: int = 40) -> list:
    return [textured_image(seed + i, size) for i in range(count)]

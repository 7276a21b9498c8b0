"""Training objectives and the boundary-aware weighting schedule.

All losses are normalized per element so their values are resolution
independent, and each term carries its own weight so the total is a
plain sum.  The perceptual term is intentionally absent: its weight
stays in :class:`LossWeights` for config compatibility but the
contribution is fixed at zero rather than approximated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

# Per-element negative log-density floor of a standard normal: 0.5*log(2*pi).
LATENT_FLOOR = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LossWeights:
    """Term weights and the schedule split point alpha."""

    lambda1: float = 2.0  # low-resolution fidelity (squared error)
    lambda2: float = 2.0  # reconstruction fidelity (weighted absolute error)
    lambda3: float = 1.0  # perceptual term; retained in config, contributes 0 here
    lambda4: float = 16.0  # boundary-map fidelity (squared error)
    lambda5: float = 4.0  # latent normality (negative log-likelihood)
    alpha: float = 0.3  # fraction of epochs trained with uniform weights

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass
class LossReport:
    """Weighted per-term contributions of one step; total is their sum."""

    forw: float
    back: float
    bam: float
    latent: float
    total: float


CSV_HEADER = "step,lr,forw,back,bam,latent,total"


def csv_row(step: int, lr: float, report: LossReport) -> str:
    return (
        f"{step},{lr:.10g},{report.forw:.10g},{report.back:.10g},"
        f"{report.bam:.10g},{report.latent:.10g},{report.total:.10g}"
    )


def baw_is_late(e_cur: int, e_max: int, alpha: float) -> bool:
    """True once e_cur reaches the alpha fraction of e_max.

    The early branch applies iff e_cur < alpha*e_max, strictly.  The
    comparison is done as e_cur/e_max < alpha so that integer boundary
    cases (e.g. 30 of 100 at alpha=0.3) land on the late branch instead
    of leaking through float rounding of the product.
    """
    if e_max <= 0:
        raise ValueError(f"e_max must be positive, got {e_max}")
    return not (e_cur / e_max < alpha)


def baw_weight(sparse: np.ndarray, e_cur: int, e_max: int, weights: LossWeights) -> np.ndarray:
    """Per-pixel weights for the reconstruction loss.

    Early phase: constant lambda2.  Late phase: lambda2 plus the
    boundary magnitudes normalized to [0, 1]; a flat magnitude map
    degenerates to the constant lambda2.
    """
    sparse = np.asarray(sparse, dtype=np.float64)
    base = np.full(sparse.shape, weights.lambda2, dtype=np.float64)
    if not baw_is_late(e_cur, e_max, weights.alpha):
        return base
    lo = float(sparse.min())
    hi = float(sparse.max())
    if hi == lo:
        return base
    return base + (sparse - lo) / (hi - lo)


def _pair(a, b, name):
    a, b = ad.constant(a), ad.constant(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name}: shape mismatch {a.data.shape} vs {b.data.shape}")
    return a, b


def loss_forw(y_forw, y_target, lambda1: float) -> ad.Tensor:
    """lambda1 times the mean squared error against the target LR image."""
    y_forw, y_target = _pair(y_forw, y_target, "loss_forw")
    diff = y_forw - y_target
    return (diff * diff).mean() * lambda1


def loss_back(x_back, x, pixel_weights) -> ad.Tensor:
    """Mean of weight * |x_back - x| over all elements.

    ``pixel_weights`` comes from :func:`baw_weight`, upsampled to the
    image resolution; a 1xHxW map is broadcast over channels here.
    """
    x_back, x = _pair(x_back, x, "loss_back")
    w = np.asarray(pixel_weights, dtype=np.float64)
    if w.shape != x.data.shape:
        if w.shape[1:] != x.data.shape[1:]:
            raise ShapeError(f"loss_back: weight map {w.shape} does not cover image {x.data.shape}")
        w = np.broadcast_to(w, x.data.shape).copy()
    return ((x_back - x).abs() * ad.constant(w)).mean()


def loss_bam(b_forw, b_target, lambda4: float) -> ad.Tensor:
    """lambda4 times the mean squared error, averaged over levels.

    Targets are quantized boundary levels rescaled to [0, 1].
    """
    if len(b_forw) != len(b_target):
        raise ShapeError(f"loss_bam: {len(b_forw)} predictions vs {len(b_target)} targets")
    if not b_forw:
        raise ValueError("loss_bam needs at least one level")
    acc = None
    for got, want in zip(b_forw, b_target):
        got, want = _pair(got, want, "loss_bam")
        diff = got - want
        mse = (diff * diff).mean()
        acc = mse if acc is None else acc + mse
    return acc * (lambda4 / len(b_forw))


def loss_latent(zs, lambda5: float) -> ad.Tensor:
    """lambda5 times the mean standard-normal negative log-density of Z.

    Per element the density term is 0.5*(z^2 + log 2 pi); the mean runs
    over every element of every level.
    """
    zs = [ad.constant(z) for z in zs]
    if not zs:
        raise ValueError("loss_latent needs at least one latent tensor")
    total_n = sum(z.data.size for z in zs)
    acc = None
    for z in zs:
        s = (z * z).sum()
        acc = s if acc is None else acc + s
    return (acc * (0.5 / total_n) + 0.5 * math.log(2.0 * math.pi)) * lambda5


def total_loss(forw, back, bam, latent) -> tuple[ad.Tensor, LossReport]:
    """Sum the already-weighted terms; the report keeps them for logging."""
    total = forw + back + bam + latent
    report = LossReport(
        forw=forw.item(),
        back=back.item(),
        bam=bam.item(),
        latent=latent.item(),
        total=total.item(),
    )
    return total, report

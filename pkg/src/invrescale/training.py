"""Adam, the cosine LR schedule, and the seeded desk-scale training loop.

One tape is built per step: the image goes forward through the flow,
the reconstruction comes back through the inverse with freshly sampled
latents (matching inference conditions), the weighted losses are
summed, and a single backward pass feeds Adam.  Everything is driven by
one seeded generator, so a (seed, data, config) triple fixes the final
parameters bit-exactly on a given platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .bam import BamConfig, bam_generate, levels_to_unit
from .coupling import MODE_GENERAL, FlowModel, flow_forward, flow_inverse, sample_latents
from .errors import ShapeError, TrainingError
from .losses import (
    CSV_HEADER,
    LossReport,
    LossWeights,
    baw_weight,
    csv_row,
    loss_back,
    loss_bam,
    loss_forw,
    loss_latent,
    total_loss,
)
from .resample import area_downsample, bicubic_down, nearest_upsample


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    bam: BamConfig = field(default_factory=BamConfig)
    epochs: int = 100
    steps_per_epoch: int = 20
    lr_max: float = 2e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    batch_size: int = 4
    crop: int = 32
    levels: int = 1
    sigma_z: float = 1.0
    grad_clip: float = 5.0
    mode: str = MODE_GENERAL

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr_min < self.lr_max:
            raise ValueError(f"need lr_min < lr_max, got {self.lr_min} >= {self.lr_max}")
        if self.crop % (1 << self.levels):
            raise ValueError(f"crop {self.crop} not divisible by 2^{self.levels}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


_CONFIG_KEYS = {
    "lambda1": float, "lambda2": float, "lambda3": float, "lambda4": float,
    "lambda5": float, "alpha": float,
    "bam_sigma": float, "bam_threshold": float, "bam_bits": int, "bam_norm": str,
    "epochs": int, "steps_per_epoch": int, "lr_max": float, "lr_min": float,
    "beta1": float, "beta2": float, "eps": float, "seed": int,
    "batch_size": int, "crop": int, "levels": int, "sigma_z": float,
    "grad_clip": float, "mode": str,
}


def parse_config(text: str) -> TrainConfig:
    """Build a TrainConfig from flat ``key = value`` lines.

    Every key is optional; unknown keys are rejected.  Blank lines and
    '#' comments are ignored.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        raw[key] = _CONFIG_KEYS[key](val)

    weight_keys = {k: raw.pop(k) for k in list(raw) if k.startswith("lambda") or k == "alpha"}
    weights = LossWeights(**weight_keys)
    bam_keys = {k[4:]: raw.pop(k) for k in list(raw) if k.startswith("bam_")}
    bam = BamConfig(**bam_keys)
    return TrainConfig(weights=weights, bam=bam, **raw)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def cosine_lr(t: int, t_max: int, lr_max: float = 2e-4, lr_min: float = 1e-6) -> float:
    """Half-cosine decay from lr_max (t=0) to lr_min (t=t_max).

    The endpoints are returned exactly; t past t_max clamps to lr_min.
    """
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return lr_max
    if t >= t_max:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / t_max))


# -- optimizer ----------------------------------------------------------------


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter."""

    m: list
    v: list
    t: int = 0
    names: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: FlowModel, beta1=0.9, beta2=0.999, eps=1e-8):
        named = model.named_params()
        return cls(
            m=[np.zeros_like(p.data) for _, p in named],
            v=[np.zeros_like(p.data) for _, p in named],
            names=[name for name, _ in named],
            beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(params, grads, state: OptimizerState, lr: float):
    """Standard bias-corrected Adam update, in place.

    A non-finite gradient aborts the step (parameters untouched) and
    names the offending parameter.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, state for {len(state.m)}"
        )
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = state.names[i] if i < len(state.names) else f"param[{i}]"
            raise TrainingError(f"non-finite gradient at {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


# -- data and targets ----------------------------------------------------------


@dataclass
class SampleTargets:
    y_target: np.ndarray  # LR target, bicubic
    b_targets: list  # per level, [0,1] quantized boundary targets
    weight_map: np.ndarray  # (1, H, W), boundary-aware pixel weights


def _prepare_targets(x: np.ndarray, cfg: TrainConfig, e_cur: int) -> SampleTargets:
    y_target = bicubic_down(x, 1 << cfg.levels)
    b_targets = []
    sparse_lvl1 = None
    for l in range(1, cfg.levels + 1):
        small = area_downsample(x, 1 << l) * 255.0
        bmap = bam_generate(small, cfg.bam)
        b_targets.append(levels_to_unit(bmap.levels, cfg.bam.bits))
        if l == 1:
            sparse_lvl1 = bmap.sparse
    weights = baw_weight(sparse_lvl1, e_cur, cfg.epochs, cfg.weights)
    weight_map = nearest_upsample(weights, 2)
    return SampleTargets(y_target=y_target, b_targets=b_targets, weight_map=weight_map)


def _crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    c, h, w = img.shape
    if h < size or w < size:
        raise ShapeError(f"image {h}x{w} smaller than crop {size}")
    if h == size and w == size:
        return img
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[:, top : top + size, left : left + size]


@dataclass
class TrainResult:
    model: FlowModel
    reports: list  # LossReport per step
    csv_rows: list  # str per step, excluding header


def train_loop(images, cfg: TrainConfig, csv_path=None, model=None) -> TrainResult:
    """Optimize a flow on a small image set; see module docstring.

    ``images`` is a list of (3, H, W) float arrays in [0, 1].  Pass an
    existing ``model`` to fine-tune; otherwise one is created from the
    config seed.  Raises :class:`TrainingError` with the per-term loss
    values if the objective goes non-finite.
    """
    if not images:
        raise ValueError("train_loop needs at least one image")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = FlowModel.create(
            cfg.levels, channels=3, seed=cfg.seed, mode=cfg.mode,
            bam=cfg.bam, sigma_z=cfg.sigma_z,
        )
    params = model.params()
    state = OptimizerState.for_model(model, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    reports, rows = [], []
    order = []
    w = cfg.weights
    for step in range(cfg.total_steps):
        e_cur = step // cfg.steps_per_epoch
        lr = cosine_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min)

        batch_terms = []
        for _ in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(images)))
            x = _crop(images[order.pop(0)], cfg.crop, rng)
            targets = _prepare_targets(x, cfg, e_cur)

            y_forw, b_forw, z_forw = flow_forward(x, model)
            z_fresh = sample_latents(model, cfg.crop, cfg.crop, rng)
            x_back = flow_inverse(y_forw, b_forw, z_fresh, model)

            terms = (
                loss_forw(y_forw, targets.y_target, w.lambda1),
                loss_back(x_back, x, targets.weight_map),
                loss_bam(b_forw, targets.b_targets, w.lambda4),
                loss_latent(z_forw, w.lambda5),
            )
            batch_terms.append(terms)

        n = len(batch_terms)
        summed = [sum(t[k] for t in batch_terms) * (1.0 / n) for k in range(4)]
        total, report = total_loss(*summed)
        if not math.isfinite(report.total):
            raise TrainingError(
                f"non-finite loss at step {step}: forw={report.forw} back={report.back} "
                f"bam={report.bam} latent={report.latent}"
            )

        ad.zero_grads(params)
        total.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        clip_global_norm(grads, cfg.grad_clip)
        adam_step(params, grads, state, lr)

        reports.append(report)
        rows.append(csv_row(step, lr, report))

    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            fh.write("\n".join(rows) + "\n")
    return TrainResult(model=model, reports=reports, csv_rows=rows)


def reconstruct(model: FlowModel, x: np.ndarray, seed: int = 0) -> np.ndarray:
    """Round-trip an image through the flow with freshly sampled latents."""
    rng = np.random.default_rng(seed)
    y, bs, _ = flow_forward(x, model)
    fresh = sample_latents(model, x.shape[1], x.shape[2], rng)
    back = flow_inverse(y, bs, fresh, model)
    return np.clip(back.data, 0.0, 1.0)


def fit_config(cfg: TrainConfig, **overrides) -> TrainConfig:
    """Convenience for tests and scripts: tweak a frozen config."""
    return replace(cfg, **overrides)

"""Invertible coupling blocks and the multi-level flow network.

Each level splits its input with a Haar analysis into a low band u1
(C channels) and a high band u2 (3C channels), pushes both through two
invertible blocks, then emits the first high channel as the boundary
map B and the remaining 3C-1 channels as the latent Z; u1 descends to
the next level and becomes the LR output Y after the last one.

Block modes:

  general   u1' = u1 * s(phi(u2)) + s(phi(u2))
            u2' = u2 * s(rho(u1')) + eta(u1')
  additive  u1' = u1 + phi(u2)
            u2' = u2 + eta(u1')

where s is the bounded positive map :func:`autodiff.pos_scale`, so the
inverse's divisions are always well conditioned.  Both modes invert in
closed form; rho is unused in additive mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import wavelet
from .bam import BamConfig
from .errors import ShapeError

HIDDEN_WIDTH = 16
INIT_STD = 0.02
SLOPE = 0.2

MODE_GENERAL = "general"
MODE_ADDITIVE = "additive"

# numerical_jacobian_det assembles a dense Jacobian; keep it test-sized.
MAX_JACOBIAN_DIM = 64


@dataclass
class ResidualTransform:
    """conv3x3 -> leaky ReLU -> conv3x3, plus a skip path.

    The skip is a 1x1 channel mix when in/out channel counts differ and
    the identity otherwise.  The final conv starts at zero so a freshly
    initialized transform is dominated by its (small) skip.
    """

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor
    skip: ad.Tensor | None
    in_ch: int
    out_ch: int

    @classmethod
    def create(cls, in_ch: int, out_ch: int, rng: np.random.Generator, zero: bool = False):
        def init(shape):
            if zero:
                return np.zeros(shape)
            return rng.normal(0.0, INIT_STD, size=shape)

        w1 = ad.parameter(init((HIDDEN_WIDTH, in_ch, 3, 3)))
        b1 = ad.parameter(np.zeros(HIDDEN_WIDTH))
        w2 = ad.parameter(np.zeros((out_ch, HIDDEN_WIDTH, 3, 3)))
        b2 = ad.parameter(np.zeros(out_ch))
        skip = ad.parameter(init((out_ch, in_ch))) if in_ch != out_ch else None
        return cls(w1=w1, b1=b1, w2=w2, b2=b2, skip=skip, in_ch=in_ch, out_ch=out_ch)

    def apply(self, x: ad.Tensor) -> ad.Tensor:
        h = ad.leaky_relu(ad.conv2d(x, self.w1, self.b1), SLOPE)
        y = ad.conv2d(h, self.w2, self.b2)
        if self.skip is not None:
            return y + ad.conv1x1(x, self.skip)
        return y + x

    def params(self):
        out = [("conv1.weight", self.w1), ("conv1.bias", self.b1),
               ("conv2.weight", self.w2), ("conv2.bias", self.b2)]
        if self.skip is not None:
            out.append(("skip.weight", self.skip))
        return out


@dataclass
class InvBlockParams:
    """One invertible block: transforms phi (3C->C), rho and eta (C->3C)."""

    phi: ResidualTransform
    rho: ResidualTransform
    eta: ResidualTransform
    mode: str = MODE_GENERAL

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, mode: str = MODE_GENERAL,
               zero: bool = False):
        if mode not in (MODE_GENERAL, MODE_ADDITIVE):
            raise ValueError(f"unknown block mode {mode!r}")
        return cls(
            phi=ResidualTransform.create(3 * channels, channels, rng, zero=zero),
            rho=ResidualTransform.create(channels, 3 * channels, rng, zero=zero),
            eta=ResidualTransform.create(channels, 3 * channels, rng, zero=zero),
            mode=mode,
        )

    def params(self):
        out = []
        for name, t in (("phi", self.phi), ("rho", self.rho), ("eta", self.eta)):
            out.extend((f"{name}.{k}", p) for k, p in t.params())
        return out


def _check_branches(u1, u2, p: InvBlockParams):
    if u2.data.shape[0] != p.phi.in_ch or u1.data.shape[0] != p.rho.in_ch:
        raise ShapeError(
            f"block expects u1 {p.rho.in_ch} / u2 {p.phi.in_ch} channels, "
            f"got {u1.data.shape[0]} / {u2.data.shape[0]}"
        )
    if u1.data.shape[1:] != u2.data.shape[1:]:
        raise ShapeError(f"branch spatial mismatch: {u1.data.shape[1:]} vs {u2.data.shape[1:]}")


def invblock_forward(u1, u2, p: InvBlockParams):
    u1, u2 = ad.constant(u1), ad.constant(u2)
    _check_branches(u1, u2, p)
    if p.mode == MODE_ADDITIVE:
        u1n = u1 + p.phi.apply(u2)
        u2n = u2 + p.eta.apply(u1n)
        return u1n, u2n
    t = ad.pos_scale(p.phi.apply(u2))
    u1n = u1 * t + t
    u2n = u2 * ad.pos_scale(p.rho.apply(u1n)) + p.eta.apply(u1n)
    return u1n, u2n


def invblock_inverse(u1n, u2n, p: InvBlockParams):
    u1n, u2n = ad.constant(u1n), ad.constant(u2n)
    if p.mode == MODE_ADDITIVE:
        u2 = u2n - p.eta.apply(u1n)
        u1 = u1n - p.phi.apply(u2)
        return u1, u2
    u2 = (u2n - p.eta.apply(u1n)) / ad.pos_scale(p.rho.apply(u1n))
    t = ad.pos_scale(p.phi.apply(u2))
    u1 = (u1n - t) / t
    return u1, u2


@dataclass
class FlowModel:
    """Parameters and topology: ``levels`` wavelet stages, two blocks each."""

    levels: int
    channels: int
    mode: str
    blocks: list  # [level][block] -> InvBlockParams
    bam: BamConfig = field(default_factory=BamConfig)
    sigma_z: float = 1.0

    @classmethod
    def create(cls, levels: int, channels: int = 3, seed: int = 0,
               mode: str = MODE_GENERAL, bam: BamConfig | None = None,
               sigma_z: float = 1.0, zero: bool = False):
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        rng = np.random.default_rng(seed)
        blocks = [
            [InvBlockParams.create(channels, rng, mode=mode, zero=zero) for _ in range(2)]
            for _ in range(levels)
        ]
        return cls(levels=levels, channels=channels, mode=mode, blocks=blocks,
                   bam=bam or BamConfig(), sigma_z=sigma_z)

    @property
    def scale(self) -> int:
        return 1 << self.levels

    def named_params(self):
        out = []
        for li, level in enumerate(self.blocks):
            for bi, block in enumerate(level):
                out.extend(
                    (f"level{li}.block{bi}.{name}", p) for name, p in block.params()
                )
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def boundary_shapes(self, h: int, w: int):
        return [(1, h >> (l + 1), w >> (l + 1)) for l in range(self.levels)]

    def latent_shapes(self, h: int, w: int):
        zc = 3 * self.channels - 1
        return [(zc, h >> (l + 1), w >> (l + 1)) for l in range(self.levels)]


def _check_divisible(shape, model: FlowModel):
    c, h, w = shape
    if c != model.channels:
        raise ShapeError(f"input has {c} channels, model expects {model.channels}")
    div = model.scale
    if h % div or w % div:
        raise ShapeError(f"extents {h}x{w} not divisible by 2^{model.levels} = {div}")


def flow_forward(x, model: FlowModel):
    """Transform an image into (Y, [B per level], [Z per level])."""
    x = ad.constant(x)
    _check_divisible(x.data.shape, model)
    u1 = x
    bs, zs = [], []
    for level in model.blocks:
        u1, u2 = wavelet.haar_forward_t(u1)
        for block in level:
            u1, u2 = invblock_forward(u1, u2, block)
        bs.append(ad.narrow_channels(u2, 0, 1))
        zs.append(ad.narrow_channels(u2, 1, u2.data.shape[0] - 1))
    return u1, bs, zs


def flow_inverse(y, bs, zs, model: FlowModel):
    """Exact inverse of :func:`flow_forward` given the emitted (B, Z).

    Fed quantized B or freshly sampled Z it produces the approximate
    reconstruction instead; the algebra is unchanged.
    """
    if len(bs) != model.levels or len(zs) != model.levels:
        raise ShapeError(
            f"need {model.levels} boundary/latent tensors, got {len(bs)}/{len(zs)}"
        )
    u1 = ad.constant(y)
    for l in range(model.levels - 1, -1, -1):
        b, z = ad.constant(bs[l]), ad.constant(zs[l])
        if b.data.shape[0] != 1:
            raise ShapeError(f"level {l}: boundary branch must have 1 channel, got {b.data.shape[0]}")
        if z.data.shape[0] != 3 * model.channels - 1:
            raise ShapeError(
                f"level {l}: latent branch must have {3 * model.channels - 1} channels, "
                f"got {z.data.shape[0]}"
            )
        if b.data.shape[1:] != u1.data.shape[1:] or z.data.shape[1:] != u1.data.shape[1:]:
            raise ShapeError(
                f"level {l}: branch extents {b.data.shape[1:]}/{z.data.shape[1:]} "
                f"do not match low band {u1.data.shape[1:]}"
            )
        u2 = ad.concat_channels([b, z])
        for block in reversed(model.blocks[l]):
            u1, u2 = invblock_inverse(u1, u2, block)
        u1 = wavelet.haar_inverse_t(u1, u2)
    return u1


def sample_latents(model: FlowModel, h: int, w: int, rng: np.random.Generator):
    """Fresh standard-normal latents (scaled by sigma_z) for reconstruction."""
    return [rng.standard_normal(s) * model.sigma_z for s in model.latent_shapes(h, w)]


def numerical_jacobian_det(block: InvBlockParams, u1: np.ndarray, u2: np.ndarray,
                           step: float = 1e-5) -> float:
    """Determinant of the block's Jacobian, assembled by central differences.

    Test-scale only: refuses flattened inputs above ``MAX_JACOBIAN_DIM``.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    dim = u1.size + u2.size
    if dim > MAX_JACOBIAN_DIM:
        raise ValueError(f"flattened dimension {dim} exceeds limit {MAX_JACOBIAN_DIM}")

    n1 = u1.size

    def apply(vec):
        a = vec[:n1].reshape(u1.shape)
        b = vec[n1:].reshape(u2.shape)
        o1, o2 = invblock_forward(ad.Tensor(a), ad.Tensor(b), block)
        return np.concatenate([o1.data.reshape(-1), o2.data.reshape(-1)])

    base = np.concatenate([u1.reshape(-1), u2.reshape(-1)])
    jac = np.empty((dim, dim), dtype=np.float64)
    for j in range(dim):
        plus = base.copy()
        plus[j] += step
        minus = base.copy()
        minus[j] -= step
        jac[:, j] = (apply(plus) - apply(minus)) / (2.0 * step)
    return float(np.linalg.det(jac))

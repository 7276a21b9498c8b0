"""Exactly invertible image rescaling with boundary-map sidecars.

A desk-scale system built on a from-scratch float64 autodiff core: a
Haar analysis feeds stacked invertible coupling blocks that split an
image into a low-resolution output, a quantizable boundary map, and a
Gaussian latent that is resampled at reconstruction time.
"""

from .autodiff import Tensor, conv2d, fd_check, leaky_relu, pos_scale
from .bam import BamConfig, BoundaryMap, bam_generate
from .coupling import (
    FlowModel,
    InvBlockParams,
    ResidualTransform,
    flow_forward,
    flow_inverse,
    invblock_forward,
    invblock_inverse,
    numerical_jacobian_det,
)
from .codec import (
    RescalePayload,
    decode_sidecar,
    encode_sidecar,
    load_model,
    psnr_y,
    read_image,
    residual_stats,
    save_model,
    ssim_y,
    storage_report,
    write_image,
)
from .losses import LossReport, LossWeights, baw_weight, loss_back, loss_bam, loss_forw, loss_latent, total_loss
from .training import OptimizerState, TrainConfig, adam_step, cosine_lr, train_loop
from .wavelet import WaveletPair, haar_forward, haar_inverse

__version__ = "0.1.0"

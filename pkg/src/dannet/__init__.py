"""Gated two-expert restoration of hazy and snowy images.

Task-specific restorers built from dual-pool attention, multi-branch
spectral transform and cross-layer gate blocks run on a small scratch
autodiff engine; a lightweight per-pixel gate composes their outputs.
Training data is synthesized from physical haze/snow formation models.
"""

from .blocks import (
    CLAGMParams,
    DualPoolAttnParams,
    MSTParams,
    clagm,
    dual_pool_attention,
    mst_block,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .expert import (
    ExpertConfig,
    ExpertNetwork,
    build_expert,
    count_params,
    expert_forward,
    tiny_config,
)
from .fft import Spectrum, dft2d_naive, irfft2d, rfft2d
from .gating import DanNet, GateMaps, agn_forward, build_dan, compose, dan_forward
from .losses import LossConfig, charbonnier, psnr, spectral_loss, ssim, total_loss
from .ppm import read_ppm, write_ppm
from .synth import (
    DegradationSpec,
    HazeParams,
    SnowParams,
    augment,
    gen_clean,
    gen_fields,
    make_dataset,
    synth_haze,
    synth_snow,
)
from .tensor import Tensor, activation, backward, concat, conv2d, no_grad, pool, resample
from .train import TrainConfig, adam_step, cyclic_lr, train_expert, train_gate

__version__ = "0.1.0"

"""Low-frequency latent diffusion for ghost-free multi-exposure HDR."""

from .images import (
    ExposureStack,
    HDRImage,
    LDRImage,
    SceneSpec,
    build_model_input,
    gamma_to_hdr,
    pixel_shuffle,
    pixel_unshuffle,
    tonemap,
)
from .diffusion import (
    NoiseSchedule,
    ddim_sample,
    ddim_step,
    ddpm_step,
    diffusion_loss,
    eps_loss,
    make_schedule,
    predict_z0,
    q_sample,
)
from .model import LFDiffConfig, LFDiffModel, LowFrequencyPrior, build_model, infer, reconstruct
from .scenes import generate_scene
from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .training import TrainConfig, reconstruction_loss, run_training
from .metrics import MetricReport, psnr, psnr_mu, ssim, ssim_mu
from .evaluate import ablate_sampling_steps, emit_report, evaluate_dataset

__version__ = "0.1.0"

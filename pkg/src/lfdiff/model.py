"""Full model: prior extractor, condition encoder, denoising U-Net, and the
prior-guided reconstruction network, plus numpy-boundary wrappers that
operate on the data-layer image types."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np
import torch
import torch.nn as nn

from . import diffusion
from .blocks import (
    AlignmentModule,
    FeatureRefinement,
    NAFBlock,
    PriorIntegration,
    ResidualBlock,
    TimeEmbedding,
    pixel_unshuffle_nchw,
    upsample_nearest,
    zero_init,
)
from .errors import ConfigError, DomainError, ShapeError
from .images import ExposureStack, HDRImage, build_model_input, tonemap


@dataclass(frozen=True)
class LFDiffConfig:
    """Architecture and sampler hyperparameters; defaults follow the
    reference configuration, and `desk()` gives a CPU-friendly shrink."""

    dhr_channels: int = 60
    blocks_per_group: tuple[int, ...] = (3, 3, 3)
    heads: tuple[int, ...] = (6, 6, 6)
    ffn_expansion: float = 2.66
    pim_pool: int = 4
    frm_pool: int = 2
    lpenet_blocks: int = 4
    lpenet_channels: int = 64
    unshuffle_k: int = 4
    lpr_channels: int = 3
    denoiser_base_channels: int = 32
    denoiser_multipliers: tuple[int, ...] = (1, 2, 4, 8)
    denoiser_blocks_per_stage: int = 2
    denoiser_middle_blocks: int = 1
    time_dim: int = 64
    T: int = 200
    S: int = 10
    mu: float = 5000.0
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    prior_guided: bool = True  # False: ablation baseline, PIMs become FRMs

    def __post_init__(self):
        def as_tuple(v):
            return tuple(v) if isinstance(v, (list, tuple)) else (v,)

        object.__setattr__(self, "blocks_per_group", as_tuple(self.blocks_per_group))
        object.__setattr__(self, "heads", as_tuple(self.heads))
        object.__setattr__(self, "denoiser_multipliers", as_tuple(self.denoiser_multipliers))
        ints = [
            self.dhr_channels, self.pim_pool, self.frm_pool, self.lpenet_blocks,
            self.lpenet_channels, self.unshuffle_k, self.lpr_channels,
            self.denoiser_base_channels, self.denoiser_blocks_per_stage,
            self.denoiser_middle_blocks, self.time_dim, self.T, self.S,
        ]
        if any(v <= 0 for v in ints) or self.mu <= 0 or self.ffn_expansion <= 0:
            raise ConfigError("all config values must be positive")
        if len(self.blocks_per_group) != len(self.heads):
            raise ConfigError("blocks_per_group and heads must have the same length")
        if any(n <= 0 for n in self.blocks_per_group) or any(h <= 0 for h in self.heads):
            raise ConfigError("group sizes and head counts must be positive")
        for h in self.heads:
            if self.dhr_channels % h:
                raise ConfigError(f"dhr_channels={self.dhr_channels} not divisible by heads={h}")
        if any(m <= 0 for m in self.denoiser_multipliers):
            raise ConfigError("denoiser multipliers must be positive")
        if self.T % self.S:
            raise ConfigError(f"S={self.S} must divide T={self.T}")

    @classmethod
    def desk(cls) -> "LFDiffConfig":
        """Small configuration for single-core CPU runs."""
        return cls(
            dhr_channels=24,
            blocks_per_group=(2,),
            heads=(6,),
            lpenet_channels=32,
            denoiser_base_channels=16,
            denoiser_multipliers=(1, 2, 4),
            denoiser_blocks_per_stage=1,
            time_dim=32,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "LFDiffConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class LPENet(nn.Module):
    """Compact prior extractor: input conv, a few residual blocks, output conv."""

    def __init__(self, in_channels: int, channels: int = 64, blocks: int = 4, out_channels: int = 3):
        super().__init__()
        self.conv_in = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.blocks = nn.Sequential(*[ResidualBlock(channels) for _ in range(blocks)])
        self.conv_out = nn.Conv2d(channels, out_channels, 3, padding=1)

    def forward(self, x):
        return self.conv_out(self.blocks(self.conv_in(x)))


class DenoisingUNet(nn.Module):
    """Time-conditioned U-Net over the latent: stages of NAFBlocks at the
    channel multipliers, strided-conv downsampling, nearest+conv upsampling,
    concat skips fused by 1x1 convs. Inputs are zero-padded to a multiple of
    the total downsampling factor and cropped back at the output."""

    def __init__(
        self,
        in_channels: int = 6,
        out_channels: int = 3,
        base_channels: int = 32,
        multipliers: tuple[int, ...] = (1, 2, 4, 8),
        blocks_per_stage: int = 2,
        middle_blocks: int = 1,
        time_dim: int = 64,
    ):
        super().__init__()
        chans = [base_channels * m for m in multipliers]
        depth = len(chans)
        self.pad_to = 2 ** (depth - 1)
        self.conv_in = nn.Conv2d(in_channels, chans[0], 3, padding=1)

        target_channels: list[int] = []

        def make_stage(c, n):
            target_channels.extend([c] * 2 * n)
            return nn.ModuleList([NAFBlock(c) for _ in range(n)])

        self.enc_stages = nn.ModuleList()
        self.downs = nn.ModuleList()
        for d in range(depth - 1):
            self.enc_stages.append(make_stage(chans[d], blocks_per_stage))
            self.downs.append(nn.Conv2d(chans[d], chans[d + 1], 2, stride=2))
        self.middle = make_stage(chans[-1], middle_blocks)
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        self.dec_stages = nn.ModuleList()
        for d in reversed(range(depth - 1)):
            self.ups.append(nn.Conv2d(chans[d + 1], chans[d], 3, padding=1))
            self.fuses.append(nn.Conv2d(chans[d] * 2, chans[d], 1))
            self.dec_stages.append(make_stage(chans[d], blocks_per_stage))
        self.conv_out = zero_init(nn.Conv2d(chans[0], out_channels, 3, padding=1))
        self.time_embed = TimeEmbedding(time_dim, target_channels)

    @staticmethod
    def _run_stage(stage, x, mods, idx):
        for block in stage:
            x = block(x, (mods[idx], mods[idx + 1]))
            idx += 2
        return x, idx

    def forward(self, x, t):
        h, w = x.shape[2], x.shape[3]
        ph, pw = (-h) % self.pad_to, (-w) % self.pad_to
        if ph or pw:
            x = nn.functional.pad(x, (0, pw, 0, ph))
        mods = self.time_embed(t, batch=x.shape[0], dtype=x.dtype)
        idx = 0
        x = self.conv_in(x)
        skips = []
        for stage, down in zip(self.enc_stages, self.downs):
            x, idx = self._run_stage(stage, x, mods, idx)
            skips.append(x)
            x = down(x)
        x, idx = self._run_stage(self.middle, x, mods, idx)
        for up, fuse, stage in zip(self.ups, self.fuses, self.dec_stages):
            x = up(upsample_nearest(x, 2))
            x = fuse(torch.cat([x, skips.pop()], dim=1))
            x, idx = self._run_stage(stage, x, mods, idx)
        x = self.conv_out(x)
        return x[:, :, :h, :w]


class ReconstructionGroup(nn.Module):
    def __init__(self, channels, prior_channels, n_frm, heads, pim_pool, frm_pool, expansion,
                 prior_guided=True):
        super().__init__()
        if prior_guided:
            self.pim = PriorIntegration(channels, prior_channels, pim_pool, expansion)
        else:
            self.pim = FeatureRefinement(channels, heads, frm_pool, expansion)
        self.prior_guided = prior_guided
        self.frms = nn.ModuleList(
            [FeatureRefinement(channels, heads, frm_pool, expansion) for _ in range(n_frm)]
        )

    def forward(self, x, z):
        x = self.pim(x, z) if self.prior_guided else self.pim(x)
        for frm in self.frms:
            x = frm(x)
        return x


class DHRNet(nn.Module):
    """Stacked reconstruction groups (one prior-integration block plus
    several refinement blocks each) with a global residual connection. With
    prior_guided off every group leads with a plain refinement block instead,
    giving the regression-only ablation baseline."""

    def __init__(self, config: LFDiffConfig):
        super().__init__()
        self.groups = nn.ModuleList(
            [
                ReconstructionGroup(
                    config.dhr_channels,
                    config.lpr_channels,
                    n,
                    h,
                    config.pim_pool,
                    config.frm_pool,
                    config.ffn_expansion,
                    config.prior_guided,
                )
                for n, h in zip(config.blocks_per_group, config.heads)
            ]
        )

    def forward(self, feat, z):
        x = feat
        for group in self.groups:
            x = group(x, z)
        return x + feat


class LFDiffModel(nn.Module):
    """All trainable components plus the noise schedule.

    Stage one trains alignment + LPENet + DHRNet + head; stage two adds the
    condition encoder (alignment_dm + lpenet_dm) and the denoiser, keeping
    the stage-one LPENet frozen as the prior-target provider.
    """

    def __init__(self, config: LFDiffConfig):
        super().__init__()
        self.config = config
        k2 = config.unshuffle_k ** 2
        self.alignment = AlignmentModule(6, config.dhr_channels)
        self.lpenet = LPENet(
            6 * k2, config.lpenet_channels, config.lpenet_blocks, config.lpr_channels
        )
        self.alignment_dm = AlignmentModule(6 * k2, config.dhr_channels)
        self.lpenet_dm = LPENet(
            config.dhr_channels, config.lpenet_channels, config.lpenet_blocks, config.lpr_channels
        )
        self.denoiser = DenoisingUNet(
            in_channels=2 * config.lpr_channels,
            out_channels=config.lpr_channels,
            base_channels=config.denoiser_base_channels,
            multipliers=config.denoiser_multipliers,
            blocks_per_stage=config.denoiser_blocks_per_stage,
            middle_blocks=config.denoiser_middle_blocks,
            time_dim=config.time_dim,
        )
        self.dhrnet = DHRNet(config)
        self.head = nn.Conv2d(config.dhr_channels, 3, 3, padding=1)
        # flat-gray start keeps the clamped output responsive everywhere
        zero_init(self.head)
        nn.init.constant_(self.head.bias, 0.5)
        self.schedule = diffusion.make_schedule(config.T, config.beta_start, config.beta_end)

    # tensor-level paths ---------------------------------------------------

    def extract_prior(self, gt: torch.Tensor) -> torch.Tensor:
        """Ground truth [B, 3, H, W] -> compact prior [B, N, H/k, W/k]."""
        x = torch.cat([gt, tonemap(gt, self.config.mu)], dim=1)
        return self.lpenet(pixel_unshuffle_nchw(x, self.config.unshuffle_k))

    def extract_condition(self, x0, x1, x2) -> torch.Tensor:
        """Six-channel frame tensors -> conditional feature with prior shape."""
        k = self.config.unshuffle_k
        u = [pixel_unshuffle_nchw(x, k) for x in (x0, x1, x2)]
        return self.lpenet_dm(self.alignment_dm(*u))

    def predict_noise(self, z_t: torch.Tensor, cond: torch.Tensor, t: int) -> torch.Tensor:
        if not 1 <= int(t) <= self.config.T:
            raise DomainError(f"step t={t} outside [1, {self.config.T}]")
        if z_t.shape != cond.shape:
            raise ShapeError(f"latent {tuple(z_t.shape)} and condition {tuple(cond.shape)} differ")
        return self.denoiser(torch.cat([z_t, cond], dim=1), t)

    def refine(self, feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.dhrnet(feat, z)

    def reconstruct_tensor(self, x0, x1, x2, z) -> torch.Tensor:
        feat = self.alignment(x0, x1, x2)
        return torch.clamp(self.head(self.dhrnet(feat, z)), 0.0, 1.0)

    def sample_prior(self, cond: torch.Tensor, S: int, seed: int) -> torch.Tensor:
        return diffusion.ddim_sample(self.predict_noise, cond, S, self.schedule, seed)

    def param_count(self) -> dict[str, int]:
        def count(mod):
            return sum(p.numel() for p in mod.parameters())

        table = {
            "alignment": count(self.alignment),
            "lpenet": count(self.lpenet),
            "alignment_dm": count(self.alignment_dm),
            "lpenet_dm": count(self.lpenet_dm),
            "denoiser": count(self.denoiser),
            "dhrnet": count(self.dhrnet),
            "head": count(self.head),
        }
        table["total"] = sum(table.values())
        return table


def build_model(config: LFDiffConfig, seed: int = 0, quiet: bool = False) -> LFDiffModel:
    """Construct a model with deterministic parameter initialization and
    report the denoiser/total parameter counts."""
    torch.manual_seed(seed)
    model = LFDiffModel(config)
    if not quiet:
        counts = model.param_count()
        print(
            f"[lfdiff] model built: denoiser {counts['denoiser']:,} params, "
            f"total {counts['total']:,}"
        )
    return model


# numpy boundary ----------------------------------------------------------


@dataclass(frozen=True)
class LowFrequencyPrior:
    """Quarter-resolution compact latent targeted by the diffusion model."""

    z: np.ndarray  # [H/4, W/4, N]


def _check_model_dims(h: int, w: int) -> None:
    if h % 8 or w % 8:
        raise ShapeError(f"model inputs need H, W divisible by 8, got {h}x{w}")


def stack_to_tensors(stack: ExposureStack) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-frame [1, 6, H, W] float tensors in the fixed L-then-linear order."""
    xs = build_model_input(stack)
    return tuple(torch.from_numpy(x).permute(2, 0, 1)[None] for x in xs)


def hdr_to_tensor(img: HDRImage) -> torch.Tensor:
    return torch.from_numpy(img.pixels).permute(2, 0, 1)[None]


def tensor_to_hdr(x: torch.Tensor) -> HDRImage:
    arr = x.detach()[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)
    return HDRImage(np.clip(arr, 0.0, 1.0))


def extract_prior(model: LFDiffModel, gt: HDRImage) -> LowFrequencyPrior:
    _check_model_dims(gt.height, gt.width)
    with torch.no_grad():
        z = model.extract_prior(hdr_to_tensor(gt))
    return LowFrequencyPrior(z[0].permute(1, 2, 0).numpy())


def reconstruct(model: LFDiffModel, stack: ExposureStack, prior: LowFrequencyPrior) -> HDRImage:
    _check_model_dims(stack.height, stack.width)
    z = torch.from_numpy(np.ascontiguousarray(prior.z)).permute(2, 0, 1)[None]
    with torch.no_grad():
        out = model.reconstruct_tensor(*stack_to_tensors(stack), z)
    return tensor_to_hdr(out)


def infer(
    model: LFDiffModel,
    stack: ExposureStack,
    S: int | None = None,
    seed: int = 0,
    timings: dict | None = None,
) -> HDRImage:
    """Full inference: encode the condition, run the implicit sampler from
    seeded Gaussian noise, reconstruct. Deterministic given the seed. When a
    dict is passed as `timings` it receives the sampler-only and total wall
    times under keys "dm_s" and "total_s"."""
    _check_model_dims(stack.height, stack.width)
    S = model.config.S if S is None else S
    t_start = time.perf_counter()
    with torch.no_grad():
        xs = stack_to_tensors(stack)
        cond = model.extract_condition(*xs)
        dm_start = time.perf_counter()
        z_hat = model.sample_prior(cond, S, seed)
        dm_s = time.perf_counter() - dm_start
        out = model.reconstruct_tensor(*xs, z_hat)
    if timings is not None:
        timings["dm_s"] = dm_s
        timings["total_s"] = time.perf_counter() - t_start
    return tensor_to_hdr(out)

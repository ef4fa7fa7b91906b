"""Two-stage training: prior-guided reconstruction pretraining, then joint
diffusion training with an implicit-sampler rollout, plus loss plumbing,
the learning-rate schedule, and resumable training loops."""

from __future__ import annotations

import csv
from collections import namedtuple
from dataclasses import dataclass, fields
from pathlib import Path

import torch
import torch.nn as nn

from . import diffusion
from .checkpoint import TrainState, save_checkpoint
from .errors import ConfigError, DataError
from .images import ExposureStack, tonemap
from .model import LFDiffModel, hdr_to_tensor, stack_to_tensors

LOSS_COLUMNS = ["step", "epoch", "l_pixel", "l_percep", "l_eps", "l_prior", "l_total", "lr"]


@dataclass
class TrainConfig:
    stage: int = 1
    lr0: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_epochs: int = 50
    batch_size: int = 4
    patch_size: int = 64
    epochs: int = 10
    steps_per_epoch: int = 100
    lam: float = 1e-2
    seed: int = 0
    sampling_steps: int = 0  # 0: use the model config's S
    stage1_ckpt: str = ""
    sequential_updates: bool = False
    grad_clip: float = 1.0
    percep_seed: int = 0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 2 and not self.stage1_ckpt:
            raise ConfigError("stage 2 requires a stage-1 checkpoint path (stage1_ckpt)")
        positives = [
            self.lr0, self.lr_decay, self.lr_decay_epochs, self.batch_size,
            self.patch_size, self.epochs, self.steps_per_epoch,
        ]
        if any(v <= 0 for v in positives) or self.lam < 0:
            raise ConfigError("training config values must be positive")
        if self.patch_size % 8:
            raise ConfigError(f"patch_size must be divisible by 8, got {self.patch_size}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_decay_epochs)


class RandomFeaturePyramid(nn.Module):
    """Fixed, seeded random conv pyramid standing in for a pretrained
    perceptual feature extractor; any callable image -> feature list with the
    same interface can replace it."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator(device="cpu").manual_seed(int(seed))
        chans = [3, *widths]
        for i in range(len(widths)):
            w = torch.randn(chans[i + 1], chans[i], 3, 3, generator=gen)
            w = w * (2.0 / (9 * chans[i])) ** 0.5
            self.register_buffer(f"w{i}", w)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for i in range(3):
            w = getattr(self, f"w{i}")
            x = torch.conv2d(x, w.to(x.dtype), padding=1)
            x = nn.functional.leaky_relu(x, 0.1)
            x = nn.functional.avg_pool2d(x, 2)
            feats.append(x)
        return feats


ReconstructionLoss = namedtuple("ReconstructionLoss", ["total", "pixel", "perceptual"])


def reconstruction_loss(
    h: torch.Tensor, h_hat: torch.Tensor, lam: float = 1e-2, features=None, mu: float = 5000.0
) -> ReconstructionLoss:
    """Tonemapped L1 plus lam-weighted L1 between perceptual feature levels."""
    th, th_hat = tonemap(h, mu), tonemap(h_hat, mu)
    pixel = torch.mean(torch.abs(th - th_hat))
    if features is None or lam == 0.0:
        perceptual = torch.zeros((), dtype=h.dtype)
    else:
        fa, fb = features(th), features(th_hat)
        perceptual = sum(torch.mean(torch.abs(a - b)) for a, b in zip(fa, fb)) / len(fa)
    return ReconstructionLoss(pixel + lam * perceptual, pixel, perceptual)


Batch = namedtuple("Batch", ["x0", "x1", "x2", "gt"])


def batch_from_stacks(stacks: list[ExposureStack]) -> Batch:
    """Stack full scenes into one batch; every scene needs ground truth."""
    parts = []
    for stack in stacks:
        if stack.ground_truth is None:
            raise DataError("training batch requires ground truth for every scene")
        x0, x1, x2 = stack_to_tensors(stack)
        parts.append((x0, x1, x2, hdr_to_tensor(stack.ground_truth)))
    return Batch(*[torch.cat(t, dim=0) for t in zip(*parts)])


def trainable_parameters(model: LFDiffModel, stage: int):
    if stage == 1:
        mods = [model.alignment, model.lpenet, model.dhrnet, model.head]
    else:
        mods = [
            model.alignment, model.dhrnet, model.head,
            model.alignment_dm, model.lpenet_dm, model.denoiser,
        ]
    seen = []
    for mod in mods:
        seen.extend(p for p in mod.parameters())
    return seen


def apply_stage_freezing(model: LFDiffModel, stage: int) -> None:
    """Stage 1 leaves the diffusion side untouched; stage 2 freezes the
    stage-one prior extractor so the target it provides cannot drift."""
    trainable = set(id(p) for p in trainable_parameters(model, stage))
    for p in model.parameters():
        p.requires_grad_(id(p) in trainable)


def stage1_step(model: LFDiffModel, optimizer, batch: Batch, features, lam: float) -> dict:
    """Prior from ground truth, reconstruction from the frames, one update."""
    z = model.extract_prior(batch.gt)
    h_hat = model.reconstruct_tensor(batch.x0, batch.x1, batch.x2, z)
    loss = reconstruction_loss(batch.gt, h_hat, lam, features, model.config.mu)
    optimizer.zero_grad(set_to_none=True)
    loss.total.backward()
    optimizer.step()
    return {
        "l_pixel": float(loss.pixel.detach()), "l_percep": float(loss.perceptual.detach()),
        "l_eps": 0.0, "l_prior": 0.0, "l_total": float(loss.total.detach()),
    }


def _stage2_losses(model, batch, S, features, lam, gen):
    t = int(torch.randint(1, model.config.T + 1, (1,), generator=gen))
    with torch.no_grad():
        z = model.extract_prior(batch.gt)
    eps = torch.randn(z.shape, generator=gen, dtype=z.dtype)
    cond = model.extract_condition(batch.x0, batch.x1, batch.x2)
    z_t = diffusion.q_sample(z, t, eps, model.schedule)
    eps_hat = model.predict_noise(z_t, cond, t)
    l_eps = diffusion.eps_loss(eps, eps_hat)

    rollout_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=gen))
    z_hat = model.sample_prior(cond, S, rollout_seed)
    l_prior = torch.mean(torch.abs(z_hat - z))

    h_hat = model.reconstruct_tensor(batch.x0, batch.x1, batch.x2, z_hat)
    l_rec = reconstruction_loss(batch.gt, h_hat, lam, features, model.config.mu)
    return l_eps, l_prior, l_rec


def stage2_step(
    model: LFDiffModel,
    optimizer,
    batch: Batch,
    S: int,
    features,
    lam: float,
    gen: torch.Generator,
    sequential: bool = False,
    grad_clip: float = 1.0,
) -> dict:
    """Joint update: noise-matching at a random step, an S-step implicit
    rollout matched to the frozen prior target, and reconstruction from the
    rolled-out prior. One combined backward by default; `sequential` takes
    the three gradient steps separately instead."""
    params = [p for p in model.parameters() if p.requires_grad]
    gen_state = gen.get_state()
    l_eps, l_prior, l_rec = _stage2_losses(model, batch, S, features, lam, gen)
    total = l_eps + l_prior + l_rec.total
    if not sequential:
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        if grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, grad_clip)
        optimizer.step()
    else:
        for which in range(3):
            gen.set_state(gen_state)  # same draws for all three passes
            le, lp, lr = _stage2_losses(model, batch, S, features, lam, gen)
            part = (le, lp, lr.total)[which]
            optimizer.zero_grad(set_to_none=True)
            part.backward()
            if grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, grad_clip)
            optimizer.step()
    return {
        "l_pixel": float(l_rec.pixel.detach()), "l_percep": float(l_rec.perceptual.detach()),
        "l_eps": float(l_eps.detach()), "l_prior": float(l_prior.detach()),
        "l_total": float(total.detach()),
    }


def sample_batch(scene_tensors: list[Batch], cfg: TrainConfig, gen: torch.Generator) -> Batch:
    """Random scenes, random aligned crops of patch_size."""
    ps = cfg.patch_size
    parts = []
    for _ in range(cfg.batch_size):
        idx = int(torch.randint(0, len(scene_tensors), (1,), generator=gen))
        scene = scene_tensors[idx]
        h, w = scene.gt.shape[2], scene.gt.shape[3]
        y0 = int(torch.randint(0, max(h - ps, 0) + 1, (1,), generator=gen))
        x0 = int(torch.randint(0, max(w - ps, 0) + 1, (1,), generator=gen))
        parts.append(tuple(t[:, :, y0 : y0 + ps, x0 : x0 + ps] for t in scene))
    return Batch(*[torch.cat(t, dim=0) for t in zip(*parts)])


def make_optimizer(model: LFDiffModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(trainable_parameters(model, cfg.stage), lr=cfg.lr0)


def _param_names(model: LFDiffModel, stage: int) -> list[str]:
    wanted = {id(p) for p in trainable_parameters(model, stage)}
    return [n for n, p in model.named_parameters() if id(p) in wanted]


def optimizer_state_by_name(model: LFDiffModel, optimizer, stage: int) -> dict:
    names = _param_names(model, stage)
    params = trainable_parameters(model, stage)
    out = {}
    for name, p in zip(names, params):
        if p in optimizer.state:
            out[name] = {k: v for k, v in optimizer.state[p].items()}
    return out


def restore_optimizer_state(model: LFDiffModel, optimizer, stage: int, saved: dict) -> None:
    names = _param_names(model, stage)
    params = trainable_parameters(model, stage)
    by_name = dict(zip(names, params))
    for name, entry in saved.items():
        if name in by_name:
            optimizer.state[by_name[name]] = {
                k: (v.clone() if torch.is_tensor(v) else v) for k, v in entry.items()
            }


def write_loss_csv(rows: list[list[float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_COLUMNS)
        for row in rows:
            writer.writerow([int(row[0]), int(row[1])] + [f"{v:.8g}" for v in row[2:]])


def run_training(
    model: LFDiffModel,
    scenes: list[ExposureStack],
    cfg: TrainConfig,
    out_dir,
    state: TrainState | None = None,
) -> tuple[LFDiffModel, TrainState]:
    """Train from `state` (or scratch) up to cfg.epochs; writes
    ``checkpoint.lfck`` and ``loss_history.csv`` into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not scenes:
        raise DataError("no training scenes")

    scene_tensors = [batch_from_stacks([s]) for s in scenes]
    apply_stage_freezing(model, cfg.stage)
    optimizer = make_optimizer(model, cfg)
    features = RandomFeaturePyramid(cfg.percep_seed)
    gen = torch.Generator(device="cpu")

    if state is None:
        state = TrainState(stage=cfg.stage)
        gen.manual_seed(cfg.seed)
    else:
        if state.stage != cfg.stage:
            raise ConfigError(f"checkpoint stage {state.stage} != config stage {cfg.stage}")
        gen.set_state(torch.tensor(bytearray(state.rng_state), dtype=torch.uint8))
        if state.optimizer_state:
            restore_optimizer_state(model, optimizer, cfg.stage, state.optimizer_state)

    S = cfg.sampling_steps or model.config.S
    rows = [list(r) for r in state.loss_history]
    for epoch in range(state.epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        for _ in range(cfg.steps_per_epoch):
            batch = sample_batch(scene_tensors, cfg, gen)
            if cfg.stage == 1:
                record = stage1_step(model, optimizer, batch, features, cfg.lam)
            else:
                record = stage2_step(
                    model, optimizer, batch, S, features, cfg.lam, gen,
                    sequential=cfg.sequential_updates, grad_clip=cfg.grad_clip,
                )
            state.global_step += 1
            rows.append(
                [state.global_step, epoch, record["l_pixel"], record["l_percep"],
                 record["l_eps"], record["l_prior"], record["l_total"], lr]
            )
        state.epoch = epoch + 1

    state.loss_history = rows
    state.rng_state = bytes(gen.get_state().numpy().tobytes())
    state.optimizer_state = optimizer_state_by_name(model, optimizer, cfg.stage)
    save_checkpoint(model, state, out_dir / "checkpoint.lfck")
    write_loss_csv(rows, out_dir / "loss_history.csv")
    return model, state


# config file -------------------------------------------------------------

_ALIASES = {"lambda": "lam"}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; values become int,
    float, bool, or comma-separated int tuples when they parse as such."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[_ALIASES.get(key, key)] = _coerce(value)
    return out


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if "," in value:
        try:
            return tuple(int(v) for v in value.split(","))
        except ValueError:
            pass
    return value


def split_config(raw: dict) -> tuple[dict, dict]:
    """Partition flat config keys into (train, model) field dicts."""
    from .model import LFDiffConfig

    train_fields = {f.name for f in fields(TrainConfig)}
    model_fields = {f.name for f in fields(LFDiffConfig)}
    train, mdl = {}, {}
    for key, value in raw.items():
        if key in train_fields:
            train[key] = value
        elif key in model_fields:
            mdl[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return train, mdl


def load_train_config(path) -> tuple[TrainConfig, dict]:
    raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    train_kv, model_kv = split_config(raw)
    return TrainConfig(**train_kv), model_kv

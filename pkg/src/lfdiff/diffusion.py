"""Variance schedules, forward/reverse diffusion steps, and diffusion losses.

Schedule tables are stored 0-based in float64 but exposed through 1-based
accessors (t in [1, T]); the cumulative product at t = 0 is defined as 1 so
that a terminal implicit step onto t_next = 0 returns the clean estimate.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import torch

from .errors import ConfigError, DomainError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances beta with alpha = 1 - beta and their running product."""

    T: int
    beta: torch.Tensor  # [T], float64
    alpha: torch.Tensor  # [T], float64
    alpha_bar: torch.Tensor  # [T], float64

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise DomainError(f"step index t={t} outside [1, {self.T}]")


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear beta interpolation inclusive of both endpoints."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alpha = 1.0 - beta
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=torch.cumprod(alpha, dim=0))


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def q_sample(z0: torch.Tensor, t: int, eps: torch.Tensor, s: NoiseSchedule) -> torch.Tensor:
    """Closed-form forward process: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    _check_same_shape(z0, eps, "q_sample")
    ab = s.alpha_bar_at(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def predict_z0(z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, s: NoiseSchedule) -> torch.Tensor:
    """Algebraic inversion of the closed form given a noise estimate."""
    _check_same_shape(z_t, eps_hat, "predict_z0")
    ab = s.alpha_bar_at(t)
    return (z_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def ddim_step(
    z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, t_next: int, s: NoiseSchedule
) -> torch.Tensor:
    """Deterministic implicit update from step t to t_next (t_next = 0 allowed)."""
    if not t > t_next >= 0:
        raise ConfigError(f"implicit step needs t > t_next >= 0, got t={t}, t_next={t_next}")
    z0_pred = predict_z0(z_t, eps_hat, t, s)
    ab_next = s.alpha_bar_at(t_next)
    return math.sqrt(ab_next) * z0_pred + math.sqrt(1.0 - ab_next) * eps_hat


def ddpm_step(
    z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, s: NoiseSchedule, noise: torch.Tensor
) -> torch.Tensor:
    """One stochastic ancestral step; the caller supplies the injected noise
    (zero is the convention for the final step)."""
    _check_same_shape(z_t, eps_hat, "ddpm_step")
    _check_same_shape(z_t, noise, "ddpm_step noise")
    a = s.alpha_at(t)
    ab = s.alpha_bar_at(t)
    mean = (z_t - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
    return mean + math.sqrt(1.0 - a) * noise


def sampling_grid(T: int, S: int) -> list[tuple[int, int]]:
    """(t, t_next) pairs for the implicit sampler: t = (i-1)*T/S + 1 for
    i = S..1, with t_next = 0 on the final step."""
    if S < 1 or T % S != 0:
        raise ConfigError(f"implicit step count S={S} must divide T={T}")
    pairs = []
    for i in range(S, 0, -1):
        t = (i - 1) * T // S + 1
        t_next = (i - 2) * T // S + 1 if i > 1 else 0
        pairs.append((t, t_next))
    return pairs


def ddim_sample(
    denoiser,
    cond: torch.Tensor,
    S: int,
    s: NoiseSchedule,
    rng_seed: int,
) -> torch.Tensor:
    """Run the full implicit reverse process.

    Draws the initial state from a unit Gaussian (treated as the state at the
    first grid time), then applies S deterministic implicit steps. The
    denoiser is called as denoiser(z_t, cond, t) and must return the noise
    estimate. Deterministic given (rng_seed, inputs) on one build/hardware
    configuration.
    """
    grid = sampling_grid(s.T, S)
    gen = torch.Generator(device="cpu").manual_seed(int(rng_seed))
    z = torch.randn(cond.shape, generator=gen, dtype=cond.dtype)
    for t, t_next in grid:
        eps_hat = denoiser(z, cond, t)
        z = ddim_step(z, eps_hat, t, t_next, s)
    return z


def eps_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error between injected and estimated noise."""
    _check_same_shape(eps, eps_hat, "eps_loss")
    return torch.mean((eps - eps_hat) ** 2)


DiffusionLoss = namedtuple("DiffusionLoss", ["total", "eps", "prior"])


def diffusion_loss(
    eps: torch.Tensor, eps_hat: torch.Tensor, z: torch.Tensor, z_hat: torch.Tensor
) -> DiffusionLoss:
    """Noise-matching MSE plus L1 between the sampled and target latents."""
    _check_same_shape(z, z_hat, "diffusion_loss")
    e = eps_loss(eps, eps_hat)
    p = torch.mean(torch.abs(z_hat - z))
    return DiffusionLoss(total=e + p, eps=e, prior=p)

"""Quality metrics in the linear and tonemapped domains.

All metrics are pure functions over [0, 1] images (channel-last numpy or
HDRImage); PSNR uses peak 1.0 and is capped at 100 dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .images import DEFAULT_MU, HDRImage, tonemap

PSNR_CAP = 100.0
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_array(img) -> np.ndarray:
    x = img.pixels if isinstance(img, HDRImage) else np.asarray(img, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("metric input contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise DomainError("metric input must lie in [0, 1]")
    return x


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes {x.shape} and {y.shape} differ")
    return x, y


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse <= 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def psnr_mu(h, h_hat, mu: float = DEFAULT_MU, cap: float = PSNR_CAP) -> float:
    x, y = _pair(h, h_hat)
    return psnr(tonemap(x, mu), tonemap(y, mu), cap)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    r = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    k = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k /= k.sum()
    return np.outer(k, k)


def _windowed(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    w = kernel.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(x, (w, w))
    return np.tensordot(view, kernel, axes=([2, 3], [0, 1]))


def ssim(a, b, window: int = 11, sigma: float = 1.5) -> float:
    """Mean local structural similarity with a gaussian window, averaged over
    channels; equal inputs give exactly 1.0."""
    x, y = _pair(a, b)
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    if x.shape[0] < window or x.shape[1] < window:
        raise ShapeError(f"images smaller than the {window}x{window} window")
    kernel = _gaussian_kernel(window, sigma)
    vals = []
    for c in range(x.shape[2]):
        xc, yc = x[:, :, c], y[:, :, c]
        mu_x = _windowed(xc, kernel)
        mu_y = _windowed(yc, kernel)
        sig_x = _windowed(xc * xc, kernel) - mu_x * mu_x
        sig_y = _windowed(yc * yc, kernel) - mu_y * mu_y
        sig_xy = _windowed(xc * yc, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sig_xy + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sig_x + sig_y + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def ssim_mu(h, h_hat, mu: float = DEFAULT_MU, window: int = 11, sigma: float = 1.5) -> float:
    x, y = _pair(h, h_hat)
    return ssim(tonemap(x, mu), tonemap(y, mu), window, sigma)


@dataclass(frozen=True)
class SceneMetrics:
    name: str
    psnr_mu: float
    psnr_l: float
    ssim_mu: float
    ssim_l: float
    time_s: float
    dm_time_s: float


@dataclass
class MetricReport:
    """Per-scene metrics plus their arithmetic means for one sampler setting."""

    sampling_steps: int
    seed: int
    scenes: list[SceneMetrics] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def mean(self, name: str) -> float:
        if not self.scenes:
            return float("nan")
        return float(np.mean([getattr(s, name) for s in self.scenes]))

    @property
    def empty(self) -> bool:
        return not self.scenes


def score_pair(gt: HDRImage, pred: HDRImage) -> dict[str, float]:
    return {
        "psnr_mu": psnr_mu(gt, pred),
        "psnr_l": psnr(gt, pred),
        "ssim_mu": ssim_mu(gt, pred),
        "ssim_l": ssim(gt, pred),
    }

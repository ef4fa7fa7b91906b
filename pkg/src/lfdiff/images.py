"""Image data model and domain-transfer operators.

All data-layer images are channel-last float32 numpy arrays. Linear-radiance
(HDR) images live in [0, 1]; display-referred (LDR) images live in [0, 1]
with saturated pixels clamped exactly to 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

DEFAULT_MU = 5000.0
DEFAULT_GAMMA = 2.2


def _check_image_array(pixels: np.ndarray, what: str) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"{what} must have shape [H, W, 3], got {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise DomainError(f"{what} contains non-finite values")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise DomainError(f"{what} values must lie in [0, 1]")
    return pixels


@dataclass(frozen=True)
class HDRImage:
    """Linear-radiance image, normalized to [0, 1].

    The model entry points additionally require H and W divisible by 8
    (pixel-unshuffle factor 4 plus pooling factors 2 and 4); that constraint
    is checked there, not here, so that small images remain valid for file
    round-trip purposes.
    """

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _check_image_array(self.pixels, "HDRImage"))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LDRImage:
    """Display-referred image in [0, 1] with its log2 relative exposure."""

    pixels: np.ndarray
    exposure_value: float

    def __post_init__(self):
        object.__setattr__(self, "pixels", _check_image_array(self.pixels, "LDRImage"))
        object.__setattr__(self, "exposure_value", float(self.exposure_value))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def exposure_time(self) -> float:
        """Relative exposure time t = 2**EV."""
        return 2.0 ** self.exposure_value


@dataclass(frozen=True)
class ExposureStack:
    """Three LDR frames ordered by ascending exposure, middle frame reference."""

    frames: tuple[LDRImage, LDRImage, LDRImage]
    ground_truth: HDRImage | None = None
    reference_index: int = 1

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) != 3:
            raise ShapeError(f"ExposureStack needs exactly 3 frames, got {len(frames)}")
        evs = [f.exposure_value for f in frames]
        if not (evs[0] < evs[1] < evs[2]):
            raise DomainError(f"exposure values must be strictly increasing, got {evs}")
        sizes = {(f.height, f.width) for f in frames}
        if len(sizes) != 1:
            raise ShapeError(f"all frames must share H x W, got {sizes}")
        if self.ground_truth is not None:
            gt = self.ground_truth
            if (gt.height, gt.width) != (frames[0].height, frames[0].width):
                raise ShapeError("ground truth size differs from the frames")
        if self.reference_index != 1:
            raise DomainError("reference frame is always the middle frame (index 1)")
        object.__setattr__(self, "frames", frames)

    @property
    def reference(self) -> LDRImage:
        return self.frames[self.reference_index]

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic recipe for one synthetic exposure-bracketed scene."""

    seed: int
    size: tuple[int, int] = (64, 64)
    motion_magnitude: float = 4.0
    saturation_fraction: float = 0.1
    exposure_set: tuple[float, float, float] = (-2.0, 0.0, 2.0)

    def __post_init__(self):
        h, w = self.size
        if h <= 0 or w <= 0:
            raise DomainError(f"size must be positive, got {self.size}")
        if not 0.0 <= self.saturation_fraction < 1.0:
            raise DomainError("saturation_fraction must lie in [0, 1)")
        if self.motion_magnitude < 0:
            raise DomainError("motion_magnitude must be non-negative")
        evs = self.exposure_set
        if len(evs) != 3 or not (evs[0] < evs[1] < evs[2]):
            raise DomainError(f"exposure_set must be 3 strictly increasing EVs, got {evs}")


def tonemap(h, mu: float = DEFAULT_MU):
    """Mu-law range compression T(x) = log(1 + mu*x) / log(1 + mu).

    Accepts an HDRImage, a numpy array, or a torch tensor in [0, 1]; returns
    the elementwise tonemapped values of the same array type. Strictly
    monotone increasing, with T(0) = 0 and T(1) = 1.
    """
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    x = h.pixels if isinstance(h, HDRImage) else h
    if hasattr(x, "detach"):  # torch tensor path, keeps autograd intact
        import torch

        if not torch.all(torch.isfinite(x.detach())):
            raise DomainError("tonemap input contains non-finite values")
        if x.detach().min().item() < 0:
            raise DomainError("tonemap input must be non-negative")
        return torch.log1p(mu * x) / math.log1p(mu)
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise DomainError("tonemap input contains non-finite values")
    if x.min() < 0:
        raise DomainError("tonemap input must be non-negative")
    return np.log1p(mu * x) / math.log1p(mu)


def gamma_to_hdr(ldr: LDRImage, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Map an LDR frame into the linear domain: H_i = L_i**gamma / t_i.

    Division by exposure times below 1 can push values above 1; the result
    is clipped back to [0, 1] so every network input stays bounded.
    """
    return ldr_to_linear(ldr.pixels, ldr.exposure_time, gamma)


def ldr_to_linear(pixels: np.ndarray, t: float, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    if t <= 0:
        raise DomainError(f"exposure time must be positive, got {t}")
    if gamma <= 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    out = np.power(pixels.astype(np.float64), gamma) / t
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def build_model_input(stack: ExposureStack, gamma: float = DEFAULT_GAMMA) -> list[np.ndarray]:
    """Per-frame six-channel inputs: channels 0..2 the LDR frame, 3..5 its
    gamma-corrected linear version."""
    out = []
    for frame in stack.frames:
        lin = gamma_to_hdr(frame, gamma)
        out.append(np.concatenate([frame.pixels, lin], axis=2))
    return out


def pixel_unshuffle(x: np.ndarray, k: int) -> np.ndarray:
    """Space-to-depth rearrangement of an [H, W, C] array to [H/k, W/k, C*k*k].

    Sub-pixel ordering is frozen: within each k x k block the offsets are
    traversed row-major ((0,0), (0,1), ..., (1,0), ...), and the block index
    is the major axis of the output channel, i.e.
    out[i, j, (di*k + dj)*C + c] == x[i*k + di, j*k + dj, c].
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected [H, W, C], got shape {x.shape}")
    h, w, c = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"k={k} must divide H={h} and W={w}")
    # [H/k, k, W/k, k, C] -> [H/k, W/k, k, k, C]
    y = x.reshape(h // k, k, w // k, k, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(y.reshape(h // k, w // k, k * k * c))


def pixel_shuffle(x: np.ndarray, k: int) -> np.ndarray:
    """Exact inverse of :func:`pixel_unshuffle` for the same k."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected [H, W, C], got shape {x.shape}")
    h, w, c = x.shape
    if k < 1 or c % (k * k):
        raise ShapeError(f"k*k={k * k} must divide C={c}")
    c_out = c // (k * k)
    y = x.reshape(h, w, k, k, c_out).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(y.reshape(h * k, w * k, c_out))

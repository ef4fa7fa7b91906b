"""Procedural exposure-bracketed scene generator.

Each scene is a smooth radiance background plus bright disks and rectangles
whose radiance clips in the higher exposures. The three LDR frames are
rendered as clip(H * 2**EV)**(1/gamma); non-reference frames translate the
foreground globally by up to motion_magnitude pixels to induce ghosting.
The ground truth is the radiance field at the reference-frame position.

Identical SceneSpecs produce bit-identical stacks.
"""

from __future__ import annotations

import numpy as np

from .errors import GenerationError
from .images import DEFAULT_GAMMA, ExposureStack, HDRImage, LDRImage, SceneSpec

_BG_LO, _BG_HI = 0.02, 0.22
_MAX_EXTRA_OBJECTS = 64


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij"
    )
    a, b = rng.uniform(-1.0, 1.0, size=2)
    field = a * xx + b * yy
    for _ in range(2):
        freq = rng.uniform(0.5, 2.0)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field = field + rng.uniform(0.3, 0.8) * np.sin(
            2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )
    lo, hi = field.min(), field.max()
    span = hi - lo if hi > lo else 1.0
    base = _BG_LO + (_BG_HI - _BG_LO) * (field - lo) / span
    tint = rng.uniform(0.85, 1.0, size=3)
    return base[:, :, None] * tint[None, None, :]


def _disk_coverage(h, w, cy, cx, radius):
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(radius - dist + 0.5, 0.0, 1.0)  # 1px antialias band


def _rect_coverage(h, w, cy, cx, hy, hx):
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cov_y = np.clip(np.minimum(yy - (cy - hy), (cy + hy) - yy) + 0.5, 0.0, 1.0)
    cov_x = np.clip(np.minimum(xx - (cx - hx), (cx + hx) - xx) + 0.5, 0.0, 1.0)
    return cov_y * cov_x


class _Object:
    __slots__ = ("kind", "cy", "cx", "size_y", "size_x", "radiance")

    def __init__(self, kind, cy, cx, size_y, size_x, radiance):
        self.kind = kind
        self.cy, self.cx = cy, cx
        self.size_y, self.size_x = size_y, size_x
        self.radiance = radiance  # per-channel, shape [3]

    def paint(self, field: np.ndarray, offset) -> None:
        h, w, _ = field.shape
        cy, cx = self.cy + offset[0], self.cx + offset[1]
        if self.kind == "disk":
            cov = _disk_coverage(h, w, cy, cx, self.size_y)
        else:
            cov = _rect_coverage(h, w, cy, cx, self.size_y, self.size_x)
        np.maximum(field, cov[:, :, None] * self.radiance[None, None, :], out=field)


def _random_object(rng: np.random.Generator, h: int, w: int, bright: bool = False) -> _Object:
    kind = "disk" if rng.random() < 0.6 else "rect"
    cy = rng.uniform(0.15 * h, 0.85 * h)
    cx = rng.uniform(0.15 * w, 0.85 * w)
    scale = min(h, w)
    size_y = rng.uniform(scale / 14.0, scale / 6.0)
    size_x = rng.uniform(scale / 14.0, scale / 6.0)
    lo = 0.7 if bright else 0.55
    radiance = rng.uniform(lo, 0.95) * rng.uniform(0.88, 1.0, size=3)
    return _Object(kind, cy, cx, size_y, size_x, radiance)


def saturated_fraction(pixels: np.ndarray) -> float:
    """Fraction of pixels fully clipped (all three channels exactly 1.0)."""
    return float(np.mean(np.all(pixels >= 1.0, axis=2)))


def _render_ldr(field: np.ndarray, ev: float, gamma: float) -> np.ndarray:
    t = 2.0 ** ev
    return np.power(np.clip(field * t, 0.0, 1.0), 1.0 / gamma)


def generate_scene(spec: SceneSpec, gamma: float = DEFAULT_GAMMA) -> ExposureStack:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    field = _background(rng, h, w)

    objects = [_random_object(rng, h, w) for _ in range(int(3 + rng.integers(0, 3)))]

    # per-frame global foreground translation; the reference frame stays put
    offsets = []
    for _ in range(3):
        mag = rng.uniform(0.5, 1.0) * spec.motion_magnitude
        theta = rng.uniform(0.0, 2.0 * np.pi)
        offsets.append((mag * np.sin(theta), mag * np.cos(theta)))
    offsets[1] = (0.0, 0.0)

    def render_field(offset):
        out = field.copy()
        for obj in objects:
            obj.paint(out, offset)
        return out

    ev_top = spec.exposure_set[2]

    def top_frame_saturation():
        return saturated_fraction(_render_ldr(render_field(offsets[2]), ev_top, gamma))

    frac = top_frame_saturation()
    added = 0
    while frac < spec.saturation_fraction and added < _MAX_EXTRA_OBJECTS:
        objects.append(_random_object(rng, h, w, bright=True))
        added += 1
        frac = top_frame_saturation()
    if frac < spec.saturation_fraction:
        raise GenerationError(
            f"could not reach saturation_fraction={spec.saturation_fraction} in the "
            f"+EV frame after adding {added} objects (reached {frac:.4f}); "
            f"use a larger size or a brighter exposure_set"
        )

    frames = tuple(
        LDRImage(_render_ldr(render_field(offsets[i]), ev, gamma).astype(np.float32), ev)
        for i, ev in enumerate(spec.exposure_set)
    )
    gt = HDRImage(render_field((0.0, 0.0)).astype(np.float32))
    return ExposureStack(frames=frames, ground_truth=gt)

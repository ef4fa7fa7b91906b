"""Bit-exact file formats and the on-disk scene layout.

HDR raw (.lfhd): magic b"LFHD", then u32-LE width, u32-LE height,
u32-LE channels, then float32-LE pixels, row-major, channel-interleaved.

LDR: binary P6 PPM, maxval 255, quantized with q = round(255 * x).

A scene directory is ``scene_<seed>/`` containing ldr_0.ppm, ldr_1.ppm,
ldr_2.ppm (ascending exposure), exposures.txt (three EV reals, one per
line) and gt.lfhd.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .images import ExposureStack, HDRImage, LDRImage

HDR_MAGIC = b"LFHD"


def write_hdr_raw(img: HDRImage, path) -> None:
    px = np.ascontiguousarray(img.pixels, dtype="<f4")
    h, w, c = px.shape
    with open(path, "wb") as f:
        f.write(HDR_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(px.tobytes())


def read_hdr_raw(path) -> HDRImage:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != HDR_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    w, h, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * w * h * c
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - 16} bytes, expected {expected - 16}")
    px = np.frombuffer(raw[16:], dtype="<f4").reshape(h, w, c)
    if not np.all(np.isfinite(px)):
        raise FormatError(f"{path}: non-finite pixel values")
    return HDRImage(px.copy())


def write_ldr_ppm(img: LDRImage, path) -> None:
    q = np.round(img.pixels * 255.0).astype(np.uint8)
    h, w, _ = q.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def _ppm_tokens(raw: bytes, n: int, path) -> tuple[list[int], int]:
    """Read n whitespace/comment separated header integers after the magic,
    returning them plus the offset of the binary payload."""
    vals: list[int] = []
    i = 2  # past "P6"
    while len(vals) < n:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError(f"{path}: malformed PPM header")
        try:
            vals.append(int(raw[i:j]))
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric PPM header field {raw[i:j]!r}") from exc
        i = j
    return vals, i + 1  # single whitespace byte after maxval


def read_ldr_ppm(path, exposure_value: float = 0.0) -> LDRImage:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] != b"P6":
        raise FormatError(f"{path}: not a binary P6 PPM")
    (w, h, maxval), offset = _ppm_tokens(raw, 3, path)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    payload = raw[offset:]
    if len(payload) != 3 * w * h:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {3 * w * h}")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return LDRImage(q.astype(np.float32) / 255.0, exposure_value)


def scene_dir_name(seed: int) -> str:
    return f"scene_{seed}"


def save_scene(stack: ExposureStack, root, seed: int) -> Path:
    """Write one scene directory under root; returns the directory path."""
    d = Path(root) / scene_dir_name(seed)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(stack.frames):
        write_ldr_ppm(frame, d / f"ldr_{i}.ppm")
    with open(d / "exposures.txt", "w", encoding="utf-8") as f:
        for frame in stack.frames:
            f.write(f"{frame.exposure_value}\n")
    if stack.ground_truth is not None:
        write_hdr_raw(stack.ground_truth, d / "gt.lfhd")
    return d


def load_scene(scene_dir) -> ExposureStack:
    d = Path(scene_dir)
    exp_path = d / "exposures.txt"
    if not exp_path.exists():
        raise DataError(f"{d}: missing exposures.txt")
    try:
        evs = [float(line) for line in exp_path.read_text(encoding="utf-8").split()]
    except ValueError as exc:
        raise FormatError(f"{exp_path}: malformed exposure values") from exc
    if len(evs) != 3:
        raise FormatError(f"{exp_path}: expected 3 exposure values, got {len(evs)}")
    frames = tuple(read_ldr_ppm(d / f"ldr_{i}.ppm", ev) for i, ev in enumerate(evs))
    gt_path = d / "gt.lfhd"
    gt = read_hdr_raw(gt_path) if gt_path.exists() else None
    return ExposureStack(frames=frames, ground_truth=gt)


def list_scene_dirs(root) -> list[Path]:
    """Scene directories under root, sorted by name for stable ordering."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "exposures.txt").exists())

"""Versioned checkpoint container.

Layout: magic b"LFCK" + u32-LE version + u64-LE header length + UTF-8 JSON
header + concatenated raw little-endian tensor payloads. The header holds
the model config, the training state, and a sorted tensor index
(name/dtype/shape/offset). Tensor names use '/'-separated hierarchical
paths: model parameters as ``model/<component>/<path>`` and Adam moments as
``optim/<path>/exp_avg`` etc. Identical inputs serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import torch

from .errors import CheckpointError
from .model import LFDiffConfig, LFDiffModel, build_model

MAGIC = b"LFCK"
VERSION = 1

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8"), "u1": np.dtype("u1")}
_TORCH_TO_TAG = {torch.float32: "f4", torch.float64: "f8", torch.int64: "i8", torch.uint8: "u1"}


@dataclass
class TrainState:
    """Serializable training progress; resumable bit-compatibly."""

    stage: int = 1
    epoch: int = 0
    global_step: int = 0
    rng_state: bytes = b""
    loss_history: list[list[float]] = dataclass_field(default_factory=list)
    optimizer_state: dict | None = None  # name -> {"step": float, tensors...}


def _tensor_entries(model: LFDiffModel, state: TrainState) -> dict[str, torch.Tensor]:
    entries: dict[str, torch.Tensor] = {}
    for name, tensor in model.state_dict().items():
        entries["model/" + name.replace(".", "/")] = tensor
    if state.optimizer_state:
        for pname, pstate in state.optimizer_state.items():
            base = "optim/" + pname.replace(".", "/")
            for key, value in pstate.items():
                if torch.is_tensor(value) and value.numel() > 1:
                    entries[f"{base}/{key}"] = value
    return entries


def _optimizer_scalars(state: TrainState) -> dict:
    if not state.optimizer_state:
        return {}
    out = {}
    for pname, pstate in state.optimizer_state.items():
        scalars = {}
        for key, value in pstate.items():
            if torch.is_tensor(value) and value.numel() <= 1:
                scalars[key] = float(value)
            elif not torch.is_tensor(value):
                scalars[key] = value
        out[pname] = scalars
    return out


def save_checkpoint(model: LFDiffModel, state: TrainState, path) -> None:
    entries = _tensor_entries(model, state)
    index = []
    offset = 0
    blobs = []
    for name in sorted(entries):
        tensor = entries[name].detach().cpu().contiguous()
        tag = _TORCH_TO_TAG.get(tensor.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported tensor dtype {tensor.dtype} for {name}")
        raw = tensor.numpy().astype(_DTYPES[tag]).tobytes()
        index.append(
            {"name": name, "dtype": tag, "shape": list(tensor.shape), "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "state": {
            "stage": state.stage,
            "epoch": state.epoch,
            "global_step": state.global_step,
            "rng_state": state.rng_state.hex(),
            # normalized to floats so a save/load/save cycle is byte-stable
            "loss_history": [[float(v) for v in row] for row in state.loss_history],
            "optimizer_scalars": _optimizer_scalars(state),
        },
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(head)))
        f.write(head)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> tuple[LFDiffModel, TrainState]:
    """Rebuild the model from the stored config and restore every tensor
    bit-exactly; optimizer moments return inside the TrainState."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version} unsupported (expected {VERSION})")
    try:
        header = json.loads(raw[16 : 16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[16 + head_len :]

    tensors: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + n * dt.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {entry['name']}")
        arr = np.frombuffer(payload[start:end], dtype=dt).reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(arr.copy())

    config = LFDiffConfig.from_dict(header["model_config"])
    model = build_model(config, seed=0)
    sd = {}
    for name in model.state_dict():
        key = "model/" + name.replace(".", "/")
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key}")
        sd[name] = tensors[key]
    try:
        model.load_state_dict(sd)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameter shapes do not match config: {exc}") from exc

    st = header["state"]
    optimizer_state: dict | None = None
    scalars = st.get("optimizer_scalars") or {}
    if scalars or any(k.startswith("optim/") for k in tensors):
        optimizer_state = {}
        for pname, pscalars in scalars.items():
            entry = {k: torch.tensor(float(v)) for k, v in pscalars.items()}
            base = "optim/" + pname.replace(".", "/")
            for key in ("exp_avg", "exp_avg_sq"):
                if f"{base}/{key}" in tensors:
                    entry[key] = tensors[f"{base}/{key}"]
            optimizer_state[pname] = entry
    state = TrainState(
        stage=st["stage"],
        epoch=st["epoch"],
        global_step=st["global_step"],
        rng_state=bytes.fromhex(st["rng_state"]),
        loss_history=[list(map(float, row)) for row in st["loss_history"]],
        optimizer_state=optimizer_state,
    )
    return model, state

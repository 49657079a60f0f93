"""Versioned checkpoint container.

Layout::

    TREEGPT-CHECKPOINT\\n
    version 1\\n
    header-bytes <n>\\n
    <n bytes of UTF-8 JSON: model config, train state, tensor manifest>
    <raw little-endian tensor bytes, concatenated in manifest order>

Manifest entries carry name, dtype, shape and byte offset into the payload.
Optimizer moments are stored as tensors named ``adam.m/<param>`` and
``adam.v/<param>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, TreeGPTModel, parameter_shapes
from .optim import AdamWState, TrainConfig

MAGIC = b"TREEGPT-CHECKPOINT\n"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class TrainState:
    step: int = 0
    optimizer: AdamWState | None = None
    rng_state: dict | None = None
    train_config: TrainConfig | None = None
    extra: dict = field(default_factory=dict)


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def checkpoint_bytes(model: TreeGPTModel, state: TrainState | None = None) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = [(n, p.data) for n, p in model.params.items()]
    header: dict = {"config": model.config.to_dict(), "state": None}
    if state is not None:
        opt = state.optimizer
        header["state"] = {
            "step": state.step,
            "rng_state": state.rng_state,
            "train_config": state.train_config.to_dict() if state.train_config else None,
            "extra": state.extra,
            "optimizer": None if opt is None else {
                "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                "weight_decay": opt.weight_decay, "t": opt.t,
            },
        }
        if opt is not None:
            tensors += [(f"adam.m/{n}", a) for n, a in opt.m.items()]
            tensors += [(f"adam.v/{n}", a) for n, a in opt.v.items()]
    manifest, chunks, offset = [], [], 0
    for name, arr in tensors:
        raw = _le(arr).tobytes()
        manifest.append({"name": name, "dtype": np.dtype(arr.dtype).str.lstrip("<>=|"),
                         "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header["tensors"] = manifest
    text = json.dumps(header, sort_keys=True, indent=1).encode()
    return b"".join([MAGIC, f"version {VERSION}\n".encode(), f"header-bytes {len(text)}\n".encode(), text] + chunks)


def save_checkpoint(model: TreeGPTModel, state: TrainState | None, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, state))
    tmp.replace(path)


def _readline(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointTruncatedError("checkpoint header is incomplete")
    return buf[pos:end].decode(errors="replace"), end + 1


def load_checkpoint(path) -> tuple[TreeGPTModel, TrainState | None]:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        if MAGIC.startswith(buf):
            raise CheckpointTruncatedError(f"{path}: file ends inside the magic line")
        raise CheckpointError(f"{path}: not a TreeGPT checkpoint")
    line, pos = _readline(buf, len(MAGIC))
    if not line.startswith("version "):
        raise CheckpointError(f"{path}: missing version line")
    version = int(line.split()[1])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads version {VERSION}")
    line, pos = _readline(buf, pos)
    n = int(line.split()[1])
    if len(buf) < pos + n:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(buf[pos:pos + n])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = memoryview(buf)[pos + n:]
    arrays = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CheckpointTruncatedError(f"{path}: tensor {entry['name']} extends past end of file")
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(payload[entry["offset"]:end], dtype=dt)
        if arr.size != int(np.prod(entry["shape"])):
            raise CheckpointShapeError(f"{path}: tensor {entry['name']} byte count disagrees with its shape")
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]).newbyteorder("="))
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid model config ({exc})") from exc
    expected = parameter_shapes(config)
    params = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointShapeError(f"{path}: missing tensor {name}")
        if arrays[name].shape != shape:
            raise CheckpointShapeError(
                f"{path}: tensor {name} has shape {arrays[name].shape}, config implies {shape}")
        params[name] = Tensor(arrays[name].copy(), requires_grad=True)
    model = TreeGPTModel(config, params)

    raw = header.get("state")
    if raw is None:
        return model, None
    opt = None
    if raw["optimizer"] is not None:
        o = raw["optimizer"]
        m, v = {}, {}
        for name in expected:
            for key, store in (("m", m), ("v", v)):
                a = arrays.get(f"adam.{key}/{name}")
                if a is None:
                    raise CheckpointShapeError(f"{path}: missing optimizer moment adam.{key}/{name}")
                if a.shape != expected[name]:
                    raise CheckpointShapeError(f"{path}: optimizer moment adam.{key}/{name} has shape {a.shape}")
                store[name] = a.copy()
        opt = AdamWState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["weight_decay"], o["t"], m, v)
    tc = TrainConfig.from_dict(raw["train_config"]) if raw.get("train_config") else None
    return model, TrainState(raw["step"], opt, raw["rng_state"], tc, raw.get("extra") or {})

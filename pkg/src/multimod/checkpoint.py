"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   10 bytes  b"MPLUG2CKPT"
    version u32
    state   u32 length + UTF-8 JSON (config echo, step, RNG state, queue
            cursors/fills, optimizer step counter)
    tensors u32 count, then per tensor:
            u32 name length + UTF-8 name, u32 rank, rank*u32 dims,
            raw float64 payload
    opt     u32 count, then per entry:
            name/rank/dims as above, float64 first-moment payload,
            float64 second-moment payload

The tensor section holds online parameters, the momentum copies under a
"momentum." prefix, and the queue buffers. save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .config import TrainConfig
from .corpus import Vocabulary
from .errors import ContractError
from .model import MultimodalModel
from .optim import AdamW

MAGIC = b"MPLUG2CKPT"
VERSION = 1


def _write_u32(fh, value: int):
    fh.write(struct.pack("<I", value))


def _read_u32(fh) -> int:
    return struct.unpack("<I", fh.read(4))[0]


def _write_named_array(fh, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    _write_u32(fh, len(encoded))
    fh.write(encoded)
    _write_u32(fh, arr.ndim)
    for d in arr.shape:
        _write_u32(fh, d)
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_named_array(fh):
    name = fh.read(_read_u32(fh)).decode("utf-8")
    rank = _read_u32(fh)
    dims = tuple(_read_u32(fh) for _ in range(rank))
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    return name, arr


def save_checkpoint(path: str, model: MultimodalModel, optimizer: AdamW,
                    step: int, rng_state: dict):
    state = {
        "config": model.cfg.to_dict(),
        "step": step,
        "rng_state": rng_state,
        "optimizer_step": optimizer.t,
        "queues": {
            "vision": {"fill": model.vision_queue.fill, "cursor": model.vision_queue.cursor,
                       "normalize_warnings": model.vision_queue.normalize_warnings},
            "text": {"fill": model.text_queue.fill, "cursor": model.text_queue.cursor,
                     "normalize_warnings": model.text_queue.normalize_warnings},
        },
    }
    params = model.parameters()
    momentum = model.momentum_parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_u32(fh, VERSION)
        blob = json.dumps(state, sort_keys=True, separators=(",", ":")).encode("utf-8")
        _write_u32(fh, len(blob))
        fh.write(blob)
        _write_u32(fh, len(params) + len(momentum) + 2)
        for name, p in params.items():
            _write_named_array(fh, name, p.data)
        for name, p in momentum.items():
            _write_named_array(fh, "momentum." + name, p.data)
        _write_named_array(fh, "queue.vision.buffer", model.vision_queue.buffer)
        _write_named_array(fh, "queue.text.buffer", model.text_queue.buffer)
        _write_u32(fh, len(optimizer.params))
        for name in optimizer.params:
            encoded = name.encode("utf-8")
            _write_u32(fh, len(encoded))
            fh.write(encoded)
            m = optimizer.m[name]
            _write_u32(fh, m.ndim)
            for d in m.shape:
                _write_u32(fh, d)
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(optimizer.v[name], dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Rebuild (model, optimizer, step, rng_state) from a checkpoint file."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ContractError(f"{path} is not a checkpoint (bad magic)")
        version = _read_u32(fh)
        if version != VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        state = json.loads(fh.read(_read_u32(fh)).decode("utf-8"))
        tensors = dict(_read_named_array(fh) for _ in range(_read_u32(fh)))
        opt_entries = {}
        for _ in range(_read_u32(fh)):
            name = fh.read(_read_u32(fh)).decode("utf-8")
            rank = _read_u32(fh)
            dims = tuple(_read_u32(fh) for _ in range(rank))
            count = int(np.prod(dims)) if dims else 1
            m = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
            v = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
            opt_entries[name] = (m, v)

    cfg = TrainConfig.from_dict(state["config"])
    model = MultimodalModel(cfg, Vocabulary(cfg.num_concepts))
    params = model.parameters()
    for name, p in params.items():
        if name not in tensors:
            raise ContractError(f"checkpoint missing parameter '{name}'")
        if tensors[name].shape != p.data.shape:
            raise ContractError(f"checkpoint shape mismatch for '{name}'")
        p.data[...] = tensors[name]
    for name, p in model.momentum_parameters().items():
        p.data[...] = tensors["momentum." + name]
    model.vision_queue.buffer[:] = tensors["queue.vision.buffer"]
    model.text_queue.buffer[:] = tensors["queue.text.buffer"]
    for queue, key in ((model.vision_queue, "vision"), (model.text_queue, "text")):
        queue.fill = state["queues"][key]["fill"]
        queue.cursor = state["queues"][key]["cursor"]
        queue.normalize_warnings = state["queues"][key]["normalize_warnings"]

    optimizer = AdamW(model.pretrain_parameters(), lr=cfg.lr, beta1=cfg.beta1,
                      beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)
    optimizer.t = state["optimizer_step"]
    for name, (m, v) in opt_entries.items():
        optimizer.m[name][...] = m
        optimizer.v[name][...] = v
    return model, optimizer, state["step"], state["rng_state"]

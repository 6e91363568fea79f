"""Sectioned binary checkpoint container.

Layout::

    NEWSREC-CKPT 1\\n
    <header: one line of JSON>\\n
    <payload: concatenated row-major tensors>

The header records model hyperparameters, the init seed, the optimizer step
and hyperparameters, and one section per tensor (name, dtype, shape, offset,
nbytes) plus a SHA-256 of the payload. Tensors are stored in the parameter
dtype (float32 in training mode, float64 in verification mode) so that save
and load round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"NEWSREC-CKPT 1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, state=None, path: str | Path = "model.ckpt", extra: dict | None = None) -> Path:
    path = Path(path)
    sections, blobs, offset = [], [], 0
    tensors = [(name, params[name]) for name in params.names()]
    if state is not None:
        tensors += [(f"adam.m/{k}", v) for k, v in state.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in state.v.items()]
    for name, arr in tensors:
        data = np.ascontiguousarray(arr).tobytes()
        sections.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    payload = b"".join(blobs)
    header = {
        "model": params.hyperparameters(),
        "seed": params.seed,
        "optimizer": None if state is None else state.header(),
        "sections": sections,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_header(path: str | Path) -> tuple[dict, bytes]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated header)")
    try:
        header = json.loads(raw[len(MAGIC):end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({exc})") from None
    payload = raw[end + 1:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: corrupt checkpoint (payload {len(payload)} bytes, "
                              f"header says {header.get('payload_bytes')})")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: corrupt checkpoint (checksum mismatch)")
    return header, payload


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None):
    """Load ``(params, optimizer_state_or_None)``, validating every tensor shape.

    When ``expected`` is given, the stored tensors must match its shapes.
    """
    from .training import OptimizerState

    header, payload = read_header(path)
    config = ModelConfig(**header["model"])
    want = (expected or config).shapes()
    arrays = {}
    for sec in header["sections"]:
        arr = np.frombuffer(payload, dtype=sec["dtype"], count=int(np.prod(sec["shape"], dtype=np.int64)),
                            offset=sec["offset"]).reshape(sec["shape"]).copy()
        arrays[sec["name"]] = arr
    params_t = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    for name, shape in want.items():
        if name not in params_t:
            raise CheckpointError(f"{path}: tensor {name!r} missing")
        if tuple(params_t[name].shape) != tuple(shape):
            raise CheckpointError(f"{path}: tensor {name!r} has shape {tuple(params_t[name].shape)}, "
                                  f"expected {tuple(shape)}")
    if expected is not None and expected != config:
        raise CheckpointError(f"{path}: header hyperparameters {config} differ from expected {expected}")
    params = ModelParams(config, params_t, seed=header["seed"])
    state = None
    if header["optimizer"] is not None:
        opt = header["optimizer"]
        state = OptimizerState(
            m={k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")},
            v={k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")},
            step=opt["step"], lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"])
    return params, state

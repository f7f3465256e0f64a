"""Versioned binary checkpoints.

Layout (little-endian)::

    b"GDSRCKPT" | version u32 | header_len u32 | header (UTF-8 JSON) | payload

The header carries the full config text, its digest, the norm stats, the
training step, the trainer PRNG state and a table of parameters (name,
shape, dtype, offset into the payload). The payload is the raw parameter
bytes followed by nothing; a CRC32 over it is stored in the header.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import grad as gc
from .config import PipelineConfig, parse_config_text
from .errors import CheckpointError, CheckpointMismatchError, ConfigError
from .model import GDSRModel
from .raster import NormStats

MAGIC = b"GDSRCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def _jsonable(state):
    if isinstance(state, dict):
        return {k: _jsonable(v) for k, v in state.items()}
    if isinstance(state, np.ndarray):
        return {"__ndarray__": state.tolist(), "dtype": str(state.dtype)}
    if isinstance(state, np.integer):
        return int(state)
    return state


def _from_jsonable(state):
    if isinstance(state, dict):
        if "__ndarray__" in state:
            return np.array(state["__ndarray__"], dtype=state["dtype"])
        return {k: _from_jsonable(v) for k, v in state.items()}
    return state


def save_checkpoint(model: GDSRModel, path: str | Path) -> None:
    table = []
    chunks = []
    offset = 0
    for p in model.named_parameters():
        data = np.ascontiguousarray(p.tensor.data)
        raw = data.astype(data.dtype.newbyteorder("<")).tobytes()
        table.append({"name": p.name, "shape": list(data.shape), "dtype": data.dtype.str.replace(">", "<"),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "config": model.config.to_text(),
        "digest": model.config.digest(),
        "norm_stats": {
            "dsm_global_std": model.stats.dsm_global_std,
            "guide_channel_mean": list(model.stats.guide_channel_mean),
            "guide_channel_std": list(model.stats.guide_channel_std),
        },
        "step": model.step,
        "rng_state": _jsonable(model.rng_state),
        "params": table,
        "payload_size": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(_PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload)


def decode_checkpoint(buf: bytes, expected: PipelineConfig | None = None) -> GDSRModel:
    if len(buf) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint prefix", len(buf))
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 8)
    hend = _PREFIX.size + hlen
    if len(buf) < hend:
        raise CheckpointError(f"truncated header: need {hlen} bytes", len(buf))
    try:
        header = json.loads(buf[_PREFIX.size:hend])
        cfg = parse_config_text(header["config"])
    except (ValueError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"corrupt header: {exc}", _PREFIX.size) from None
    if cfg.digest() != header.get("digest"):
        raise CheckpointError("config digest does not match stored config", _PREFIX.size)
    if expected is not None and expected.digest() != header["digest"]:
        raise CheckpointMismatchError(
            f"checkpoint was trained under config digest {header['digest'][:12]}, "
            f"current config has {expected.digest()[:12]}"
        )
    payload = buf[hend:]
    if len(payload) < header["payload_size"]:
        raise CheckpointError(
            f"truncated payload: expected {header['payload_size']} bytes, found {len(payload)}", len(buf)
        )
    if len(payload) > header["payload_size"]:
        raise CheckpointError("trailing bytes after payload", hend + header["payload_size"])
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointError("payload checksum mismatch", hend)

    ns = header["norm_stats"]
    stats = NormStats(ns["dsm_global_std"], tuple(ns["guide_channel_mean"]), tuple(ns["guide_channel_std"]))
    model = GDSRModel.create(cfg, stats)
    params = {p.name: p for p in model.named_parameters()}
    stored = {e["name"] for e in header["params"]}
    if stored != set(params):
        raise CheckpointError(f"parameter set mismatch: {sorted(stored ^ set(params))}", _PREFIX.size)
    for entry in header["params"]:
        p = params[entry["name"]]
        start = hend + entry["offset"]
        arr = np.frombuffer(payload, dtype=entry["dtype"], count=int(np.prod(entry["shape"], dtype=int)),
                            offset=entry["offset"]).reshape(entry["shape"])
        if arr.shape != p.tensor.shape:
            raise CheckpointError(f"{entry['name']}: shape {arr.shape} != {p.tensor.shape}", start)
        p.tensor.data = arr.astype(arr.dtype.newbyteorder("="))
    model.step = header["step"]
    model.rng_state = _from_jsonable(header["rng_state"])
    return model


def load_checkpoint(path: str | Path, expected: PipelineConfig | None = None) -> GDSRModel:
    return decode_checkpoint(Path(path).read_bytes(), expected)

"""Versioned binary checkpoints: magic, header JSON (architecture, config,
normalization stats, parameter layout), a flat little-endian float64
parameter block, and a trailing SHA-256 checksum over everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .networks import flatten_params, unflatten_params
from .training import NormStats, PolicyConfig, WaypointPolicy

MAGIC = b"WFPC"
VERSION = 1


class ChecksumMismatch(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def save_checkpoint(policy: WaypointPolicy, path: Path) -> Path:
    layout = policy.network.layout()
    header = {
        "architecture": policy.config.architecture,
        "config": policy.config.to_dict(),
        "norm": policy.norm.to_dict(),
        "layout": [[name, list(shape)] for name, shape in layout],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    flat = np.ascontiguousarray(flatten_params(policy.params, layout), dtype="<f8")
    body = MAGIC + struct.pack("<II", VERSION, len(header_bytes)) + header_bytes + flat.tobytes()
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + digest)
    return path


def load_checkpoint(path: Path) -> WaypointPolicy:
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != MAGIC:
        raise VersionMismatch(f"{path} is not a policy checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch(f"{path} failed its checksum (truncated or corrupted)")
    version, header_len = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, supported {VERSION}")
    header = json.loads(body[12 : 12 + header_len].decode())
    flat = np.frombuffer(body[12 + header_len :], dtype="<f8").astype(np.float64)
    layout = [(name, tuple(shape)) for name, shape in header["layout"]]
    params = unflatten_params(flat, layout)
    return WaypointPolicy(
        config=PolicyConfig.from_dict(header["config"]),
        params=params,
        norm=NormStats.from_dict(header["norm"]),
    )

"""Binary checkpoint container: magic, version, config echo, named fp64 blobs.

The router and recognizer checkpoints share this layout and differ only in
their magic bytes. Round trips are bitwise exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class CheckpointVersionError(ValueError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


def write_checkpoint(path, magic: bytes, config: dict, params: dict) -> None:
    """params: ordered mapping name -> float64 array."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            enc = name.encode()
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def read_checkpoint(path, magic: bytes):
    """Returns (config dict, ordered name -> array mapping)."""
    with open(path, "rb") as f:
        got = f.read(4)
        if got != magic:
            raise CheckpointFormatError(
                f"bad checkpoint magic {got!r}, expected {magic!r}"
            )
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        config = json.loads(f.read(blob_len).decode())
        (count,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            buf = f.read(n * 8)
            if len(buf) != n * 8:
                raise CheckpointFormatError(f"truncated blob for parameter {name}")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(
                np.float64
            )
    return config, params


def check_architecture(echo: dict, expected: dict, what: str) -> None:
    """Fail when a checkpoint's config echo disagrees with the requested
    architecture."""
    diffs = sorted(
        k for k in set(echo) | set(expected) if echo.get(k) != expected.get(k)
    )
    if diffs:
        detail = ", ".join(
            f"{k}: checkpoint={echo.get(k)!r} requested={expected.get(k)!r}"
            for k in diffs
        )
        raise ArchitectureMismatchError(f"{what} architecture mismatch: {detail}")

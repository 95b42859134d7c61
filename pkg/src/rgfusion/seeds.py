"""Deterministic seed fan-out.

One user-facing seed drives every random decision in a run. Each consumer
derives its own substream seed with `derive(root, *labels)`, where the labels
name the purpose (e.g. ``derive(seed, "corpus", "train", 17)``). The
derivation hashes the decimal rendering of the root seed and the labels with
BLAKE2b (8-byte digest), so substreams are independent of each other and of
label ordering elsewhere in the program.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive(root: int, *labels) -> int:
    """Derive a substream seed from a root seed and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def generator(seed: int, *labels) -> np.random.Generator:
    """PCG64 generator for the given seed, optionally fanned out by labels."""
    if labels:
        seed = derive(seed, *labels)
    return np.random.Generator(np.random.PCG64(seed))

"""Deterministic seed derivation.

All randomness in the package flows from one root seed. Components never
share a generator; each derives its own child seed from (root, label, index)
via sha256, so results are stable across platforms and across process
boundaries (parallel workers derive the same streams as a serial run).
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(root: int, label: str, index: int = 0) -> int:
    """64-bit seed derived from a root seed, a component label and an index."""
    digest = hashlib.sha256(f"{root}:{label}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng(root: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(root, label, index))

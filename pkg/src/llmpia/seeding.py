"""Seed derivation: every random stream hangs off one master seed."""

import hashlib

import numpy as np


def derive_seed(seed: int, *purpose) -> int:
    """Hash (seed, purpose...) into a 64-bit integer; stable across platforms and runs."""
    key = ":".join([str(int(seed))] + [str(p) for p in purpose]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def derive_rng(seed: int, *purpose) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *purpose))

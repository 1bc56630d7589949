"""Seedable RNG with named stream splitting.

Every consumer (a parameter, a dataset sample, a sampler) derives its own
generator from ``(root_seed, name)`` via SHA-256, so draws are reproducible
no matter in which order streams are created or consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str) -> int:
    """Map (root seed, stream name) to a stable 64-bit seed."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, name)))


class SplitRng:
    """Root RNG handle handing out named substreams."""

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)

    def stream(self, name: str) -> np.random.Generator:
        return stream(self.root_seed, name)

    def split(self, name: str) -> "SplitRng":
        """Child handle whose streams are namespaced under ``name``."""
        return SplitRng(derive_seed(self.root_seed, name))

"""Seeded random streams, one per consumer.

Every stochastic component (init, shuffling, augmentation, attacks, label
noise, ...) draws from its own counter-based generator so that adding or
removing one consumer never shifts the draws seen by another.  Streams are
derived from a single base seed combined with a stable component tag.
"""

import hashlib

import numpy as np

__all__ = ["component_seed", "make_rng", "RngHub"]


def component_seed(seed: int, tag: str) -> int:
    """Derive a 64-bit stream seed from a base seed and a component tag."""
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, "little")) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed: int, tag: str) -> np.random.Generator:
    """Fresh generator for `tag`, independent of all other tags."""
    return np.random.Generator(np.random.Philox(component_seed(seed, tag)))


class RngHub:
    """Hands out one persistent generator per component tag.

    Repeated calls with the same tag return the same generator object, so a
    stream keeps advancing across epochs instead of restarting.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def rng(self, tag: str) -> np.random.Generator:
        if tag not in self._streams:
            self._streams[tag] = make_rng(self.seed, tag)
        return self._streams[tag]

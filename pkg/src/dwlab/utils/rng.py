"""
Seed derivation. Every random consumer gets its own stream from (top-level seed, component label, indices),
so a partial re-run draws exactly what the full run drew for the same items.
"""
import zlib
from typing import Union

import numpy as np


def label_id(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def seed_sequence(seed: int, label: str, *indices: Union[int, str]) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF, label_id(label)]
    for index in indices:
        if isinstance(index, str):
            words.append(label_id(index))
        else:
            if index < 0:
                raise ValueError(f"indices must be non-negative, got {index}")
            words.append(index)
    return np.random.SeedSequence(words)


def derive_rng(seed: int, label: str, *indices: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, label, *indices))


def derive_seed(seed: int, label: str, *indices: Union[int, str]) -> int:
    """A 64-bit child seed, for handing to components that take an integer seed."""
    return int(seed_sequence(seed, label, *indices).generate_state(1, dtype=np.uint64)[0])

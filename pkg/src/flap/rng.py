"""Seeded random streams.

All randomness derives from a single integer seed. Each consumer asks for a
named stream; the stream is a Philox (counter-based) generator keyed by the
seed and a CRC32 of the name, so adding a new stream never perturbs others.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, stream: str = "default") -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(key))

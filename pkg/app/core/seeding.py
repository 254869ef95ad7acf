"""
seeding.py
----------
Named random streams derived from one master seed.

Each stage draws from its own stream ("data", "init", "tcr", "tcr-eval",
"mlc", "aug", "readout", "kmeans"), so adding draws to one stage never shifts
the numbers another stage sees.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init", "tcr", "tcr-eval", "mlc", "aug", "readout", "kmeans")


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(master_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), _stream_key(name)]))


def derive_seed(master_seed: int, name: str) -> int:
    """32-bit integer seed for APIs that take ``random_state`` ints."""
    seq = np.random.SeedSequence([int(master_seed), _stream_key(name)])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def spawn_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds, e.g. one per k-means restart."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]

"""Reproducible substreams from one master seed.

Every stream is a counter-based Philox generator keyed by
``(master_seed, *path)``, so any replication or method can be recomputed
in isolation and results do not depend on scheduling or on which other
streams were consumed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "substream_seed"]


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the given position in the stream tree."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(seq))


def substream_seed(master_seed: int, *path: int) -> int:
    """64-bit integer seed derived for the given position (for chain seeds)."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return int(seq.generate_state(1, np.uint64)[0])

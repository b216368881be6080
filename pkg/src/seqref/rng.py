"""Deterministic random stream derivation.

Every random draw in scenario generation and selfplay comes from a stream
addressed by (seed, *path). Streams with distinct paths are statistically
independent, so resampling in one stream never perturbs draws made from
another. PCG64 keyed through SeedSequence gives the same byte stream on
every platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream addressed by `path` under `seed`.

    Calling twice with the same arguments yields identical fresh streams.
    Path components must be non-negative integers.
    """
    if any(p < 0 for p in path):
        raise ValueError(f"stream path must be non-negative, got {path}")
    ss = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=tuple(path))
    return np.random.Generator(np.random.PCG64(ss))

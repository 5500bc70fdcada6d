"""Named, splittable random streams."""

from __future__ import annotations

import zlib

import numpy as np


def _stream_key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def rng_for(seed: int, *names: str | int) -> np.random.Generator:
    """Return a generator for the stream ``names`` under ``seed``.

    The same (seed, names) pair always yields the same stream, and distinct name paths
    yield statistically independent streams, so callers never share a generator.
    """
    spawn_key = tuple(_stream_key(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))

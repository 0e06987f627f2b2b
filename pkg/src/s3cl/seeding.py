"""Deterministic random-stream derivation.

Every random draw in the package flows from a single integer seed through
named substreams, so that two runs with the same seed are reproducible and
independent components (initialization, per-epoch negative sampling,
k-means restarts, ...) never share a stream.
"""

import zlib

import numpy as np


def stream_rng(seed, name, *indices):
    """Return a generator for the substream ``name`` (plus optional indices).

    The stream key is (seed, crc32(name), *indices), fed to numpy's
    SeedSequence, so streams are stable across runs and platforms.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("ascii"))]
    entropy.extend(int(i) & 0xFFFFFFFFFFFFFFFF for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))

"""Deterministic, splittable random streams.

Every random draw in ccmed comes from a Philox4x64 counter-based generator.
A stream is addressed by ``(seed, *path)``: the path is hashed with
:class:`numpy.random.SeedSequence` into a 64-bit key word, and the final
integer in the path (the replicate index) fills the second key word.
Streams for different replicates are therefore independent and can be
generated in any order or on any thread.

Changing this scheme changes every seeded result; bump ``SCHEME`` if it
ever has to change.
"""

import os

import numpy as np

SCHEME = "philox4x64-seedseq-v1"

# Purpose tags used as the first element of a stream path.
BOOTSTRAP = 1
DATA = 2
SIM_BOOTSTRAP = 3
COVARIANCE = 4
TRUTH = 5


def stream_key(seed, *path):
    """Hash ``(seed, *path)`` into a single uint64 key word."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def replicate_generator(key, r):
    """Generator for replicate ``r`` under a key from :func:`stream_key`."""
    bits = np.random.Philox(key=np.array([key, r], dtype=np.uint64))
    return np.random.Generator(bits)


def generator(seed, *path):
    """Generator for a single named stream."""
    return replicate_generator(stream_key(seed, *path), 0)


def fresh_seed():
    """Draw a seed from system entropy (printed by callers for replay)."""
    return int(np.random.SeedSequence().generate_state(1, np.uint32)[0])


def default_threads():
    """Thread count from ``CCMED_THREADS``; 1 when unset."""
    value = os.environ.get("CCMED_THREADS", "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1

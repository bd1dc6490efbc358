"""Seed derivation and the counter-based bit source used by the walk kernels.

Every random stream in the package is addressed by a root seed plus a tuple of
non-negative integers (environment index, replica index, purpose tag, ...).
The tuple is fed to :class:`numpy.random.SeedSequence` as its ``spawn_key``,
so a stream depends only on its address and never on the order in which
streams are created or consumed.

The walk kernels draw their bits from a SplitMix64-style counter hash:
word ``c`` of a stream ``(key, gamma)`` is ``mix64(key + c * gamma)``.
Any word can be computed without touching the others, which is what lets
several replicas advance in lock-step inside one loop.
"""

import numpy as np
from numba import njit

# purpose tags (last element of a spawn key)
TAG_ENV = 0
TAG_PATH = 1
TAG_WALK = 2
TAG_CLOCK = 3
TAG_BM = 4
TAG_MISC = 5

_MASK64 = (1 << 64) - 1


def seed_sequence(root_seed, *key):
    return np.random.SeedSequence(int(root_seed) & _MASK64, spawn_key=tuple(int(k) for k in key))


def generator(root_seed, *key):
    """Philox-backed generator for the stream addressed by ``(root_seed, *key)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(root_seed, *key)))


def derive_seed(root_seed, *key):
    """A 64-bit integer seed for a child object (an environment, a path)."""
    return int(seed_sequence(root_seed, *key).generate_state(1, np.uint64)[0])


def walk_streams(root_seed, replicas, *key):
    """Counter-hash stream parameters for each replica.

    Returns two uint64 arrays ``(keys, gammas)``; gammas are forced odd so
    distinct streams are distinct sequences, not shifted copies.
    """
    replicas = np.asarray(replicas, dtype=np.int64)
    keys = np.empty(replicas.size, dtype=np.uint64)
    gammas = np.empty(replicas.size, dtype=np.uint64)
    for i, r in enumerate(replicas):
        k, g = seed_sequence(root_seed, *key, int(r), TAG_WALK).generate_state(2, np.uint64)
        keys[i] = k
        gammas[i] = g | np.uint64(1)
    return keys, gammas


@njit(inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit
def counter_words(key, gamma, start, count):
    """Words ``start .. start+count-1`` of one stream (test and audit helper)."""
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = mix64(key + np.uint64(start + i) * gamma)
    return out

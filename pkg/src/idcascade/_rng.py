"""Counter-based random number streams.

Every stochastic routine in the package draws from a Philox generator whose
128-bit key encodes (global seed, replica index, module tag).  Distinct keys
give statistically independent streams, so replicas are reproducible and can
be generated in any order or in parallel without coordination.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x):
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def tag_hash(tag):
    """Stable 64-bit hash of a module tag string."""
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_key(seed, replica=0, tag="field"):
    """128-bit Philox key for the (seed, replica, tag) stream."""
    seed = int(seed) & _MASK64
    lane = _splitmix64((int(replica) & _MASK64) ^ tag_hash(tag))
    return (lane << 64) | seed


def make_generator(seed, replica=0, tag="field"):
    """A numpy Generator on the counter-based stream for (seed, replica, tag)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica, tag)))

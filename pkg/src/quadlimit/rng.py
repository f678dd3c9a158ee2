"""Named, splittable random streams on top of numpy's counter-based Philox.

Every stochastic routine in the package derives its generators here. A stream
is addressed by (seed, *tags): the tags are hashed with the seed into a Philox
key, so streams are independent of each other and of the order they are
created in. Replicated simulations split their replicates into fixed-size
logical blocks, one stream per block; merging per-block results is then
associative, which is what makes chunked runs bit-identical regardless of the
chunk count.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Replicates per logical RNG block. Chunks are groups of whole blocks, so the
# stream that produced any given replicate never depends on the chunking.
REPLICATE_BLOCK = 8192


def philox_key(seed: int, *tags) -> np.ndarray:
    """Derive a 2-word Philox key from a seed and a tuple of tags."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for t in tags:
        h.update(b"\x1f")
        h.update(str(t).encode())
    digest = h.digest()
    return np.frombuffer(digest, dtype=np.uint64)[:2]


def stream(seed: int, *tags) -> np.random.Generator:
    """A Generator whose state depends only on (seed, tags)."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, *tags)))


def block_streams(seed: int, n_samples: int, *tags):
    """Yield (start, stop, generator) triples covering range(n_samples).

    The block boundaries are fixed by REPLICATE_BLOCK, never by the caller, so
    any grouping of blocks into chunks reproduces the same draws.
    """
    b = 0
    start = 0
    while start < n_samples:
        stop = min(start + REPLICATE_BLOCK, n_samples)
        yield start, stop, stream(seed, *tags, "block", b)
        b += 1
        start = stop

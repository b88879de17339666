"""Counter-based random streams.

Every random draw in the package flows through `keyed_rng`, which derives a
Philox generator from a tuple of key parts (ints and strings).  Streams are
therefore independent of call order: the same key always yields the same
stream, which is what makes dropout masks, augmentations, and dataset
generation reproducible sample-by-sample.
"""

import hashlib

import numpy as np


def keyed_rng(*parts: int | str) -> np.random.Generator:
    """Return a generator keyed deterministically by `parts`."""
    raw = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

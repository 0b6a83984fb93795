"""Counter-based seed derivation.

Every random consumer gets its own seed derived from the master seed and a
tuple of labels, e.g. ``derive_seed(master, "tune", 3, "fold", 1)``. Labels are
hashed to integers so that stages can be re-run in isolation and still see
the same streams.
"""

import zlib

import numpy as np


def _key(label):
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(master, *labels):
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key(x) for x in labels))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(master, *labels):
    return np.random.default_rng(derive_seed(master, *labels))

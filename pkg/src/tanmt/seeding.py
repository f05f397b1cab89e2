"""Named, deterministic seed derivation from one global seed."""

import zlib

import numpy as np


def derive_seed(seed, *names):
    """Derive a child seed from ``seed`` and a path of names.

    The derivation only depends on its arguments, so every component of a run
    can be reproduced from the global seed alone.
    """
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(seed, *names):
    return np.random.default_rng(derive_seed(seed, *names))

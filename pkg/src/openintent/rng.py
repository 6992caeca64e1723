"""Named, independent random streams derived from one integer seed."""

import zlib

import numpy as np


def stream(seed, name):
    """A generator keyed by ``(seed, name)``; different names never share state."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])

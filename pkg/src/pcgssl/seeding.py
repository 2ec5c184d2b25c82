"""Splittable seeding.

Every random stream is ``derive_rng(master_seed, *path)`` where ``path`` is
a sequence of stage names and integers, e.g. ``("ssl", "epoch", 3)``.
String components are mapped to integers with CRC-32, then the whole path
becomes the ``spawn_key`` of a ``numpy.random.SeedSequence`` rooted at the
master seed.  Two different paths give independent streams; the same path
always gives the same stream, regardless of what else ran before.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed_sequence(master_seed, *path):
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(_key(p) for p in path))


def derive_rng(master_seed, *path):
    return np.random.default_rng(derive_seed_sequence(master_seed, *path))


def derive_int(master_seed, *path):
    return int(derive_seed_sequence(master_seed, *path).generate_state(1)[0])

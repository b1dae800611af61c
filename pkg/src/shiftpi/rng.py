"""Named, counter-based random substreams.

Every random draw in the package comes from ``substream(root, *names)``: the
name path is hashed into a SeedSequence spawn key and fed to a Philox bit
generator, so a stream such as ``perm/3/pair/0-4`` is reproducible on its own,
whatever else ran before it.
"""
import hashlib

import numpy as np


def _name_key(names):
    path = "/".join(str(n) for n in names)
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def seed_sequence(root_seed, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root_seed), spawn_key=_name_key(names))


def substream(root_seed, *names) -> np.random.Generator:
    """Generator for the stream ``names`` under ``root_seed``."""
    return np.random.Generator(np.random.Philox(seed_sequence(root_seed, *names)))


def derive_seed(root_seed, *names) -> int:
    """A 63-bit integer seed for APIs that take plain integers."""
    return int(seed_sequence(root_seed, *names).generate_state(2, np.uint64)[0] >> np.uint64(1))

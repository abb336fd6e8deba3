"""Seed handling: every random draw in the package comes from a keyed Philox stream.

A stream is identified by a master seed plus a tuple of non-negative integer
keys (field index, path index, step block, ...).  The Philox generator is
counter-based, so two streams with different keys never overlap and the
result of a draw does not depend on the order in which streams are created.
"""

from __future__ import annotations

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


KEY_MAX = 2**32 - 1


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for ``(seed, *keys)``.

    The key tuple is prefixed with its length: ``SeedSequence`` zero-pads short
    entropy, so ``(a,)`` and ``(a, 0)`` would otherwise collide.
    """
    keys = tuple(int(k) for k in keys)
    if any(not 0 <= k <= KEY_MAX for k in keys):
        raise ValueError(f"stream keys must lie in [0, {KEY_MAX}], got {keys}")
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(len(keys),) + keys)
    return np.random.Generator(np.random.Philox(ss))


# Fixed tags keep the streams of different consumers apart even when they share
# a master seed.
TAG_FIELD = 1
TAG_PATH_START = 2
TAG_PATH_NOISE = 3
TAG_BOOTSTRAP = 4
TAG_PROXY = 5
TAG_PERIODIC = 6

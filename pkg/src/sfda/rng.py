"""Reproducible random substreams.

Every random draw is tied to a key such as ``(seed, replicate, group)``
rather than to a position in one shared stream, so results do not depend
on how work is split across workers.
"""

import os

import numpy as np

from sfda.errors import ValidationError


def substream(seed, *key):
    """Independent generator for ``seed`` and a tuple of nonnegative ints."""
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise ValidationError(f"seed must be a nonnegative integer, got {seed!r}")
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    )


def derived_seed(seed, *key):
    """A 63-bit integer seed deterministically derived from ``(seed, key)``."""
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(state.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def worker_count(default=1):
    """Worker cap from ``SFDA_THREADS`` (at least 1)."""
    raw = os.environ.get("SFDA_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"SFDA_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)

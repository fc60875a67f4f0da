"""Seed derivation and counter-based random streams.

All randomness in this package flows through Philox (a counter-based
generator), keyed by integer tuples.  The mixing function is
``SeedSequence((root, *ids))``: two streams with different id tuples are
independent, and a stream is reconstructable from its tuple alone.  This is
what makes replays and parallel execution schedule-independent: a consumer
never draws from a shared stateful generator, it derives its own stream.

Stream-id conventions used across the package:

* dataset generation: ``(seed, TAG_DATA)``
* per-user mechanism noise, one-user API: ``(seed, TAG_USER, user_id)``
* batched mechanism noise: ``(seed, TAG_BATCH)`` with row ``i`` of every
  batched draw belonging to user ``i`` (user-indexed, so the multiset of
  per-user draws does not depend on execution order)
* benchmark trials: ``(base_seed, grid_index, trial)``
"""

from __future__ import annotations

import numpy as np

TAG_DATA = 0xD47A
TAG_USER = 0x05E8
TAG_BATCH = 0xBA7C
TAG_TRUTH = 0x7907

__all__ = [
    "TAG_DATA",
    "TAG_USER",
    "TAG_BATCH",
    "TAG_TRUTH",
    "stream",
    "derive_seed",
]


def stream(*ids: int) -> np.random.Generator:
    """Philox generator for the stream identified by an integer tuple."""
    seq = np.random.SeedSequence(tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(*ids: int) -> int:
    """64-bit seed mixed from an integer tuple (documented row-seed function).

    ``derive_seed(base_seed, grid_index, trial)`` is the per-row seed the
    benchmark records; feeding it back to any generator in this package
    reproduces the row.
    """
    seq = np.random.SeedSequence(tuple(int(i) for i in ids))
    return int(seq.generate_state(1, np.uint64)[0])

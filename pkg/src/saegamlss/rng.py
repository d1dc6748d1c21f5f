"""Keyed random substreams.

Every stochastic routine takes a seed (int or ``SeedSequence``) and derives
child streams from a tuple key, e.g. ``(t, b)`` for bootstrap replicate ``b``
of simulation replicate ``t``.  A stream depends only on the root entropy and
its key, never on how work is split across workers.
"""
from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence | None"


def as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        raise TypeError("pass an int seed or SeedSequence, not a Generator")
    return np.random.SeedSequence(seed)


def child(seed, *key: int) -> np.random.SeedSequence:
    """SeedSequence for ``key`` below ``seed``."""
    ss = as_seedseq(seed)
    return np.random.SeedSequence(
        entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key)
    )


def substream(seed, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child(seed, *key)))

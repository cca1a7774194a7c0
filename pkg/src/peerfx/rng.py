"""Deterministic random-stream derivation.

All randomness in the package flows from a single master seed. Independent
stages (network draw, covariate draw, replicate r, ...) get their own
substream keyed by name and index, so adding a consumer never perturbs the
draws seen by existing ones, and replicates can run in any order (or in
parallel) with identical results.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        # crc32 is stable across platforms and Python versions
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return a Generator for the substream identified by ``path``.

    Parameters
    ----------
    seed : int
        Master seed for the whole run.
    path : int or str
        Stream coordinates, e.g. ``("rep", 17)`` or ``("network",)``.
    """
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))

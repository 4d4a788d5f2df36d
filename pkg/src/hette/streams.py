"""Deterministic random-number substreams.

Every random object in the package (bootstrap multiplier vectors, simulated
datasets, Monte Carlo repetitions) draws from a PCG64 generator seeded by a
``SeedSequence`` over an integer path ``(master_seed, *path)``. Identical
paths give bit-identical streams regardless of execution order or worker
count, which is what makes parallel runs reproducible.
"""

from __future__ import annotations

import numpy as np

from .core import InputError

__all__ = ["substream", "multipliers"]

# Fixed stream tags so different consumers of the same master seed never
# collide (new tags must be appended, never renumbered).
TAG_BOOTSTRAP = 1
TAG_SIMULATE = 2
TAG_REPLICATION = 3

_SQRT5 = np.sqrt(5.0)
# Mammen two-point distribution: mean 0, variance 1, third moment 1.
_MAMMEN_LOW = -(_SQRT5 - 1.0) / 2.0
_MAMMEN_HIGH = (_SQRT5 + 1.0) / 2.0
_MAMMEN_P_LOW = (_SQRT5 + 1.0) / (2.0 * _SQRT5)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *path)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def multipliers(kind: str, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. bootstrap multipliers of the named kind.

    All kinds have mean 0, unit variance, and finite fourth moment:

    - ``"rademacher"``: +-1 with probability 1/2 each;
    - ``"normal"``: standard normal;
    - ``"mammen"``: the two-point distribution at ``-(sqrt(5)-1)/2`` and
      ``(sqrt(5)+1)/2`` with probabilities ``(sqrt(5)+1)/(2 sqrt(5))`` and its
      complement.
    """
    if kind == "rademacher":
        return rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    if kind == "normal":
        return rng.standard_normal(n)
    if kind == "mammen":
        return np.where(rng.random(n) < _MAMMEN_P_LOW, _MAMMEN_LOW, _MAMMEN_HIGH)
    raise InputError(f"unknown multiplier kind {kind!r}")

"""Seeded random streams.

Every random draw in the package goes through a :class:`numpy.random.Generator`
backed by PCG64. Independent streams for different purposes (weight init,
robustness noise, batch sampling, gradient noise, Monte-Carlo draws) are
derived with :meth:`numpy.random.SeedSequence.spawn`, so adding draws to one
stream never shifts another.

Gaussian variates are produced by inverse-CDF sampling: a 52-bit integer ``k``
is mapped to ``u = (k + 0.5) / 2**52``, strictly inside (0, 1), and pushed
through :func:`scipy.special.ndtri`. This keeps the transform fixed across
numpy releases (numpy's own ``normal`` uses a ziggurat whose output is not
part of its stability contract).
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_TWO_52 = 1 << 52

# Named child streams, in spawn order. Never reorder: it changes every result.
STREAMS = ("init", "gamma", "batch", "grad_noise", "pretrain", "certify", "attack")


def make_rng(seed) -> np.random.Generator:
    """Return a PCG64 generator for an int seed or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(seed))


def spawn(seed, n: int) -> list[np.random.Generator]:
    """Split ``seed`` into ``n`` independent generators."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return [make_rng(child) for child in ss.spawn(n)]


def named_streams(seed: int) -> dict[str, np.random.Generator]:
    return dict(zip(STREAMS, spawn(seed, len(STREAMS))))


def standard_normal(rng: np.random.Generator, size=None) -> np.ndarray:
    """Inverse-CDF standard normal draws."""
    k = rng.integers(0, _TWO_52, size=size, dtype=np.int64)
    u = (k.astype(np.float64) + 0.5) / _TWO_52
    return ndtri(u)

"""Seeded random streams.

All randomness flows through numpy's PCG64 generator.  Independent streams
are derived from integer tag tuples via SeedSequence, so any (seed, epoch,
batch, purpose) cell gets its own reproducible stream regardless of
execution order or thread scheduling.

Dirichlet draws are built from normalized Gamma variates and Beta draws
from two Gamma variates, so the augmentation sampling procedure is fully
pinned down by the Gamma stream.
"""

import numpy as np

# purpose tags for stream derivation
SHUFFLE = 1
OBJECTIVE = 2
ATTACK = 3
AUGMIX = 4
DATA = 5
INIT = 6
EVAL = 7


def stream(*tags):
    """A PCG64 generator keyed by a tuple of non-negative ints."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(tags))))


def child_seed(rng):
    """One 63-bit seed drawn from rng, for handing to a derived stream."""
    return int(rng.integers(0, 2**63 - 1))


def dirichlet(rng, alpha, n):
    g = rng.gamma(alpha, 1.0, size=n)
    total = g.sum()
    if total <= 0.0:  # all-zero gammas are a measure-zero event; keep it safe
        return np.full(n, 1.0 / n)
    return g / total


def beta(rng, a, b):
    x = rng.gamma(a, 1.0)
    y = rng.gamma(b, 1.0)
    if x + y <= 0.0:
        return 0.5
    return float(x / (x + y))

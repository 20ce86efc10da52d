"""Reproducible random streams.

Every stochastic routine in the package draws from a counter-based Philox
generator keyed by ``(seed, replicate)``.  Replicate streams are derived with
``SeedSequence(seed, spawn_key=(replicate,))``, so an ensemble of replicates
is reproducible independently of execution order, chunking, or worker count.

Within one stream the draw order is fixed: each step consumes one uniform for
the player coin and then one uniform for the column choice.  The vectorised
ensemble engine and the scalar simulator therefore produce bit-identical
trajectories for the same ``(seed, replicate)``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream_generator"]


def stream_generator(seed: int, replicate: int | None = None) -> np.random.Generator:
    """Return the Philox generator for ``seed`` or for one derived replicate stream."""
    if replicate is None:
        ss = np.random.SeedSequence(seed)
    else:
        if replicate < 0:
            raise ValueError("replicate index must be non-negative")
        ss = np.random.SeedSequence(seed, spawn_key=(replicate,))
    return np.random.Generator(np.random.Philox(ss))

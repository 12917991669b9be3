"""Counter-based random streams keyed by (master seed, replica, layer)."""
from __future__ import annotations

import numpy as np


def stream(seed: int, replica: int = 0, layer: int = 0) -> np.random.Generator:
    """Independent Philox stream for one (seed, replica, layer) triple.

    Streams for distinct keys are statistically independent and do not
    depend on the order in which they are requested, so replicas can be
    generated in any order or in parallel.
    """
    if seed < 0 or replica < 0 or layer < 0:
        raise ValueError("seed, replica and layer must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), int(layer)))
    return np.random.Generator(np.random.Philox(ss))

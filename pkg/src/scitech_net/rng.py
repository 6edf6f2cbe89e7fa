"""Seeded random streams.

Every draw comes from a Philox (counter-based) generator whose key is derived from
``(seed, replication, stage)``. Streams therefore do not depend on the order or the
process in which replications are evaluated.
"""

from __future__ import annotations

import numpy as np

STAGES = {
    "covariates": 0,
    "fixed_effects": 1,
    "heterogeneity": 2,
    "links": 3,
    "cross_links": 4,
}

MAX_SEED = 2**64 - 1


def stream(seed: int, replication: int, stage: str | int) -> np.random.Generator:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    stage_id = STAGES[stage] if isinstance(stage, str) else int(stage)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), stage_id))
    return np.random.Generator(np.random.Philox(ss))

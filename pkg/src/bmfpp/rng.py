"""Deterministic random streams derived from a master seed and context labels.

Every stochastic operation in the package draws from a stream obtained via
`derive_stream(master_seed, labels)`. Distinct label tuples give statistically
independent streams, and the same (seed, labels) pair always reproduces the
same sequence, so results do not depend on worker count or execution order.
"""

from __future__ import annotations

import numpy as np

RngStream = np.random.Generator

# label vocabulary for the Gibbs scheduler: (phase, block_i, block_j,
# purpose, row, sweep)
PURPOSE_U_HYPER = 0
PURPOSE_U_ROW = 1
PURPOSE_V_HYPER = 2
PURPOSE_V_ROW = 3
PURPOSE_U_INIT = 4
PURPOSE_V_INIT = 5
PURPOSE_U_HYPER_INIT = 6
PURPOSE_V_HYPER_INIT = 7


def derive_stream(master_seed: int, labels) -> RngStream:
    """Return the generator keyed by (master_seed, *labels).

    Labels must be non-negative integers. Uses numpy's SeedSequence spawn-key
    mechanism, which is designed to produce independent streams for distinct
    key tuples.
    """
    key = tuple(int(x) for x in labels)
    if any(x < 0 for x in key):
        raise ValueError(f"stream labels must be non-negative, got {key}")
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))

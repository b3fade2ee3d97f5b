"""Named, reproducible random streams.

Every random decision in a run is drawn from a stream derived from
(master seed, trial id, role name).  Re-running a single trial in
isolation therefore reproduces exactly what it did inside a batch.
"""

from __future__ import annotations

import zlib

import numpy as np

# Stream roles used across the package.
ROLE_SCENARIO = "scenario"
ROLE_TRUTH = "truth"
ROLE_PLANNER = "planner"
ROLE_POLICY = "policy"
ROLE_BELIEF = "belief"


def _role_key(role: str) -> int:
    # crc32 instead of hash(): stable across processes and runs.
    return zlib.crc32(role.encode("utf-8"))


def derive_rng(master_seed: int, trial: int = 0, role: str = "default",
               extra: int = 0) -> np.random.Generator:
    """Return a Generator for the named stream.

    `extra` disambiguates per-agent streams within a role.
    """
    seq = np.random.SeedSequence([int(master_seed), int(trial), _role_key(role), int(extra)])
    return np.random.Generator(np.random.PCG64(seq))

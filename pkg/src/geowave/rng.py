"""Counter-based random streams.

Every stochastic draw in the package goes through `stream`, which derives a
Philox key from (master seed, *path) -- e.g. (seed, trajectory, step) for the
solver or (seed, trial) for Monte Carlo probes.  Streams are therefore
independent of scheduling: thread count and evaluation order cannot change a
single sampled number.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream(master_seed: int, *path: int) -> np.random.Generator:
    """Return a Generator keyed by the integer tuple (master_seed, *path)."""
    payload = ",".join(str(int(p)) for p in (master_seed, *path)).encode()
    digest = hashlib.sha256(payload).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

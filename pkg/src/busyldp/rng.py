"""Counter-based random streams keyed by (experiment, replication).

Every stream is a Philox generator whose key is derived from the pair of
identifiers, so a replication can be regenerated in isolation and distinct
replications never share state.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["make_stream", "as_generator", "experiment_key"]


def experiment_key(experiment: int | str) -> int:
    """Map an experiment identifier to a 64-bit integer."""
    if isinstance(experiment, (int, np.integer)):
        return int(experiment) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(experiment).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_stream(experiment: int | str = 0, replication: int = 0) -> np.random.Generator:
    """Return an independent generator for one (experiment, replication) pair."""
    seq = np.random.SeedSequence([experiment_key(experiment), int(replication)])
    key = seq.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def as_generator(stream) -> np.random.Generator:
    """Accept a Generator, an int seed, or an (experiment, replication) tuple."""
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, tuple):
        return make_stream(*stream)
    if stream is None:
        return make_stream(0, 0)
    return make_stream(stream, 0)

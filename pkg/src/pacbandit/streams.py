"""Per-replica random streams.

Replica ``r`` of suite ``s`` draws from
``Generator(PCG64(SeedSequence(master_seed, spawn_key=(s, r))))``. The key is a
pure function of (seed, suite, replica index), so adding replicas or changing
how they are scheduled never changes an existing replica's stream.
"""
from __future__ import annotations

import numpy as np

SUITE_KEYS = {"bandit": 0, "mgf": 1, "theorem1": 2, "lemmas": 3, "bounds": 4, "conditional": 5}


def replica_rng(master_seed: int, replica: int, suite: str = "bandit") -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(SUITE_KEYS[suite], int(replica)))
    return np.random.Generator(np.random.PCG64(ss))


class ReplicaNoise:
    """Uniform noise for a batch of replicas, handed out in blocks of rounds."""

    def __init__(self, master_seed: int, replicas, suite: str, dim: int):
        self.replicas = np.asarray(replicas, dtype=np.int64)
        self.dim = dim
        self._gens = [replica_rng(master_seed, r, suite) for r in self.replicas]

    def block(self, n_rounds: int) -> np.ndarray:
        """Array of shape (n_rounds, replicas, dim)."""
        out = np.empty((n_rounds, len(self._gens), self.dim))
        for i, g in enumerate(self._gens):
            out[:, i, :] = g.random((n_rounds, self.dim))
        return out

    def rounds(self, T: int, block: int = 512):
        """Yield one (replicas, dim) slice per round for ``T`` rounds."""
        done = 0
        while done < T:
            n = min(block, T - done)
            chunk = self.block(n)
            yield from chunk
            done += n

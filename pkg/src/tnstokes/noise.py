"""Counter-based Wiener increments.

Increment ``n`` of trajectory ``l`` is a pure function of
``(master_seed, l, n)``: the Philox key comes from the seed and the
trajectory index, the counter is ``n - 1``, and the first 64-bit output of
that block is mapped to a standard normal by inverse-CDF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

_TWO_M53 = 2.0 ** -53


def _key(master_seed: int, trajectory_index: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(trajectory_index)])
    return ss.generate_state(2, dtype=np.uint64)


def _to_normal(raw: np.ndarray) -> np.ndarray:
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def standard_normal(master_seed: int, trajectory_index: int, n: int) -> float:
    """The ``n``-th (1-based) standard normal of a trajectory, drawn in isolation."""
    if n < 1:
        raise ValueError("increments are numbered from 1")
    counter = np.array([n - 1, 0, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=_key(master_seed, trajectory_index), counter=counter)
    return float(_to_normal(bg.random_raw(1))[0])


@dataclass
class NoisePath:
    """Wiener increments ``Delta_n W ~ N(0, tau)`` for ``n = 1..N``."""

    master_seed: int
    trajectory_index: int
    tau: float
    N: int
    increments: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        bg = np.random.Philox(key=_key(self.master_seed, self.trajectory_index),
                              counter=np.zeros(4, dtype=np.uint64))
        raw = bg.random_raw(4 * self.N)[::4]
        self.increments = np.sqrt(self.tau) * _to_normal(raw)

    def __getitem__(self, n: int) -> float:
        """Increment ``Delta_n W`` (1-based)."""
        if not 1 <= n <= self.N:
            raise IndexError(n)
        return float(self.increments[n - 1])

    def increment(self, n: int) -> float:
        return np.sqrt(self.tau) * standard_normal(self.master_seed, self.trajectory_index, n)

    @classmethod
    def zero(cls, N: int) -> "NoisePath":
        """All-zero increments (deterministic runs)."""
        return cls(0, 0, 0.0, N)

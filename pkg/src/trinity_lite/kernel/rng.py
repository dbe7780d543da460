"""Fully specified 64-bit linear congruential PRNG.

Every stochastic choice in the pipeline (splits, weight init, epoch
shuffles, hyperparameter draws) goes through this generator so runs are
reproducible across platforms and process counts.
"""

from __future__ import annotations

import math

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
_MASK = (1 << 64) - 1


class Lcg:
    """state' = state * MULTIPLIER + INCREMENT (mod 2^64)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_uint64(self) -> int:
        self.state = (self.state * MULTIPLIER + INCREMENT) & _MASK
        return self.state

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 bits of the state."""
        return (self.next_uint64() >> 11) * 2.0 ** -53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + self.uniform() * (hi - lo)

    def log_uniform(self, lo: float, hi: float) -> float:
        return math.exp(self.uniform_in(math.log(lo), math.log(hi)))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, descending index."""
        for i in range(len(items) - 1, 0, -1):
            j = int(self.uniform() * (i + 1))
            items[i], items[j] = items[j], items[i]

    def choice(self, seq):
        return seq[int(self.uniform() * len(seq))]


def _mix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_stream(seed: int, *keys: int) -> Lcg:
    """Independent substream keyed by integers, e.g. (seed, trial_index).

    Mixes each key through an avalanche function so neighbouring seeds or
    indices do not produce correlated streams.
    """
    h = _mix64(seed & _MASK)
    for k in keys:
        h = _mix64(h ^ (k & _MASK))
    return Lcg(h)

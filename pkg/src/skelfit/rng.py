"""Deterministic random number generation.

All stochastic behaviour in this package (synthetic data, init noise) runs on
SplitMix64 so that a seed fully determines every output, bit for bit, on any
platform. numpy's Generator is deliberately not used here: its jumping and
Gaussian algorithms are implementation details we would have to pin.

Stream splitting: ``stream_seed(seed, i)`` equals the ``(i+1)``-th raw output
of ``SplitMix64(seed)``, so per-item streams never overlap the master stream
and are independent of how many items precede them.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Vigna's constants)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_seed(seed: int, index: int) -> int:
    """Seed for the ``index``-th independent substream of ``seed``."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    return mix64((seed + (index + 1) * _GAMMA) & _MASK)


class SplitMix64:
    """SplitMix64 generator with float and Gaussian helpers.

    Floats are ``(next_u64() >> 11) * 2**-53``, uniform on [0, 1).
    Gaussians come from Box-Muller; the paired value is cached, so draw
    order is observable and part of the contract.
    """

    __slots__ = ("_seed", "_state", "_gauss")

    def __init__(self, seed: int):
        self._seed = seed & _MASK
        self._state = self._seed
        self._gauss: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return mix64(self._state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, low: float, high: float) -> float:
        if not high >= low:
            raise ValueError(f"uniform bounds out of order: [{low}, {high}]")
        return low + (high - low) * self.random()

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if self._gauss is not None:
            z = self._gauss
            self._gauss = None
        else:
            # 1 - u maps [0, 1) to (0, 1], keeping log() finite.
            u1 = 1.0 - self.random()
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._gauss = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * z

    def spawn(self, index: int) -> "SplitMix64":
        """Independent substream; derived from the constructor seed, not
        from the current state, so spawning commutes with drawing."""
        return SplitMix64(stream_seed(self._seed, index))

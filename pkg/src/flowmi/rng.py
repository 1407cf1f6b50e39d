"""Deterministic random number generation built on SplitMix64.

All stochastic behaviour in the package flows through :class:`Rng` so that a
single integer seed pins every draw.  The raw 64-bit integer stream is exact
integer arithmetic and therefore identical on every platform; floating point
values derived from it only involve operations (scaling, log, sqrt, sin, cos)
that are deterministic for a given libm, which is sufficient for the
reproducibility contracts in this package (byte-identical reruns on one
machine).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once.

    Returns ``(value, next_state)`` where both are unsigned 64-bit integers.
    """
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    z = z ^ (z >> 31)
    return z, state


def derive_seed(seed: int, label: str) -> int:
    """Derive an independent stream seed from a base seed and a text label.

    Folding the label bytes through the SplitMix64 mixer decorrelates streams
    for different labels even when the base seeds are small consecutive
    integers.
    """
    x = seed & _MASK64
    for b in label.encode("utf-8"):
        x, _ = splitmix64(x ^ b)
    x, _ = splitmix64(x)
    return x


class Rng:
    """SplitMix64-backed generator with scalar and vector draws."""

    __slots__ = ("_state", "_spare_normal")

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare_normal = None

    def u64(self) -> int:
        """Next raw unsigned 64-bit integer."""
        value, self._state = splitmix64(self._state)
        return value

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.u64() >> 11) * _INV_2_53

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def normal(self) -> float:
        """Standard normal via Box-Muller; the second draw of each pair is
        cached so consecutive calls consume one uniform pair per two values."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # Offset by one ulp so u1 lies in (0, 1] and log(u1) is finite.
        u1 = ((self.u64() >> 11) + 1) * _INV_2_53
        u2 = (self.u64() >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        a = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(a)
        return r * math.cos(a)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling, free of modulo
        bias for every n."""
        if n <= 0:
            raise ContractError(f"below: n must be positive, got {n}")
        threshold = ((1 << 64) // n) * n
        while True:
            u = self.u64()
            if u < threshold:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, label: str) -> "Rng":
        """Independent generator keyed by a label, without consuming from
        this generator's stream."""
        return Rng(derive_seed(self._state, label))

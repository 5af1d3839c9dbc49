"""Portable seeded randomness.

Channel-drop masks and per-trial seed derivation use SplitMix64, a 64-bit
counter-based generator defined entirely in integer arithmetic.  The same
(seed, arguments) therefore produce the same outputs on every platform and
Python build, independent of numpy version or thread schedule.

Gaussian synthesis (see :mod:`nubblematch.harness`) uses numpy's PCG64
streams seeded through :func:`derive_seed`; those are deterministic per
process environment but are not covered by the cross-platform guarantee.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    """SplitMix64 finalizer (Steele, Lea & Flood 2014)."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


class SplitMix64:
    """Minimal SplitMix64 stream over a 64-bit state."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix64(self._state)

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) via unbiased rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % bound)
        while True:
            draw = self.next_u64()
            if draw < limit:
                return draw % bound


def derive_seed(*parts: int) -> int:
    """Fold integer components into one 64-bit seed.

    The derivation is a fixed chain of SplitMix64 finalizer steps:
    ``acc := mix64((acc + mix64(part)) mod 2^64)`` starting from the golden
    gamma constant.  Experiment code derives one seed per (base seed, ratio
    index, trial index, instance index) cell so that results never depend on
    iteration order or parallel scheduling.
    """
    acc = _GOLDEN
    for part in parts:
        acc = _mix64((acc + _mix64(part & _MASK64)) & _MASK64)
    return acc


def sample_without_replacement(n: int, k: int, seed: int) -> tuple[int, ...]:
    """Draw ``k`` distinct integers from [0, n) uniformly, sorted ascending.

    Uses a partial Fisher-Yates shuffle driven by SplitMix64, so the result
    is a pure function of (n, k, seed) on every platform.
    """
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} distinct values from range({n})")
    if k == 0:
        return ()
    stream = SplitMix64(seed)
    pool = list(range(n))
    for i in range(k):
        j = i + stream.next_below(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return tuple(sorted(pool[:k]))

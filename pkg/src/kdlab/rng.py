"""Deterministic randomness built on the SplitMix64 mixing generator.

All stochasticity in the package (weight init, shuffling, random masks,
dropout) flows through this module so that runs are bit-reproducible
across platforms. The generator is the standard SplitMix64 sequence:

    state_{k+1} = state_k + 0x9E3779B97F4A7C15          (mod 2^64)
    output(z)   = mix(z) with the two odd constants
                  0xBF58476D1CE4E5B9 and 0x94D049BB133111EB

Every stochastic stage draws a *named* sub-seed via :func:`sub_seed`
(root seed XOR FNV-1a hash of the name, then mixed), so any stage can be
replayed in isolation from the run manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

ALGORITHM = "splitmix64"


def mix64(z: int) -> int:
    """SplitMix64 finalizer: avalanche a 64-bit value."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(data: str) -> int:
    """FNV-1a hash of a UTF-8 string, used for named sub-seeds."""
    h = _FNV_OFFSET
    for byte in data.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def sub_seed(root_seed: int, name: str) -> int:
    """Derive the named sub-seed for a stochastic stage."""
    return mix64((root_seed & _MASK64) ^ fnv1a64(name))


@dataclass
class RngState:
    """Serializable generator state: a single 64-bit integer."""

    state: int
    algorithm: str = field(default=ALGORITHM)

    def __post_init__(self):
        self.state &= _MASK64
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")


class Rng:
    """SplitMix64 stream with vectorized draws.

    Bulk draws advance the scalar state by the number of outputs consumed,
    so interleaving bulk and scalar calls stays reproducible.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    @property
    def state(self) -> RngState:
        return RngState(self._state)

    def set_state(self, state: RngState) -> None:
        self._state = state.state

    def _raw_block(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs as a uint64 array."""
        ks = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self._state) + np.uint64(_GAMMA) * ks
        self._state = (self._state + _GAMMA * n) & _MASK64
        z = states
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def next_raw(self) -> int:
        return int(self._raw_block(1)[0])

    def uniform(self, shape=None) -> np.ndarray | float:
        """Doubles in [0, 1) with 53 random bits."""
        if shape is None:
            return float(self.uniform((1,))[0])
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        """Standard normals via Box-Muller, scaled by `scale`."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # u1 in (0, 1] so log never sees zero
        u1 = ((self._raw_block(m) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (self._raw_block(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (out * scale).reshape(shape)

    def randint(self, upper: int) -> int:
        """Integer in [0, upper). Derived from a uniform double; the
        O(2^-53) modulo bias is irrelevant at desk scale."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        return min(int(self.uniform() * upper), upper - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation: stable argsort of n uniform keys.

        Ties between 53-bit keys are astronomically unlikely and broken
        by index, so the result is exchangeable and reproducible.
        """
        keys = self.uniform((n,))
        return np.argsort(keys, kind="stable").astype(np.int64)

    def shuffle(self, items: list) -> None:
        """In-place shuffle via :meth:`permutation`."""
        order = self.permutation(len(items))
        items[:] = [items[i] for i in order]

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order by draw."""
        if k > n:
            raise ValueError(f"cannot sample {k} from {n}")
        return [int(i) for i in self.permutation(n)[:k]]

"""Seeded 32-bit hashing shared by the sketch, the pool and the baselines.

Every function has a scalar form working on Python integers and an array
form working on numpy arrays; both produce bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

HASH_SPACE = 1 << 32

DEFAULT_A0 = 0x5EED0001
DEFAULT_A1 = 0x5EED0002

_MASK = 0xFFFFFFFF
_C1 = 0x85EBCA6B
_C2 = 0xC2B2AE35

_MASK_U64 = np.uint64(_MASK)
_C1_U64 = np.uint64(_C1)
_C2_U64 = np.uint64(_C2)
_SHIFT_16 = np.uint64(16)
_SHIFT_13 = np.uint64(13)

UIntArray = npt.NDArray[np.uint64]


class HashingError(ValueError):
    """Invalid hashing argument."""


@dataclass(frozen=True)
class HashSeed:
    """Seeds of the physical mapping (a0) and the opposite-host mixing (a1)."""

    a0: int = DEFAULT_A0
    a1: int = DEFAULT_A1

    def __post_init__(self):
        for name in ("a0", "a1"):
            value = getattr(self, name)
            if not 0 <= value <= _MASK:
                raise HashingError(f"seed {name} must be a 32-bit word: "
                                   f"{value!r}")


def h(x: int, n: int, a: int) -> int:
    """Map a 32-bit word into [0, n) with seed `a`.

    The mixer is the 32-bit avalanche finalizer applied to `x ^ a`,
    followed by modulo reduction. With n = 2**32 the reduction is the
    identity.
    """
    if n < 1:
        raise HashingError(f"hash modulus must be positive, got {n}")
    t = (x ^ a) & _MASK
    t ^= t >> 16
    t = (t * _C1) & _MASK
    t ^= t >> 13
    t = (t * _C2) & _MASK
    t ^= t >> 16
    return t % n


def h_array(x: npt.ArrayLike, n: int, a: npt.ArrayLike) -> UIntArray:
    """Array form of `h`; `a` is either one seed or a seed per element."""
    if n < 1:
        raise HashingError(f"hash modulus must be positive, got {n}")
    t = np.asarray(x, dtype=np.uint64) ^ np.asarray(a, dtype=np.uint64)
    t &= _MASK_U64
    t ^= t >> _SHIFT_16
    # products of two 32-bit words fit into uint64, so masking is exact
    t = (t * _C1_U64) & _MASK_U64
    t ^= t >> _SHIFT_13
    t = (t * _C2_U64) & _MASK_U64
    t ^= t >> _SHIFT_16
    return t % np.uint64(n)


def left_bits(x: int, i: int) -> int:
    """Return the left `i` bits of a 32-bit word."""
    if not 0 <= i <= 32:
        raise HashingError(f"left bit count must be in [0, 32], got {i}")
    if i == 0:
        return 0
    return (x & _MASK) >> (32 - i)


def left_bits_array(x: npt.ArrayLike, i: int) -> UIntArray:
    if not 0 <= i <= 32:
        raise HashingError(f"left bit count must be in [0, 32], got {i}")
    x = np.asarray(x, dtype=np.uint64) & _MASK_U64
    if i == 0:
        return np.zeros_like(x)
    return x >> np.uint64(32 - i)


def phy_idx(aip: int, vidx: int, a0: int, m: int) -> int:
    """Physical register of the `vidx`-th virtual register of host `aip`."""
    return h(aip, m, h(vidx, HASH_SPACE, a0))


def virtual_seeds(g: int, a0: int) -> UIntArray:
    """Per-virtual-index seeds `h(i, 2**32, a0)` for i in [0, g)."""
    return h_array(np.arange(g, dtype=np.uint64), HASH_SPACE, a0)


def phy_idx_array(aips: npt.ArrayLike,
                  seeds: npt.ArrayLike,
                  m: int) -> UIntArray:
    """Array form of `phy_idx` taking precomputed virtual seeds.

    `aips` and `seeds` are broadcast against each other, so a column of
    hosts against a row of `virtual_seeds` yields a (hosts, g) index matrix.
    """
    return h_array(aips, m, seeds)

"""Bit distance recorders.

A BDR keeps, for every possible LBP1 rank, a small saturating counter of
slices elapsed since the rank was last observed (a distance recorder).
A rank is active in a window of k slices while its recorder is below k, so
the largest active rank is the register value over the sliding window.

Three disciplines update the recorders during a slice:

- serial: the slice maximum is accumulated in `now_lbp1` and written at
  the end of the slice. Single writer only.
- gfast (bitset): every observed rank sets a flag, the largest flag is
  written at the end of the slice. Flag stores commute.
- gsmall (DRV-direct): recorders are aged when the slice opens and
  observed ranks zero their recorder directly. Zero stores commute.

Registers are stored as rows of 2-D numpy arrays so that a whole pool is
updated with a handful of array operations. A standalone register is a
one-row array, and every single-register operation is the one-row case of
the corresponding block operation.
"""

from __future__ import annotations

import enum

from abc import ABC, abstractmethod
from typing import ClassVar, Optional

import numpy as np
import numpy.typing as npt

WORD_BITS = 32
MAX_ZBITS = 16
ALIGNED_WIDTHS = (2, 4, 8, 16)


class SketchError(Exception):
    """Base class for sketch errors."""


class RankOutOfRange(SketchError, ValueError):
    """Rank outside [1, L]; signals a hashing bug upstream."""


class ContractViolation(SketchError):
    """Slice update called on a register of the wrong variant."""


class BdrVariant(enum.Enum):
    SERIAL = "serial"
    BITSET = "gfast"
    DRV_DIRECT = "gsmall"

    @property
    def concurrent(self) -> bool:
        """True if record() stores commute across concurrent writers."""
        return self is not BdrVariant.SERIAL


def lbp1(v: int, w: int) -> int:
    """Position of the leftmost set bit of a 32-bit word, from 1.

    Only the top `w` bits are meaningful. An all-zero prefix saturates to
    `w` instead of HyperLogLog's `w + 1`.
    """
    rank = WORD_BITS + 1 - (v & 0xFFFFFFFF).bit_length()
    return min(rank, w)


def lbp1_array(v: npt.ArrayLike, w: int) -> npt.NDArray[np.int64]:
    v = np.asarray(v, dtype=np.uint64) & np.uint64(0xFFFFFFFF)
    # frexp exponent equals bit_length for positive integers, 0 for zero
    _, exponent = np.frexp(v.astype(np.float64))
    rank = WORD_BITS + 1 - exponent.astype(np.int64)
    return np.minimum(rank, w)


def recorder_width(k: int) -> int:
    """Smallest recorder width able to hold every age in [0, k]."""
    if k < 1:
        raise SketchError(f"window length must be positive, got {k}")
    return k.bit_length()


def default_zbits(k: int) -> int:
    """`recorder_width(k)` rounded up to an aligned width."""
    z = recorder_width(k)
    for width in ALIGNED_WIDTHS:
        if z <= width:
            return width
    raise SketchError(f"window length {k} needs {z}-bit recorders, "
                      f"at most {MAX_ZBITS} are supported")


def sentinel(zbits: int) -> int:
    return (1 << zbits) - 1


def recorder_dtype(zbits: int) -> type[np.unsignedinteger]:
    if not 1 <= zbits <= MAX_ZBITS:
        raise SketchError(f"recorder width must be in [1, {MAX_ZBITS}], "
                          f"got {zbits}")
    return np.uint8 if zbits <= 8 else np.uint16


# Block operations. `drv` is a (registers, L) array of recorders.

def slide_recorders(drv: np.ndarray, top: int) -> None:
    """Age every recorder by one slice, saturating at `top`."""
    drv[drv < top] += 1


def max_active_rank(drv: np.ndarray, k: int) -> npt.NDArray[np.int64]:
    """Largest rank whose recorder is below `k`, per row; 0 if none."""
    active = drv < k
    width = drv.shape[1]
    top = width - np.argmax(active[:, ::-1], axis=1)
    return np.where(active.any(axis=1), top, 0).astype(np.int64)


class DistanceRecorder:
    """A z-bit saturating age counter.

    Views one slot of a recorder array, so the same object can address a
    recorder inside a pool or own a private one-element array.
    """

    __slots__ = ("_array", "_slot", "zbits")

    def __init__(self,
                 zbits: int,
                 array: Optional[np.ndarray] = None,
                 slot: int = 0):
        if array is None:
            array = np.full(1, sentinel(zbits), dtype=recorder_dtype(zbits))
        self._array = array
        self._slot = slot
        self.zbits = zbits

    @property
    def value(self) -> int:
        return int(self._array[self._slot])

    @value.setter
    def value(self, value: int):
        if not 0 <= value <= sentinel(self.zbits):
            raise SketchError(f"recorder value {value} does not fit "
                              f"{self.zbits} bits")
        self._array[self._slot] = value

    def init(self) -> None:
        """Mark as never seen."""
        self._array[self._slot] = sentinel(self.zbits)

    def set(self) -> None:
        """Mark as seen in the current slice."""
        self._array[self._slot] = 0

    def slide(self) -> None:
        if self._array[self._slot] < sentinel(self.zbits):
            self._array[self._slot] += 1

    def is_active(self, k: int) -> bool:
        return self.value < k

    def __repr__(self):
        return f"DistanceRecorder(zbits={self.zbits}, value={self.value})"


class Drv:
    """Vector of distance recorders indexed by rank 1..L."""

    def __init__(self, recorders: np.ndarray, zbits: int):
        self._recorders = recorders
        self.zbits = zbits

    def __len__(self) -> int:
        return len(self._recorders)

    def __getitem__(self, rank: int) -> DistanceRecorder:
        _check_rank(rank, len(self))
        return DistanceRecorder(self.zbits, self._recorders, rank - 1)

    @property
    def values(self) -> list[int]:
        return [int(v) for v in self._recorders]

    def __repr__(self):
        return f"Drv({self.values})"


def _check_rank(rank: int, width: int):
    if not 1 <= rank <= width:
        raise RankOutOfRange(f"rank {rank} outside [1, {width}]")


def _check_ranks(ranks: np.ndarray, width: int):
    if ranks.size and (ranks.min() < 1 or ranks.max() > width):
        bad = ranks[(ranks < 1) | (ranks > width)][0]
        raise RankOutOfRange(f"rank {bad} outside [1, {width}]")


class BdrBase(ABC):
    """One sliding-window register.

    Subclasses define the accumulator layout and the block update rules of
    one variant. An instance addresses a single row of (possibly shared)
    storage.

    Args:
        width: Number of recorders L, the largest representable rank.
        zbits: Recorder width in bits.
        drv: Optional (1, L) recorder storage to view.
        acc: Optional one-row accumulator storage to view.
    """

    VARIANT: ClassVar[BdrVariant]

    def __init__(self,
                 width: int,
                 zbits: int,
                 *,
                 drv: Optional[np.ndarray] = None,
                 acc: Optional[np.ndarray] = None):
        if not 1 <= width <= WORD_BITS:
            raise SketchError(f"DRV length must be in [1, {WORD_BITS}], "
                              f"got {width}")
        self.width = width
        self.zbits = zbits
        self._drv = drv if drv is not None else self.allocate_drv(
            1, width, zbits)
        self._acc = acc if acc is not None else self.allocate_accumulator(
            1, width)

    @staticmethod
    def allocate_drv(registers: int, width: int, zbits: int) -> np.ndarray:
        return np.full((registers, width), sentinel(zbits),
                       dtype=recorder_dtype(zbits))

    @staticmethod
    @abstractmethod
    def allocate_accumulator(registers: int,
                             width: int) -> Optional[np.ndarray]:
        raise NotImplementedError

    @classmethod
    @abstractmethod
    def record_block(cls,
                     drv: np.ndarray,
                     acc: Optional[np.ndarray],
                     rows: np.ndarray,
                     ranks: np.ndarray) -> None:
        """Record `ranks[i]` into register `rows[i]` for every i."""
        raise NotImplementedError

    @classmethod
    def end_slice_block(cls,
                        drv: np.ndarray,
                        acc: Optional[np.ndarray],
                        zbits: int) -> None:
        raise ContractViolation(
            f"end_slice_update is not defined for {cls.VARIANT.value} "
            "registers")

    @classmethod
    def begin_slice_block(cls, drv: np.ndarray, zbits: int) -> None:
        raise ContractViolation(
            f"begin_slice_update is not defined for {cls.VARIANT.value} "
            "registers")

    @staticmethod
    def get_lbp1_block(drv: np.ndarray, k: int) -> npt.NDArray[np.int64]:
        return max_active_rank(drv, k)

    @property
    def drv(self) -> Drv:
        return Drv(self._drv[0], self.zbits)

    def record(self, r: int) -> None:
        _check_rank(r, self.width)
        self.record_block(self._drv, self._acc,
                          np.zeros(1, dtype=np.intp),
                          np.array([r], dtype=np.int64))

    def end_slice_update(self) -> None:
        self.end_slice_block(self._drv, self._acc, self.zbits)

    def begin_slice_update(self) -> None:
        self.begin_slice_block(self._drv, self.zbits)

    def get_lbp1(self, k: int) -> int:
        return int(self.get_lbp1_block(self._drv, k)[0])

    def state(self) -> bytes:
        """Raw register bytes, for bit-identity comparisons."""
        acc = b"" if self._acc is None else self._acc.tobytes()
        return self._drv.tobytes() + acc

    def __repr__(self):
        return (f"{type(self).__name__}(width={self.width}, "
                f"zbits={self.zbits}, drv={self.drv.values})")


class SerialBdr(BdrBase):
    """Register with a scalar slice maximum; single writer."""

    VARIANT = BdrVariant.SERIAL

    @staticmethod
    def allocate_accumulator(registers: int, width: int) -> np.ndarray:
        return np.zeros(registers, dtype=np.uint8)

    @classmethod
    def record_block(cls, drv, acc, rows, ranks):
        _check_ranks(ranks, drv.shape[1])
        np.maximum.at(acc, rows, ranks.astype(acc.dtype))

    @classmethod
    def end_slice_block(cls, drv, acc, zbits):
        slide_recorders(drv, sentinel(zbits))
        # 0 marks an empty slice; ranks start at 1
        rows = np.flatnonzero(acc)
        drv[rows, acc[rows].astype(np.intp) - 1] = 0
        acc[:] = 0

    @property
    def now_lbp1(self) -> int:
        return int(self._acc[0])


class BitsetBdr(BdrBase):
    """Register with one flag byte per rank; flag stores commute."""

    VARIANT = BdrVariant.BITSET

    @staticmethod
    def allocate_accumulator(registers: int, width: int) -> np.ndarray:
        return np.zeros((registers, width), dtype=np.uint8)

    @classmethod
    def record_block(cls, drv, acc, rows, ranks):
        _check_ranks(ranks, drv.shape[1])
        acc[rows, ranks - 1] = 1

    @classmethod
    def end_slice_block(cls, drv, acc, zbits):
        slide_recorders(drv, sentinel(zbits))
        seen = acc.astype(bool)
        rows = np.flatnonzero(seen.any(axis=1))
        if rows.size:
            width = acc.shape[1]
            top = width - 1 - np.argmax(seen[rows, ::-1], axis=1)
            drv[rows, top] = 0
        acc[:] = 0

    @property
    def bs_lbp1(self) -> int:
        """Flags as an integer, bit r - 1 set iff rank r was observed."""
        return sum(1 << i for i, flag in enumerate(self._acc[0]) if flag)


class DrvDirectBdr(BdrBase):
    """Register without accumulator; ranks zero their recorder directly."""

    VARIANT = BdrVariant.DRV_DIRECT

    @staticmethod
    def allocate_accumulator(registers: int, width: int) -> None:
        return None

    @classmethod
    def record_block(cls, drv, acc, rows, ranks):
        _check_ranks(ranks, drv.shape[1])
        drv[rows, ranks - 1] = 0

    @classmethod
    def begin_slice_block(cls, drv, zbits):
        slide_recorders(drv, sentinel(zbits))


BDR_CLASSES: dict[BdrVariant, type[BdrBase]] = {
    cls.VARIANT: cls for cls in (SerialBdr, BitsetBdr, DrvDirectBdr)
}


def bdr_class(variant: BdrVariant | str) -> type[BdrBase]:
    return BDR_CLASSES[BdrVariant(variant)]


def make_bdr(variant: BdrVariant | str, width: int, zbits: int) -> BdrBase:
    """Create a standalone register of the given variant."""
    return bdr_class(variant)(width, zbits)

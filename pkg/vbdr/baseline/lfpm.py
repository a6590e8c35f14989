"""LFPM-HLL: sliding-window HyperLogLog with lists of future possible maxima.

Each register keeps a list of (slice, rank) cells. A new rank removes
every older cell it dominates, and is dropped itself when a larger rank
of the same slice is listed. From head to tail slices strictly increase
and ranks strictly decrease; the head is the window maximum once expired
cells are dropped. The list grows with the logarithm of the number of
inserts, which is the memory the fixed-size distance recorders replace.
"""

from __future__ import annotations

import logging

from collections import deque
from typing import Iterable, NamedTuple, Optional

import numpy as np
import numpy.typing as npt

from ..hashing import virtual_seeds
from ..pool import (
    LFPM_CELL_BITS,
    EstimateMethod,
    PoolConfig,
    estimate_hosts,
    scan_targets
)

logger = logging.getLogger("vbdr.lfpm")


class LfpmError(Exception):
    """Insert older than the list's newest cell."""


class LfpmCell(NamedTuple):
    timestamp: int
    rank: int


class LfpmList:
    """List of future possible maxima of one register."""

    __slots__ = ("cells",)

    def __init__(self):
        self.cells: deque[LfpmCell] = deque()

    def insert(self, slice_index: int, rank: int) -> None:
        cells = self.cells
        if cells and slice_index < cells[-1].timestamp:
            raise LfpmError(f"slice {slice_index} precedes the newest "
                            f"cell at slice {cells[-1].timestamp}")
        while cells and cells[-1].rank <= rank:
            cells.pop()
        # a larger rank of the same slice outlives this one
        if cells and cells[-1].timestamp == slice_index:
            return
        cells.append(LfpmCell(slice_index, rank))

    def prune(self, slice_index: int, k: int) -> None:
        """Drop cells outside the window of k slices ending at `slice_index`."""
        cells = self.cells
        while cells and cells[0].timestamp <= slice_index - k:
            cells.popleft()

    def query(self, slice_index: int, k: int) -> int:
        """Largest rank inserted in the window ending at `slice_index`."""
        self.prune(slice_index, k)
        return self.cells[0].rank if self.cells else 0

    @property
    def bits(self) -> int:
        return LFPM_CELL_BITS * len(self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def __repr__(self):
        cells = ', '.join(f"({c.timestamp}, {c.rank})" for c in self.cells)
        return f"LfpmList([{cells}])"


def lfpm_insert(lst: LfpmList, slice_index: int, rank: int) -> None:
    lst.insert(slice_index, rank)


def lfpm_query(lst: LfpmList, slice_index: int, k: int) -> int:
    return lst.query(slice_index, k)


class LfpmPool:
    """Shared pool of m LFPM registers addressed like a `BdrPool`.

    IP pairs map to the same physical register and rank as in a BdrPool
    with the same config, so both pools see identical windowed ranks.
    Unlike a BdrPool, the pool has no boundary work: `advance_slice` only
    moves the clock and expired cells are dropped lazily at readout.
    """

    def __init__(self, config: PoolConfig):
        self.config = config
        self.lists = [LfpmList() for _ in range(config.m)]
        self.slice_index = 0
        self._seeds = virtual_seeds(config.g, config.seeds.a0)

    def scan_pairs(self, aips: npt.ArrayLike, bips: npt.ArrayLike) -> None:
        rows, ranks = scan_targets(self.config, aips, bips, self._seeds)
        lists, now = self.lists, self.slice_index
        for row, rank in zip(rows.tolist(), ranks.tolist()):
            lists[row].insert(now, rank)

    def scan_pair(self, aip: int, bip: int) -> None:
        self.scan_pairs([aip], [bip])

    def advance_slice(self) -> None:
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("slice %d closed with %d cells",
                         self.slice_index, self.cell_count())
        self.slice_index += 1

    def register_values(self) -> npt.NDArray[np.int64]:
        """Windowed rank of every register over the completed slices."""
        last, k = self.slice_index - 1, self.config.k
        return np.fromiter((lst.query(last, k) for lst in self.lists),
                           dtype=np.int64, count=self.config.m)

    def estimate_many(self,
                      aips: Iterable[int],
                      method: EstimateMethod = "hll",
                      values: Optional[npt.NDArray[np.int64]] = None
                      ) -> npt.NDArray[np.float64]:
        if values is None:
            values = self.register_values()
        return estimate_hosts(values, aips, self.config, method, self._seeds)

    def estimate(self, aip: int, method: EstimateMethod = "hll") -> float:
        return float(self.estimate_many([aip], method)[0])

    def cell_count(self) -> int:
        return sum(len(lst) for lst in self.lists)

    def memory_bits(self) -> int:
        """Measured memory of all lists, 40 bits per cell."""
        return LFPM_CELL_BITS * self.cell_count()

    def mean_bits(self) -> float:
        """Measured memory per register."""
        return self.memory_bits() / self.config.m

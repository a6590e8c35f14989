"""Exact sliding-window cardinalities, kept as one set per host and slice."""

from __future__ import annotations

import logging

from collections import defaultdict
from typing import Iterable, Optional

import numpy as np
import numpy.typing as npt

from ..engine import Window

logger = logging.getLogger("vbdr.oracle")


class OracleError(Exception):
    """Slice older than the oracle's stream."""


class ExactOracle:
    """Distinct opposite hosts of every host over the last `k` slices.

    Only the slices of the current window are retained, so `cardinality`
    accepts any window ending inside it.
    """

    def __init__(self, k: int):
        if k < 1:
            raise OracleError(f"window length must be positive, got {k}")
        self.k = k
        self.slice_index = 0
        self._slices: dict[int, defaultdict[int, set[int]]] = {}

    def _open(self, slice_index: int) -> defaultdict[int, set[int]]:
        if slice_index < self.slice_index:
            raise OracleError(f"slice {slice_index} precedes "
                              f"current slice {self.slice_index}")
        if slice_index > self.slice_index:
            self.slice_index = slice_index
            oldest = slice_index - self.k + 1
            expired = [s for s in self._slices if s < oldest]
            for s in expired:
                del self._slices[s]
            if expired:
                logger.debug("dropped %d expired slice(s), window starts "
                             "at slice %d", len(expired), max(0, oldest))
        return self._slices.setdefault(slice_index, defaultdict(set))

    def ingest(self, slice_index: int, aip: int, bip: int) -> None:
        self._open(slice_index)[aip].add(bip)

    def ingest_many(self,
                    slice_index: int,
                    aips: npt.ArrayLike,
                    bips: npt.ArrayLike) -> None:
        hosts = self._open(slice_index)
        for aip, bip in zip(np.asarray(aips).tolist(),
                            np.asarray(bips).tolist()):
            hosts[aip].add(bip)

    def window(self) -> Window:
        """Window of k slices ending at the current slice."""
        return Window(max(0, self.slice_index - self.k + 1), self.slice_index)

    def cardinality(self, aip: int, window: Optional[Window] = None) -> int:
        """Exact number of distinct opposite hosts of `aip` in `window`."""
        window = window or self.window()
        seen: set[int] = set()
        for s in range(window.start, window.end + 1):
            hosts = self._slices.get(s)
            if hosts is not None and aip in hosts:
                seen |= hosts[aip]
        return len(seen)

    def hosts(self, window: Optional[Window] = None) -> list[int]:
        """Hosts seen in `window`, ascending."""
        window = window or self.window()
        active: set[int] = set()
        for s in range(window.start, window.end + 1):
            active.update(self._slices.get(s, ()))
        return sorted(active)

    def cardinalities(self,
                      aips: Iterable[int],
                      window: Optional[Window] = None) -> list[int]:
        return [self.cardinality(aip, window) for aip in aips]


def oracle_ingest(oracle: ExactOracle, slice_index: int,
                  aip: int, bip: int) -> None:
    oracle.ingest(slice_index, aip, bip)


def oracle_cardinality(oracle: ExactOracle, aip: int,
                       window: Optional[Window] = None) -> int:
    return oracle.cardinality(aip, window)

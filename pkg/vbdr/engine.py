"""Event stream ingestion: slice clock, line codec, windowed queries."""

from __future__ import annotations

import logging
import math

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, NamedTuple, Optional, TextIO

import numpy as np
import numpy.typing as npt

from .pool import BdrPool
from .parallel import ScanBatch, boundary_parallel, estimate_parallel, scan_batch
from .sketch import sentinel
from .utility import format_ip, parse_ip

logger = logging.getLogger("vbdr.engine")

DEFAULT_CANDIDATES = 1 << 20


class EngineError(Exception):
    """Base class for stream engine errors."""


class StreamOrderError(EngineError):
    """Event timestamp precedes the previous event or the slice origin."""


class MalformedEvent(EngineError):
    """Input line is not a `ts,aip,bip` event."""


class IpPairEvent(NamedTuple):
    ts: float
    aip: int
    bip: int


class Window(NamedTuple):
    """Inclusive range of slice indices."""

    start: int
    end: int

    @property
    def empty(self) -> bool:
        return self.end < self.start

    def __str__(self):
        if self.empty:
            return "[]"
        return f"[{self.start}, {self.end}]"


EMPTY_WINDOW = Window(0, -1)


@dataclass
class SliceClock:
    """Maps timestamps to slice indices; slice i covers
    [origin + i * slice_len, origin + (i + 1) * slice_len)."""

    slice_len: float = 1.0
    origin: float = 0.0
    current_slice: int = 0

    def __post_init__(self):
        if not self.slice_len > 0:
            raise EngineError(f"slice length must be positive, "
                              f"got {self.slice_len}")

    def slice_of(self, ts: float) -> int:
        return math.floor((ts - self.origin) / self.slice_len)


def parse_event(line: str) -> Optional[IpPairEvent]:
    """Parse one input line; return None for blank and comment lines.

    Raises:
        MalformedEvent
    """
    line = line.split('#', 1)[0].strip()
    if not line:
        return None
    parts = [p.strip() for p in line.split(',')]
    if len(parts) != 3:
        raise MalformedEvent(f"expected 3 fields, got {len(parts)}")
    try:
        ts = float(parts[0])
        aip, bip = parse_ip(parts[1]), parse_ip(parts[2])
    except ValueError as e:
        raise MalformedEvent(str(e)) from e
    if not math.isfinite(ts) or ts < 0:
        raise MalformedEvent(f"invalid timestamp: {parts[0]!r}")
    return IpPairEvent(ts, aip, bip)


def format_event(event: IpPairEvent, dotted: bool = True) -> str:
    if dotted:
        return f"{event.ts!r},{format_ip(event.aip)},{format_ip(event.bip)}"
    return f"{event.ts!r},{event.aip},{event.bip}"


class EventReader:
    """Reads events from a line stream, skipping malformed lines.

    Skipped lines are counted in `malformed` and logged as warnings.
    """

    def __init__(self, stream: Iterable[str], name: Optional[str] = None):
        self._stream = stream
        self.name = name or getattr(stream, "name", "<stream>")
        self.line = 0
        self.malformed = 0

    def __iter__(self) -> Iterator[IpPairEvent]:
        for self.line, text in enumerate(self._stream, 1):
            try:
                event = parse_event(text)
            except MalformedEvent as e:
                self.malformed += 1
                logger.warning("%s:%d: malformed event skipped: %s",
                               self.name, self.line, e)
                continue
            if event is not None:
                yield event


def read_events(stream: TextIO) -> EventReader:
    return EventReader(stream)


class CandidateRecorder:
    """Bounded recency set of hosts seen in the current window.

    Approximate: when more than `capacity` hosts are active, the least
    recently seen ones are dropped.
    """

    def __init__(self, capacity: int = DEFAULT_CANDIDATES):
        if capacity < 1:
            raise EngineError(f"candidate capacity must be positive, "
                              f"got {capacity}")
        self.capacity = capacity
        self._last_seen: OrderedDict[int, int] = OrderedDict()
        self.evicted = 0

    def touch(self, aip: int, slice_index: int) -> None:
        self._last_seen[aip] = slice_index
        self._last_seen.move_to_end(aip)
        while len(self._last_seen) > self.capacity:
            self._last_seen.popitem(last=False)
            self.evicted += 1

    def touch_many(self, aips: Iterable[int], slice_index: int) -> None:
        for aip in aips:
            self.touch(int(aip), slice_index)

    def expire(self, oldest_slice: int) -> None:
        """Forget hosts not seen since before `oldest_slice`."""
        # entries are ordered by last touch, so stale ones lead
        while self._last_seen:
            aip, seen = next(iter(self._last_seen.items()))
            if seen >= oldest_slice:
                break
            self._last_seen.popitem(last=False)

    def hosts(self) -> list[int]:
        return sorted(self._last_seen)

    def __contains__(self, aip: int) -> bool:
        return aip in self._last_seen

    def __len__(self) -> int:
        return len(self._last_seen)


class WindowEngine:
    """Drives a pool from a timestamped IP pair stream.

    Empty slices between two events age the pool exactly like explicit
    `advance` calls. Once a gap has saturated every recorder, the rest of
    it is skipped without boundary work or `on_boundary` calls.

    Args:
        pool: Register pool; its slice counter is the clock's current slice.
        clock: Slice clock, 1 s slices from origin 0 by default.
        candidates: Candidate recorder for `query_top`; None disables it.
        workers: Worker threads for batch scans and boundaries.
        on_boundary: Called with the engine after every boundary update.
    """

    def __init__(self,
                 pool: BdrPool,
                 clock: Optional[SliceClock] = None,
                 candidates: Optional[CandidateRecorder] = None,
                 workers: int = 1,
                 on_boundary: Optional[Callable[[WindowEngine], None]] = None
                 ):
        self.pool = pool
        self.clock = clock or SliceClock()
        self.clock.current_slice = pool.slice_index
        self.candidates = candidates
        self.workers = workers
        self.on_boundary = on_boundary
        self.last_ts: Optional[float] = None
        self.events = 0
        self.out_of_order = 0

    @property
    def k(self) -> int:
        return self.pool.config.k

    def _check_order(self, ts: float) -> int:
        slice_index = self.clock.slice_of(ts)
        if self.last_ts is not None and ts < self.last_ts:
            self.out_of_order += 1
            raise StreamOrderError(
                f"timestamp {ts} precedes previous event at {self.last_ts}")
        if slice_index < self.clock.current_slice:
            self.out_of_order += 1
            raise StreamOrderError(
                f"timestamp {ts} belongs to closed slice {slice_index}")
        return slice_index

    def _boundary(self) -> None:
        if self.workers > 1:
            boundary_parallel(self.pool, self.workers)
        else:
            self.pool.advance_slice()
        self.clock.current_slice = self.pool.slice_index
        if self.candidates is not None:
            self.candidates.expire(self.clock.current_slice - self.k)
        if self.on_boundary is not None:
            self.on_boundary(self)

    def _skip(self, slices: int) -> None:
        self.pool.skip_settled(slices)
        self.clock.current_slice = self.pool.slice_index
        if self.candidates is not None:
            self.candidates.expire(self.clock.current_slice - self.k)

    def advance_to(self, slice_index: int) -> int:
        """Close slices until `slice_index` is the open slice.

        Returns the number of slices closed, skipped ones included.
        """
        start = self.clock.current_slice
        # silent boundaries after which every recorder is saturated
        settle = sentinel(self.pool.config.zbits) + 1
        closed = 0
        while self.clock.current_slice < slice_index:
            if closed == settle:
                skipped = slice_index - self.clock.current_slice
                self._skip(skipped)
                logger.debug("skipped %d silent slice(s)", skipped)
                break
            self._boundary()
            closed += 1
        closed = self.clock.current_slice - start
        if closed:
            logger.debug("closed %d slice(s), now at slice %d",
                         closed, self.clock.current_slice)
        return closed

    def advance(self, slices: int = 1) -> None:
        self.advance_to(self.clock.current_slice + slices)

    def flush(self) -> None:
        """Close the open slice, e.g. at the end of the input."""
        self.advance(1)

    def ingest(self, event: IpPairEvent) -> None:
        """Scan one event, closing every slice it skips past.

        Raises:
            StreamOrderError: if the event is older than the stream.
        """
        slice_index = self._check_order(event.ts)
        self.advance_to(slice_index)
        self.pool.scan_pair(event.aip, event.bip)
        if self.candidates is not None:
            self.candidates.touch(event.aip, slice_index)
        self.last_ts = event.ts
        self.events += 1

    def ingest_many(self, events: Iterable[IpPairEvent]) -> int:
        """Scan a stream in same-slice batches.

        Out-of-order events are counted, logged and skipped. Returns the
        number of accepted events.
        """
        accepted = 0
        batch: list[IpPairEvent] = []
        batch_slice = self.clock.current_slice

        for event in events:
            try:
                slice_index = self._check_order(event.ts)
            except StreamOrderError as e:
                logger.warning("event rejected: %s", e)
                continue
            if batch and slice_index != batch_slice:
                self._scan(batch, batch_slice)
                batch = []
            batch_slice = slice_index
            batch.append(event)
            self.last_ts = event.ts
            accepted += 1

        if batch:
            self._scan(batch, batch_slice)
        return accepted

    def _scan(self, events: list[IpPairEvent], slice_index: int) -> None:
        batch = ScanBatch.from_events(events, self.workers)
        self.ingest_arrays(slice_index, batch.aips, batch.bips)

    def ingest_arrays(self,
                      slice_index: int,
                      aips: npt.NDArray[np.uint64],
                      bips: npt.NDArray[np.uint64]) -> None:
        """Scan IP pairs already grouped into one slice.

        Raises:
            StreamOrderError: if the slice is already closed.
        """
        if slice_index < self.clock.current_slice:
            self.out_of_order += len(aips)
            raise StreamOrderError(f"slice {slice_index} is already closed")
        self.advance_to(slice_index)
        batch = ScanBatch(aips, bips, self.workers, slice_index)
        if self.workers > 1 and self.pool.variant.concurrent:
            scan_batch(self.pool, batch)
        else:
            self.pool.scan_pairs(batch.aips, batch.bips)
        if self.candidates is not None:
            self.candidates.touch_many(np.unique(batch.aips).tolist(),
                                       slice_index)
        self.events += len(batch)

    @property
    def last_completed(self) -> int:
        return self.pool.slice_index - 1

    def window(self) -> Window:
        """Window ending at the last completed slice."""
        end = self.last_completed
        if end < 0:
            return EMPTY_WINDOW
        return Window(max(0, end - self.k + 1), end)

    def query(self, aip: int) -> tuple[float, Window]:
        window = self.window()
        if window.empty:
            return 0.0, window
        return self.pool.estimate(aip), window

    def query_top(self,
                  threshold: float,
                  candidates: Optional[Iterable[int]] = None
                  ) -> list[tuple[int, float]]:
        """Candidates estimated at or above `threshold`.

        Sorted by descending estimate, ties by ascending host id. Without
        an explicit candidate list the engine's recorder is used.
        """
        if self.window().empty:
            return []
        if candidates is None:
            if self.candidates is None:
                return []
            candidates = self.candidates.hosts()
        hosts = list(candidates)
        if not hosts:
            return []

        if self.workers > 1:
            estimates = estimate_parallel(self.pool, hosts, self.workers)
        else:
            estimates = self.pool.estimate_many(hosts)

        top = [(aip, float(est)) for aip, est in zip(hosts, estimates)
               if est >= threshold]
        top.sort(key=lambda item: (-item[1], item[0]))
        return top


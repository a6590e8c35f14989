"""Synthetic IP pair streams with exactly known window cardinalities.

Every host draws a population of distinct opposite hosts once. In
"spread" mode the population is split into k chunks and an active slice
s emits chunk s mod k, so a window of k consecutive active slices holds
the whole population. In "repeat" mode an active slice emits the whole
population. Both make the distinct count of any window a function of the
host's activity pattern alone, recorded by `ground_truth`.
"""

from __future__ import annotations

import csv
import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Optional

import numpy as np
import numpy.typing as npt

from ..config import GEN_OPTIONS, Config, ConfigError, read_key_values
from ..engine import IpPairEvent, Window
from ..hashing import HASH_SPACE
from ..utility import format_ip, parse_ip, parse_slices

logger = logging.getLogger("vbdr.traffic")

HOST_PREFIX = "host."
TRUTH_HEADER = ("aip", "window_start", "window_end", "true_cardinality")
MODES = ("spread", "repeat")


class GeneratorError(Exception):
    """Infeasible or malformed generator configuration."""


@dataclass(frozen=True)
class HostSpec:
    """A monitored host.

    Attributes:
        aip: Host id.
        n: Distinct opposite hosts over a full window.
        slices: Active slices; None means every slice.
    """

    aip: int
    n: int
    slices: Optional[frozenset[int]] = None

    def __post_init__(self):
        if not 0 <= self.aip < HASH_SPACE:
            raise GeneratorError(f"host id does not fit 32 bits: {self.aip}")
        if self.n < 0:
            raise GeneratorError(f"negative cardinality for host "
                                 f"{self.aip}: {self.n}")
        if self.n > HASH_SPACE:
            raise GeneratorError(
                f"host {self.aip}: cardinality {self.n} exceeds the "
                f"{HASH_SPACE} possible opposite hosts")

    def active(self, slice_index: int) -> bool:
        return self.slices is None or slice_index in self.slices

    @classmethod
    def parse(cls, text: str) -> HostSpec:
        """Parse `<aip> <n> [<slices>]`."""
        parts = text.split()
        if len(parts) not in (2, 3):
            raise GeneratorError(f"expected '<aip> <n> [<slices>]', "
                                 f"got {text!r}")
        try:
            aip = parse_ip(parts[0])
            n = int(parts[1])
            slices = parse_slices(parts[2]) if len(parts) == 3 else None
        except ValueError as e:
            raise GeneratorError(f"host spec {text!r}: {e}") from e
        return cls(aip, n, slices)


@dataclass
class GenConfig:
    hosts: list[HostSpec] = field(default_factory=list)
    slices: int = 8
    k: int = 8
    slice_len: float = 1.0
    origin: float = 0.0
    mode: str = "spread"
    background_hosts: int = 0
    background_n: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.slices < 1:
            raise GeneratorError(f"slice count must be positive, "
                                 f"got {self.slices}")
        if self.k < 1:
            raise GeneratorError(f"window length must be positive, "
                                 f"got {self.k}")
        if not self.slice_len > 0:
            raise GeneratorError(f"slice length must be positive, "
                                 f"got {self.slice_len}")
        if self.mode not in MODES:
            raise GeneratorError(f"unknown mode {self.mode!r}, expected "
                                 f"one of {', '.join(MODES)}")
        if self.background_hosts < 0 or self.background_n < 0:
            raise GeneratorError("background host count and cardinality "
                                 "must not be negative")
        if self.background_n > HASH_SPACE:
            raise GeneratorError(f"background cardinality "
                                 f"{self.background_n} exceeds {HASH_SPACE}")
        aips = [h.aip for h in self.hosts]
        if len(set(aips)) != len(aips):
            raise GeneratorError("duplicate host ids")
        if len(aips) + self.background_hosts > HASH_SPACE:
            raise GeneratorError("more hosts than 32-bit host ids")

    @classmethod
    def from_config(cls,
                    config: Config,
                    hosts: Iterable[HostSpec] = ()) -> GenConfig:
        return cls(hosts=list(hosts),
                   slices=config.slices,
                   k=config.k,
                   slice_len=config.slice_len,
                   origin=config.origin,
                   mode=config.mode,
                   background_hosts=config.background_hosts,
                   background_n=config.background_n,
                   seed=config.seed)

    @classmethod
    def load(cls, path: Path | str, **overrides) -> GenConfig:
        """Read a generator config file.

        `host.<label> = <aip> <n> [<slices>]` lines declare hosts, the
        other lines set GEN_OPTIONS. Keyword arguments that are not None
        override the file.
        """
        config = Config(GEN_OPTIONS)
        options, hosts = [], []
        for line in read_key_values(path):
            name, value = (s.strip() for s in line.split('=', 1))
            if name.startswith(HOST_PREFIX):
                hosts.append(HostSpec.parse(value))
            else:
                options.append(line)
        try:
            config.parse(options)
            config.override(overrides)
        except ConfigError as e:
            raise GeneratorError(f"{path}: {e}") from e
        logger.info("generator config %s: %d host(s), %d slice(s)",
                    path, len(hosts), config.slices)
        return cls.from_config(config, hosts)


class SliceBatch(NamedTuple):
    slice_index: int
    ts: npt.NDArray[np.float64]
    aips: npt.NDArray[np.uint64]
    bips: npt.NDArray[np.uint64]


class TruthRow(NamedTuple):
    aip: int
    window_start: int
    window_end: int
    true_cardinality: int


class _Population:
    """Distinct opposite hosts of one host and their per-slice chunks."""

    def __init__(self, spec: HostSpec, base: int, k: int):
        self.spec = spec
        self.bips = (np.arange(spec.n, dtype=np.uint64)
                     + np.uint64(base)) % np.uint64(HASH_SPACE)
        self.chunks = np.array_split(self.bips, k)

    def emit(self, slice_index: int, mode: str) -> npt.NDArray[np.uint64]:
        if not self.spec.active(slice_index):
            return self.bips[:0]
        if mode == "repeat":
            return self.bips
        return self.chunks[slice_index % len(self.chunks)]


def _background_ids(rng: np.random.Generator,
                    count: int,
                    taken: set[int]) -> list[int]:
    ids: list[int] = []
    seen = set(taken)
    while len(ids) < count:
        for aip in rng.integers(0, HASH_SPACE, size=count - len(ids),
                                dtype=np.uint64).tolist():
            if aip not in seen and len(ids) < count:
                seen.add(aip)
                ids.append(aip)
    return ids


def all_hosts(config: GenConfig) -> list[HostSpec]:
    """Configured hosts followed by the seeded background hosts."""
    rng = np.random.default_rng([config.seed, 0])
    taken = {h.aip for h in config.hosts}
    background = [HostSpec(aip, config.background_n)
                  for aip in _background_ids(rng, config.background_hosts,
                                             taken)]
    return list(config.hosts) + background


def generate_batches(config: GenConfig) -> Iterator[SliceBatch]:
    """Per-slice arrays of the stream, shuffled and timestamp ordered."""
    hosts = all_hosts(config)
    rng = np.random.default_rng([config.seed, 1])
    bases = rng.integers(0, HASH_SPACE, size=len(hosts), dtype=np.uint64)
    populations = [_Population(spec, int(base), config.k)
                   for spec, base in zip(hosts, bases)]

    for s in range(config.slices):
        bips_parts, aips_parts = [], []
        for pop in populations:
            bips = pop.emit(s, config.mode)
            bips_parts.append(bips)
            aips_parts.append(np.full(len(bips), pop.spec.aip,
                                      dtype=np.uint64))
        bips = np.concatenate(bips_parts) if bips_parts else \
            np.zeros(0, dtype=np.uint64)
        aips = np.concatenate(aips_parts) if aips_parts else \
            np.zeros(0, dtype=np.uint64)

        order = rng.permutation(len(bips))
        # keep clear of slice edges so float rounding never moves an event
        offsets = np.sort(rng.uniform(0.001, 0.999, size=len(bips)))
        ts = config.origin + (s + offsets) * config.slice_len
        yield SliceBatch(s, ts, aips[order], bips[order])


def generate(config: GenConfig) -> Iterator[IpPairEvent]:
    """The generated stream as single events."""
    for batch in generate_batches(config):
        for ts, aip, bip in zip(batch.ts.tolist(), batch.aips.tolist(),
                                batch.bips.tolist()):
            yield IpPairEvent(ts, aip, bip)


def window_cardinality(spec: HostSpec,
                       window: Window,
                       mode: str,
                       k: int) -> int:
    """Distinct opposite hosts `spec` emits in `window`."""
    active = [s for s in range(window.start, window.end + 1)
              if spec.active(s)]
    if not active:
        return 0
    if mode == "repeat":
        return spec.n
    sizes = [len(c) for c in np.array_split(np.empty(spec.n), k)]
    return sum(sizes[c] for c in {s % k for s in active})


def ground_truth(config: GenConfig) -> list[TruthRow]:
    """Exact cardinality of every host at every boundary.

    The window at boundary t covers slices max(0, t - k + 1)..t.
    """
    rows = []
    hosts = all_hosts(config)
    for t in range(config.slices):
        window = Window(max(0, t - config.k + 1), t)
        for spec in hosts:
            rows.append(TruthRow(spec.aip, window.start, window.end,
                                 window_cardinality(spec, window,
                                                    config.mode, config.k)))
    return rows


def write_truth(rows: Iterable[TruthRow], fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator='\n')
    writer.writerow(TRUTH_HEADER)
    for row in rows:
        writer.writerow((format_ip(row.aip), row.window_start,
                         row.window_end, row.true_cardinality))

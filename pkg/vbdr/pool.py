"""Shared pool of bit distance recorders (VBDR).

Every monitored host owns a virtual vector of g = 2**b registers drawn
from m physical registers by seeded hashing. An IP pair touches exactly
one physical register; a host's cardinality is estimated from its
virtual vector, corrected by the load of the whole pool.
"""

from __future__ import annotations

import base64
import json
import logging
import math

from dataclasses import dataclass, field, asdict
from typing import IO, Any, Iterable, Optional

import numpy as np
import numpy.typing as npt

from .hashing import (
    HASH_SPACE,
    HashSeed,
    h,
    h_array,
    left_bits,
    left_bits_array,
    phy_idx,
    phy_idx_array,
    virtual_seeds
)
from .sketch import (
    WORD_BITS,
    BdrBase,
    BdrVariant,
    SketchError,
    bdr_class,
    default_zbits,
    lbp1,
    lbp1_array,
    recorder_dtype,
    recorder_width
)
from .utility import ceil_log2

logger = logging.getLogger("vbdr.pool")

SNAPSHOT_FORMAT = "vbdr-pool"
SNAPSHOT_VERSION = 1

LOGLOG_ALPHA = 0.39701
LFPM_CELL_BITS = 40

EstimateMethod = str  # "hll" | "loglog"


class PoolError(Exception):
    """Base class for pool errors."""


class PoolConfigError(PoolError):
    """PoolConfig invariant violated."""


class EstimatorError(PoolError, ValueError):
    """Register vector not supported by the estimator."""


class SnapshotError(PoolError):
    """Malformed or unsupported pool snapshot."""


@dataclass(frozen=True)
class PoolConfig:
    """Pool parameters.

    Attributes:
        m: Number of physical registers.
        b: Log2 of the virtual vector size g.
        k: Window length in slices.
        zbits: Recorder width; 0 selects `default_zbits(k)`.
        variant: Update discipline shared by all registers.
        seeds: Hash seeds.
    """

    m: int = 1 << 16
    b: int = 9
    k: int = 300
    zbits: int = 0
    variant: BdrVariant = BdrVariant.DRV_DIRECT
    seeds: HashSeed = field(default_factory=HashSeed)

    def __post_init__(self):
        if not isinstance(self.variant, BdrVariant):
            try:
                object.__setattr__(self, "variant", BdrVariant(self.variant))
            except ValueError as e:
                raise PoolConfigError(
                    f"unknown variant: {self.variant!r}") from e
        if not 1 <= self.b < WORD_BITS:
            raise PoolConfigError(f"b must be in [1, {WORD_BITS - 1}], "
                                  f"got {self.b}")
        if self.k < 1:
            raise PoolConfigError(f"k must be positive, got {self.k}")
        if self.m < 1:
            raise PoolConfigError(f"m must be positive, got {self.m}")
        if 2 * self.g > self.m:
            raise PoolConfigError(
                f"virtual vector size g={self.g} must not exceed half "
                f"the pool size m={self.m}")
        try:
            if self.zbits == 0:
                object.__setattr__(self, "zbits", default_zbits(self.k))
            recorder_dtype(self.zbits)
        except SketchError as e:
            raise PoolConfigError(str(e)) from e
        if self.zbits < recorder_width(self.k):
            raise PoolConfigError(
                f"zbits={self.zbits} cannot hold ages up to k={self.k}; "
                f"at least {recorder_width(self.k)} bits are required")

    @property
    def g(self) -> int:
        return 1 << self.b

    @property
    def width(self) -> int:
        """DRV length L: the largest rank left after dropping b bits."""
        return WORD_BITS - self.b

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PoolConfig:
        d = dict(d)
        d["seeds"] = HashSeed(**d.get("seeds", {}))
        return cls(**d)


def hll_alpha(s: int) -> float:
    if s == 16:
        return 0.673
    if s == 32:
        return 0.697
    if s == 64:
        return 0.709
    return 0.7213 / (1.0 + 1.079 / s)


def _check_register_count(s: int):
    if s in (16, 32, 64):
        return
    if s >= 128 and s & (s - 1) == 0:
        return
    raise EstimatorError(f"HyperLogLog needs 16, 32, 64 or a power of two "
                         f">= 128 registers, got {s}")


def _hll_rows(ranks: np.ndarray) -> npt.NDArray[np.float64]:
    """HyperLogLog estimate of every row of a rank matrix."""
    s = ranks.shape[1]
    # integer powers keep the harmonic sum exact and order independent
    weights = np.left_shift(np.int64(1), WORD_BITS - ranks.astype(np.int64))
    z = weights.sum(axis=1) / float(1 << WORD_BITS)
    raw = hll_alpha(s) * s * s / z
    zeros = np.count_nonzero(ranks == 0, axis=1)
    small = (raw <= 2.5 * s) & (zeros > 0)
    with np.errstate(divide="ignore"):
        linear = s * np.log(s / np.maximum(zeros, 1))
    return np.where(small, linear, raw)


def _loglog_rows(ranks: np.ndarray) -> npt.NDArray[np.float64]:
    s = ranks.shape[1]
    total = ranks.astype(np.int64).sum(axis=1)
    return LOGLOG_ALPHA * s * np.exp2(total / s)


def raw_hll_estimate(ranks: npt.ArrayLike) -> float:
    """HyperLogLog estimate from a vector of register ranks.

    Applies the small-range (linear counting) correction when the raw
    estimate is below 2.5 s and some registers are empty.

    Raises:
        EstimatorError: if the vector length is not supported.
    """
    ranks = np.asarray(ranks, dtype=np.int64)
    _check_register_count(len(ranks))
    return float(_hll_rows(ranks[np.newaxis, :])[0])


def loglog_estimate(ranks: npt.ArrayLike) -> float:
    """LogLog (geometric mean) estimate; only depends on the rank sum."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) < 1:
        raise EstimatorError("LogLog needs at least one register")
    return float(_loglog_rows(ranks[np.newaxis, :])[0])


_ESTIMATORS = {
    "hll": _hll_rows,
    "loglog": _loglog_rows
}


def shared_estimate(n_virtual: npt.ArrayLike,
                    n_total: float,
                    m: int,
                    g: int) -> npt.NDArray[np.float64]:
    """Remove the noise other hosts leave in a virtual vector.

    `n_virtual` are per-host estimates over g registers, `n_total` the
    estimate over all m registers. Negative results are clamped to 0.
    """
    if m == g:
        raise PoolConfigError("pool size equals virtual vector size")
    scale = m * g / (m - g)
    est = scale * (np.asarray(n_virtual, dtype=np.float64) / g - n_total / m)
    return np.maximum(est, 0.0)


def gather_virtual(values: npt.NDArray[np.int64],
                   aips: Iterable[int],
                   m: int,
                   seeds: npt.NDArray[np.uint64]) -> npt.NDArray[np.int64]:
    """(hosts, g) matrix of the register values of every host."""
    aips = np.fromiter(aips, dtype=np.uint64)
    idx = phy_idx_array(aips[:, np.newaxis], seeds[np.newaxis, :], m)
    return values[idx.astype(np.intp)]


def total_estimate(values: npt.NDArray[np.int64],
                   method: EstimateMethod = "hll") -> float:
    """Estimate over the whole physical pool."""
    if method not in _ESTIMATORS:
        raise EstimatorError(f"unknown estimator: {method!r}")
    return float(_ESTIMATORS[method](values[np.newaxis, :])[0])


def check_estimator(config: PoolConfig,
                    method: EstimateMethod = "hll") -> None:
    """Check that `method` can estimate hosts of a pool built from `config`.

    Raises:
        EstimatorError: for an unknown method or, with "hll", a virtual
            vector size the estimator has no constant for.
    """
    if method not in _ESTIMATORS:
        raise EstimatorError(f"unknown estimator: {method!r}")
    if method == "hll":
        _check_register_count(config.g)


def estimate_hosts(values: npt.NDArray[np.int64],
                   aips: Iterable[int],
                   config: PoolConfig,
                   method: EstimateMethod = "hll",
                   seeds: Optional[npt.NDArray[np.uint64]] = None
                   ) -> npt.NDArray[np.float64]:
    """Noise-corrected estimates of many hosts from physical register values.

    Raises:
        EstimatorError: for an unknown method or, with "hll", a virtual
            vector size the estimator has no constant for.
    """
    check_estimator(config, method)
    if seeds is None:
        seeds = virtual_seeds(config.g, config.seeds.a0)
    ranks = gather_virtual(values, aips, config.m, seeds)
    if not len(ranks):
        return np.zeros(0, dtype=np.float64)
    n_virtual = _ESTIMATORS[method](ranks)
    return shared_estimate(n_virtual, total_estimate(values, method),
                           config.m, config.g)


@dataclass(frozen=True)
class MemoryReport:
    """Per-register and total memory of a pool.

    `register_bits` follows the closed forms with log2(n/g) instantiated as
    L = 32 - b and recorder width ceil(log2(k + 1)). `configured_bits` uses
    the configured (aligned) recorder width. `resident_bytes` is the in-memory
    layout: one array element per recorder and, for gfast, one byte per rank
    flag, so that every concurrent store hits its own addressable unit.
    """

    variant: BdrVariant
    width: int
    zbits: int
    register_bits: int
    total_bits: int
    configured_bits: int
    resident_bytes: int
    lfpm_bits: Optional[float] = None

    def as_row(self) -> dict[str, Any]:
        row = asdict(self)
        row["variant"] = self.variant.value
        return row


def register_bits(variant: BdrVariant, width: int, zbits: int) -> int:
    drv_bits = width * zbits
    if variant is BdrVariant.SERIAL:
        return ceil_log2(width) + drv_bits
    if variant is BdrVariant.BITSET:
        return width + drv_bits
    return drv_bits


def memory_report(config: PoolConfig,
                  n_per_counter: Optional[float] = None) -> MemoryReport:
    """Memory consumption of one register and of the whole pool.

    Args:
        config: Pool configuration.
        n_per_counter: Distinct elements per counter for the LFPM
            comparison figure, 40 ln(n_per_counter) bits.
    """
    width, variant = config.width, config.variant
    zbits = recorder_width(config.k)
    bits = register_bits(variant, width, zbits)

    itemsize = np.dtype(recorder_dtype(config.zbits)).itemsize
    resident = width * itemsize
    if variant is BdrVariant.SERIAL:
        resident += 1
    elif variant is BdrVariant.BITSET:
        resident += width

    lfpm = None
    if n_per_counter is not None and n_per_counter >= 1:
        lfpm = LFPM_CELL_BITS * math.log(n_per_counter)

    return MemoryReport(
        variant=variant,
        width=width,
        zbits=zbits,
        register_bits=bits,
        total_bits=config.m * bits,
        configured_bits=register_bits(variant, width, config.zbits),
        resident_bytes=resident,
        lfpm_bits=lfpm
    )


def scan_targets(config: PoolConfig,
                 aips: npt.ArrayLike,
                 bips: npt.ArrayLike,
                 seeds: Optional[npt.NDArray[np.uint64]] = None
                 ) -> tuple[npt.NDArray[np.intp], npt.NDArray[np.int64]]:
    """Physical register and rank of every IP pair.

    The left b bits of the hashed opposite host pick the virtual register,
    the remaining L bits give the rank.
    """
    if seeds is None:
        seeds = virtual_seeds(config.g, config.seeds.a0)
    hashed = h_array(bips, HASH_SPACE, config.seeds.a1)
    vidx = left_bits_array(hashed, config.b).astype(np.intp)
    shifted = (hashed << np.uint64(config.b)) & np.uint64(0xFFFFFFFF)
    ranks = lbp1_array(shifted, config.width)
    rows = phy_idx_array(aips, seeds[vidx], config.m)
    return rows.astype(np.intp), ranks


class BdrPool:
    """m physical registers shared by all hosts.

    The pool alternates between a scan phase (records into the open slice)
    and boundaries (advance_slice). Queries are meant for boundaries.

    For gsmall pools recorders are aged when a slice opens: on the first
    scan of the slice, or at the boundary closing a slice that saw no
    scan. Readouts taken between a boundary and the next scan therefore
    cover the same window for every variant.
    """

    def __init__(self, config: PoolConfig):
        self.config = config
        self._cls: type[BdrBase] = bdr_class(config.variant)
        self.drv = self._cls.allocate_drv(config.m, config.width,
                                          config.zbits)
        self.acc = self._cls.allocate_accumulator(config.m, config.width)
        self.slice_index = 0
        self.slice_open = False
        self._seeds = virtual_seeds(config.g, config.seeds.a0)
        self._values: Optional[npt.NDArray[np.int64]] = None

    @property
    def variant(self) -> BdrVariant:
        return self.config.variant

    def register(self, index: int) -> BdrBase:
        """View of one physical register."""
        acc = None if self.acc is None else self.acc[index:index + 1]
        return self._cls(self.config.width, self.config.zbits,
                         drv=self.drv[index:index + 1], acc=acc)

    # Scan phase

    def open_slice(self) -> None:
        if self.slice_open:
            return
        if self.variant is BdrVariant.DRV_DIRECT:
            self._cls.begin_slice_block(self.drv, self.config.zbits)
            self._values = None
        self.slice_open = True

    def scan_target(self, aip: int, bip: int) -> tuple[int, int]:
        """Physical register and rank an IP pair is recorded as."""
        cfg = self.config
        hashed = h(bip, HASH_SPACE, cfg.seeds.a1)
        vidx = left_bits(hashed, cfg.b)
        rank = lbp1((hashed << cfg.b) & 0xFFFFFFFF, cfg.width)
        return phy_idx(aip, vidx, cfg.seeds.a0, cfg.m), rank

    def scan_targets(self,
                     aips: npt.ArrayLike,
                     bips: npt.ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """Array form of `scan_target`."""
        return scan_targets(self.config, aips, bips, self._seeds)

    def scan_pair(self, aip: int, bip: int) -> None:
        self.open_slice()
        row, rank = self.scan_target(aip, bip)
        self.register(row).record(rank)
        self._values = None

    def scan_pairs(self, aips: npt.ArrayLike, bips: npt.ArrayLike) -> None:
        """Scan many IP pairs of the open slice at once."""
        self.open_slice()
        rows, ranks = self.scan_targets(aips, bips)
        self.record_rows(rows, ranks)

    def record_rows(self, rows: np.ndarray, ranks: np.ndarray) -> None:
        self._cls.record_block(self.drv, self.acc, rows, ranks)
        self._values = None

    # Boundary

    def boundary_rows(self, rows: slice = slice(None)) -> None:
        """Apply the slice boundary update to a block of registers.

        Blocks are independent; `commit_boundary` must follow once every
        block has been updated.
        """
        if self.variant is BdrVariant.DRV_DIRECT:
            if not self.slice_open:
                self._cls.begin_slice_block(self.drv[rows], self.config.zbits)
        else:
            self._cls.end_slice_block(self.drv[rows], self.acc[rows],
                                      self.config.zbits)

    def commit_boundary(self) -> None:
        self.slice_index += 1
        self.slice_open = False
        self._values = None

    def advance_slice(self) -> None:
        """Close the current slice."""
        self.boundary_rows()
        self.commit_boundary()

    def skip_settled(self, slices: int) -> None:
        """Move the slice counter over `slices` silent slices.

        Only valid once every recorder is saturated and no slice is open:
        boundaries then leave the registers unchanged.
        """
        self.slice_index += slices
        self.slice_open = False
        self._values = None

    # Readout

    def register_values(self) -> npt.NDArray[np.int64]:
        """Windowed rank of every physical register."""
        if self._values is None:
            self._values = self._cls.get_lbp1_block(self.drv, self.config.k)
        return self._values

    def physical_indices(self, aip: int) -> npt.NDArray[np.intp]:
        idx = phy_idx_array(aip, self._seeds, self.config.m)
        return idx.astype(np.intp)

    def sum_lbp1(self, aip: int) -> int:
        """Sum of the windowed ranks of a host's virtual registers."""
        cfg = self.config
        total = 0
        for i in range(cfg.g):
            index = phy_idx(aip, i, cfg.seeds.a0, cfg.m)
            total += self.register(index).get_lbp1(cfg.k)
        return total

    def gather_registers(self, aip: int) -> npt.NDArray[np.int64]:
        return self.register_values()[self.physical_indices(aip)]

    def gather_many(self, aips: Iterable[int]) -> npt.NDArray[np.int64]:
        """(hosts, g) matrix of windowed ranks."""
        return gather_virtual(self.register_values(), aips, self.config.m,
                              self._seeds)

    def total_estimate(self, method: EstimateMethod = "hll") -> float:
        return total_estimate(self.register_values(), method)

    def estimate_many(self,
                      aips: Iterable[int],
                      method: EstimateMethod = "hll"
                      ) -> npt.NDArray[np.float64]:
        return estimate_hosts(self.register_values(), aips, self.config,
                              method, self._seeds)

    def estimate(self, aip: int, method: EstimateMethod = "hll") -> float:
        """Estimated number of distinct opposite hosts of `aip`."""
        return float(self.estimate_many([aip], method)[0])

    # Persistence

    def state(self) -> bytes:
        acc = b"" if self.acc is None else self.acc.tobytes()
        return self.drv.tobytes() + acc

    def copy(self) -> BdrPool:
        other = BdrPool(self.config)
        other.drv[...] = self.drv
        if self.acc is not None:
            other.acc[...] = self.acc
        other.slice_index = self.slice_index
        other.slice_open = self.slice_open
        return other

    def dump(self, fp: IO[str]) -> None:
        """Write a versioned JSON snapshot."""
        data = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "config": self.config.as_dict(),
            "slice_index": self.slice_index,
            "slice_open": self.slice_open,
            "drv": _encode_array(self.drv),
            "acc": None if self.acc is None else _encode_array(self.acc)
        }
        json.dump(data, fp)
        logger.info("pool snapshot saved at slice %d", self.slice_index)

    @classmethod
    def load(cls, fp: IO[str]) -> BdrPool:
        try:
            data = json.load(fp)
        except json.JSONDecodeError as e:
            raise SnapshotError(f"snapshot is not JSON: {e}") from e

        if data.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError(f"not a pool snapshot: {data.get('format')!r}")
        if data.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(
                f"unsupported snapshot version: {data.get('version')!r}")

        try:
            pool = cls(PoolConfig.from_dict(data["config"]))
            pool.drv[...] = _decode_array(data["drv"], pool.drv)
            if pool.acc is not None:
                pool.acc[...] = _decode_array(data["acc"], pool.acc)
            pool.slice_index = int(data["slice_index"])
            pool.slice_open = bool(data["slice_open"])
        except (KeyError, TypeError, ValueError) as e:
            raise SnapshotError(f"corrupted snapshot: {e}") from e

        logger.info("pool snapshot loaded at slice %d", pool.slice_index)
        return pool


def _encode_array(array: np.ndarray) -> str:
    return base64.b64encode(array.tobytes()).decode("ascii")


def _decode_array(text: str, like: np.ndarray) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    return np.frombuffer(raw, dtype=like.dtype).reshape(like.shape)

"""Quantized distortion measures, dichotomy fingerprints and class tables.

A pair (rho, d) labels every joint n-type s with +1 when the average
sum_{j,k} s(j,k) rho(j,k) / n is at most d. Pairs with equal labelings are
interchangeable for encoding and decoding, so the labeling (fingerprint)
names the equivalence class.
"""

from __future__ import annotations

import io
import logging
import math
import struct
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import BinaryIO, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import linprog

from mini_udc.core.method_of_types import enumerate_types, num_compositions
from mini_udc.core.model import (
    DistortionMeasure,
    Number,
    as_word,
    exact_value,
    normalize_distortion,
)
from mini_udc.errors import ClassLookupError, DecodeError, InvalidInputError, SizeError

logger = logging.getLogger(__name__)

REL_TOL = 1e-12
LP_MARGIN = 1e-6
TINY_MAX_TYPES = 16

# ---- UDCT file layout ----
UDCT_MAGIC = b"UDCT"
UDCT_VERSION = 1
UDCT_HEADER = struct.Struct(">4sBHBBIIB")  # magic, version, n, J, K, M, class count, kind
UDCT_KIND_TABLE = 0
UDCT_KIND_REGISTRY = 1
UDCT_SCALE = 10**12


def within_level(avg: np.ndarray, d: float, scale: float) -> np.ndarray:
    """avg <= d with a relative tolerance; ties land inside."""
    return avg <= d + REL_TOL * max(abs(d), scale)


# ==== quantization ====

@dataclass(frozen=True, eq=False)
class QuantizedDistortion:
    digits: np.ndarray
    q: int
    n: int
    rho_max: Fraction

    @property
    def step(self) -> Fraction:
        return self.rho_max / (self.q * self.n)

    @property
    def exact_values(self) -> Tuple[Tuple[Fraction, ...], ...]:
        return tuple(tuple(int(m) * self.step for m in row) for row in self.digits)

    @property
    def values(self) -> np.ndarray:
        return self.digits * float(self.step)

    def to_measure(self) -> DistortionMeasure:
        measure, _ = normalize_distortion(self.exact_values, rho_max=self.rho_max)
        return measure


def _entries(rho: DistortionMeasure) -> List[List[Fraction]]:
    if rho.exact is not None:
        return [list(r) for r in rho.exact]
    return [[Fraction(float(v)) for v in r] for r in rho.rho]


def _rho_max_exact(rho: DistortionMeasure) -> Fraction:
    return rho.exact_rho_max if rho.exact_rho_max is not None else Fraction(rho.rho_max)


def quantization_q(rho: DistortionMeasure, d: Number) -> int:
    d_ex = exact_value(d)
    d_ex = d_ex if d_ex is not None else Fraction(float(d))
    if d_ex <= 0:
        raise InvalidInputError(f"distortion level must be positive, got {d}")
    return math.ceil(_rho_max_exact(rho) / d_ex)


def quantize_distortion(rho: DistortionMeasure, d: Number, n: int) -> QuantizedDistortion:
    """Round every entry down onto the grid m rho_max / (q n), q = ceil(rho_max / d)."""
    if n < 1:
        raise InvalidInputError(f"blocklength must be positive, got {n}")
    q = quantization_q(rho, d)
    rmax = _rho_max_exact(rho)
    digits = np.array(
        [[math.floor(v * q * n / rmax) for v in row] for row in _entries(rho)], dtype=np.int64
    )
    return QuantizedDistortion(digits, q, n, rmax)


# ==== fingerprints ====

@dataclass(frozen=True)
class ClassFingerprint:
    """Packed labels over the ranked joint n-types (bit i is type rank i)."""

    packed: bytes
    length: int

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "ClassFingerprint":
        labels = np.asarray(labels, dtype=bool)
        return cls(np.packbits(labels).tobytes(), int(labels.size))

    @classmethod
    def from_int(cls, value: int, length: int) -> "ClassFingerprint":
        labels = np.array([(value >> i) & 1 for i in range(length)], dtype=bool)
        return cls.from_labels(labels)

    @property
    def labels(self) -> np.ndarray:
        bits = np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8))
        return bits[: self.length].astype(bool)

    def as_int(self) -> int:
        return sum(1 << i for i, b in enumerate(self.labels) if b)


def joint_type_counts(n: int, J: int, K: int) -> np.ndarray:
    """Ranked joint n-types as an (M, J*K) count matrix."""
    return enumerate_types(n, J * K).counts


def exact_scaled(rho: DistortionMeasure, d: Number) -> Optional[Tuple[np.ndarray, int]]:
    """Integer-scaled copies of rho and d when both are exact rationals."""
    d_ex = exact_value(d) if not isinstance(d, float) else None
    if rho.exact is None or d_ex is None:
        return None
    entries = [v for row in rho.exact for v in row] + [d_ex]
    scale = math.lcm(*(v.denominator for v in entries))
    ints = np.array([int(v * scale) for v in entries[:-1]], dtype=object).reshape(rho.J, rho.K)
    return ints, int(d_ex * scale)


def fingerprint(rho: DistortionMeasure, d: Number, n: int) -> ClassFingerprint:
    counts = joint_type_counts(n, rho.J, rho.K)
    scaled = exact_scaled(rho, d)
    if scaled is not None:
        ints, level = scaled
        bound = level * n
        sums = counts.astype(object) @ ints.reshape(-1)
        labels = np.array([s <= bound for s in sums], dtype=bool)
    else:
        avg = counts @ rho.rho.reshape(-1) / n
        labels = within_level(avg, float(d), rho.rho_max)
    return ClassFingerprint.from_labels(labels)


def growth_bound(n: int, J: int, K: int) -> int:
    """min(sum_{i<=JK+1} C(M, i), 2^M) with M the number of joint n-types."""
    M = num_compositions(n, J * K)
    sauer = sum(math.comb(M, i) for i in range(J * K + 2))
    return min(sauer, 2**M)


def growth_bound_polynomial(n: int, J: int, K: int) -> int:
    return (n + 1) ** (J * J * K * K - 1) + 1


# ==== class tables ====

@dataclass
class ClassTable:
    n: int
    J: int
    K: int
    fingerprints: List[ClassFingerprint] = field(default_factory=list)
    representatives: List[Tuple[DistortionMeasure, float]] = field(default_factory=list)
    _index: Dict[ClassFingerprint, int] = field(default_factory=dict, repr=False)

    def add(self, fp: ClassFingerprint, rho: DistortionMeasure, d: float) -> int:
        if fp in self._index:
            return self._index[fp]
        self._index[fp] = len(self.fingerprints)
        self.fingerprints.append(fp)
        self.representatives.append((rho, d))
        return self._index[fp]

    def find(self, fp: ClassFingerprint) -> Optional[int]:
        return self._index.get(fp)

    def __len__(self) -> int:
        return len(self.fingerprints)

    @property
    def M(self) -> int:
        return num_compositions(self.n, self.J * self.K)

    @property
    def index_bits(self) -> int:
        return max(1, math.ceil(math.log2(len(self)))) if len(self) > 1 else 0


def _realize(labels: np.ndarray, counts: np.ndarray, J: int, K: int, n: int, rho_max: float) -> Optional[Tuple[np.ndarray, float]]:
    """Find (rho, d) with the given labels, trying every row-zero pattern."""
    JK = J * K
    avg = counts / n
    inside, outside = avg[labels], avg[~labels]
    # +1: s.rho - d <= -margin ; -1: -s.rho + d <= -margin
    A_ub = np.vstack(
        [
            np.hstack([inside, -np.ones((inside.shape[0], 1))]),
            np.hstack([-outside, np.ones((outside.shape[0], 1))]),
        ]
    )
    b_ub = np.full(A_ub.shape[0], -LP_MARGIN)
    for zeros in product(range(K), repeat=J):
        bounds = [(0.0, rho_max)] * JK + [(LP_MARGIN, rho_max + 1.0)]
        for j, k in enumerate(zeros):
            bounds[j * K + k] = (0.0, 0.0)
        res = linprog(np.zeros(JK + 1), A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if res.status == 0:
            x = np.clip(res.x, 0.0, None)
            rho = np.minimum(x[:JK].reshape(J, K), rho_max)
            for j, k in enumerate(zeros):
                rho[j, k] = 0.0
            return rho, float(x[JK])
    return None


def enumerate_realizable_classes(n: int, J: int, K: int, rho_max: float = 1.0) -> ClassTable:
    """Every realizable labeling of the joint n-types, with an LP-found representative.

    Labelings are visited in ascending integer order, so the table is
    deterministic. Only feasible while the number of joint types M stays tiny.
    """
    M = num_compositions(n, J * K)
    if M > TINY_MAX_TYPES:
        raise SizeError(
            f"{M} joint types for n={n}, J={J}, K={K} exceeds {TINY_MAX_TYPES}; "
            "use fingerprint-hash mode (ClassRegistry) instead"
        )
    counts = joint_type_counts(n, J, K)
    table = ClassTable(n, J, K)
    for value in range(2**M):
        target = ClassFingerprint.from_int(value, M)
        found = _realize(target.labels, counts, J, K, n, rho_max)
        if found is None:
            continue
        rho_arr, d = found
        rho, _ = normalize_distortion(rho_arr, rho_max=rho_max)
        if fingerprint(rho, d, n) != target:
            logger.warning("LP representative for labeling %d failed re-verification", value)
            continue
        table.add(target, rho, d)
    logger.info("n=%d J=%d K=%d: %d realizable classes of %d labelings", n, J, K, len(table), 2**M)
    return table


def class_index_of(rho: DistortionMeasure, d: Number, table: ClassTable) -> int:
    fp = fingerprint(rho, d, table.n)
    idx = table.find(fp)
    if idx is None:
        raise ClassLookupError(f"fingerprint not in the class table for n={table.n}; use a ClassRegistry")
    return idx


class ClassRegistry:
    """Session registry: classes are indexed in order of first encounter.

    Encoder and decoder share one registry; indices are written with a fixed
    width of ceil(log2 growth_bound) bits.
    """

    def __init__(self, n: int, J: int, K: int):
        self.table = ClassTable(n, J, K)
        self._lock = threading.Lock()

    @classmethod
    def from_table(cls, table: ClassTable) -> "ClassRegistry":
        """Resume a saved registry; new classes continue after the loaded ones."""
        reg = cls(table.n, table.J, table.K)
        reg.table = table
        return reg

    def snapshot(self) -> ClassTable:
        with self._lock:
            return ClassTable(
                self.table.n,
                self.table.J,
                self.table.K,
                list(self.table.fingerprints),
                list(self.table.representatives),
                dict(self.table._index),
            )

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def J(self) -> int:
        return self.table.J

    @property
    def K(self) -> int:
        return self.table.K

    @property
    def index_bits(self) -> int:
        return max(1, math.ceil(math.log2(growth_bound(self.table.n, self.table.J, self.table.K))))

    def index_of(self, rho: DistortionMeasure, d: Number) -> int:
        fp = fingerprint(rho, d, self.table.n)
        with self._lock:
            before = len(self.table)
            idx = self.table.add(fp, rho, float(d))
            if len(self.table) > before:
                logger.debug("registered class %d for n=%d", idx, self.table.n)
        return idx

    def representative(self, index: int) -> Tuple[DistortionMeasure, float]:
        with self._lock:
            if not 0 <= index < len(self.table):
                raise ClassLookupError(f"class index {index} is not registered")
            return self.table.representatives[index]

    def __len__(self) -> int:
        return len(self.table)


AnyClassTable = Union[ClassTable, ClassRegistry]


# ==== UDCT files ====

def _scaled(v: float) -> int:
    s = int(round(v * UDCT_SCALE))
    if not 0 <= s < 2**64:
        raise InvalidInputError(f"value {v} does not fit the class-table encoding")
    return s


def save_class_table(table: AnyClassTable, f: BinaryIO) -> None:
    """Write a frozen table, or a registry snapshot that keeps its index width on reload."""
    if isinstance(table, ClassRegistry):
        kind, table = UDCT_KIND_REGISTRY, table.snapshot()
    else:
        kind = UDCT_KIND_TABLE
    M = table.M
    f.write(UDCT_HEADER.pack(UDCT_MAGIC, UDCT_VERSION, table.n, table.J, table.K, M, len(table), kind))
    for fp in table.fingerprints:
        f.write(fp.packed)
    for rho, d in table.representatives:
        values = [rho.rho_max, d] + list(rho.rho.reshape(-1))
        f.write(struct.pack(f">{len(values)}Q", *(_scaled(v) for v in values)))


def _read_exact(f: BinaryIO, size: int) -> bytes:
    b = f.read(size)
    if len(b) != size:
        raise DecodeError(f"class table truncated: wanted {size} bytes, got {len(b)}")
    return b


def load_class_table(f: BinaryIO) -> AnyClassTable:
    magic, version, n, J, K, M, count, kind = UDCT_HEADER.unpack(_read_exact(f, UDCT_HEADER.size))
    if magic != UDCT_MAGIC:
        raise DecodeError("not a UDCT class table")
    if version != UDCT_VERSION:
        raise DecodeError(f"unsupported class table version {version}")
    if kind not in (UDCT_KIND_TABLE, UDCT_KIND_REGISTRY):
        raise DecodeError(f"unknown class table kind {kind}")
    if M != num_compositions(n, J * K):
        raise DecodeError(f"class table claims {M} joint types for n={n}, J={J}, K={K}")
    nbytes = (M + 7) // 8
    fps = [ClassFingerprint(_read_exact(f, nbytes), M) for _ in range(count)]
    table = ClassTable(n, J, K)
    width = 2 + J * K
    for fp in fps:
        raw = struct.unpack(f">{width}Q", _read_exact(f, 8 * width))
        rho_max, d = raw[0] / UDCT_SCALE, raw[1] / UDCT_SCALE
        rho, _ = normalize_distortion(np.array(raw[2:], dtype=np.float64).reshape(J, K) / UDCT_SCALE, rho_max=rho_max)
        if fingerprint(rho, d, n) != fp:
            if kind == UDCT_KIND_TABLE:
                raise DecodeError("class table representative does not reproduce its fingerprint")
            # registry entries index by fingerprint; a representative on a label boundary may round across it
            logger.warning("registry representative for class %d moved off its fingerprint", len(table))
        table.add(fp, rho, d)
    if len(table) != count:
        raise DecodeError(f"class table lists {count} classes but only {len(table)} are distinct")
    if kind == UDCT_KIND_REGISTRY:
        return ClassRegistry.from_table(table)
    return table


def class_table_bytes(table: AnyClassTable) -> bytes:
    buf = io.BytesIO()
    save_class_table(table, buf)
    return buf.getvalue()


def within_distortion_batch(xs, ys, rho: DistortionMeasure, d: Number) -> np.ndarray:
    """Row-wise rho_n(xs[i], ys[i]) <= d under the same comparison rule fingerprints use."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.int64))
    if xs.shape != ys.shape or xs.shape[1] == 0:
        raise InvalidInputError(f"word batches must match and be non-empty: {xs.shape} vs {ys.shape}")
    as_word(xs.reshape(-1), rho.J)
    as_word(ys.reshape(-1), rho.K)
    n = xs.shape[1]
    scaled = exact_scaled(rho, d)
    if scaled is not None:
        ints, level = scaled
        totals = ints[xs, ys].sum(axis=1)
        bound = level * n
        return np.array([t <= bound for t in totals], dtype=bool)
    return within_level(rho.rho[xs, ys].sum(axis=1) / n, float(d), rho.rho_max)


def within_distortion(x, y, rho: DistortionMeasure, d: Number) -> bool:
    """rho_n(x, y) <= d under the same comparison rule fingerprints use."""
    xw, yw = as_word(x, rho.J), as_word(y, rho.K)
    if xw.size != yw.size:
        raise InvalidInputError(f"length mismatch: {xw.size} != {yw.size}")
    return bool(within_distortion_batch(xw[None, :], yw[None, :], rho, d)[0])

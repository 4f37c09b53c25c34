"""Type-indexed cover codecs.

t1 sends the source type and the equivalence class of (rho, d), then the
prefix code of a cover word built for that class. t2 sends the type and
the quantized measure, the cover word under the quantized measure, and a
one-symbol post-correction when the true measure exceeds d.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from mini_udc.codec.bitcoder import BitReader, BitString, BitWriter, ceil_log2
from mini_udc.codec.cover import CoverCodebook, covers_cache, digit_predicate, label_predicate
from mini_udc.core.distortion_space import (
    AnyClassTable,
    ClassFingerprint,
    ClassRegistry,
    fingerprint,
    quantize_distortion,
    within_distortion,
    within_distortion_batch,
)
from mini_udc.core.method_of_types import (
    NType,
    composition_unrank,
    enumerate_types,
    num_compositions,
    type_class_members,
    type_of,
    type_probabilities,
)
from mini_udc.core.model import DistortionMeasure, Number, SourceDistribution, as_word, exact_value
from mini_udc.errors import ClassLookupError, DecodeError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EncodedFrame:
    codec: str
    header: BitString
    payload: BitString
    correction: BitString
    y: np.ndarray
    type_rank: int
    post_correction: bool = False
    class_index: Optional[int] = None

    @property
    def bits(self) -> BitString:
        return self.header + self.payload + self.correction

    def __len__(self) -> int:
        return self.header.length + self.payload.length + self.correction.length


def type_rank_bits(n: int, J: int) -> int:
    return ceil_log2(num_compositions(n, J))


def _exact(v: Number) -> Fraction:
    ex = exact_value(v) if not isinstance(v, float) else None
    return ex if ex is not None else Fraction(float(v))


# ==== t2: quantized measure with post-correction ====

@dataclass(frozen=True)
class T2Grid:
    """Quantization grid shared by both ends: q = ceil(rho_max / d), digits 0..q n."""

    n: int
    q: int
    threshold: int
    digit_bits: int
    d: Fraction
    rho_max: Fraction

    @classmethod
    def of(cls, n: int, d: Number, rho_max: Number) -> "T2Grid":
        d_ex, rmax = _exact(d), _exact(rho_max)
        if d_ex <= 0 or rmax <= 0:
            raise InvalidInputError("d and rho_max must be positive")
        q = math.ceil(rmax / d_ex)
        # sum of digits <= q n^2 d / rho_max  <=>  quantized average <= d
        threshold = math.floor(q * n * n * d_ex / rmax)
        return cls(n, q, threshold, ceil_log2(q * n + 1), d_ex, rmax)

    @property
    def step(self) -> Fraction:
        return self.rho_max / (self.q * self.n)

    def header_bits(self, J: int, K: int) -> int:
        return type_rank_bits(self.n, J) + J * K * self.digit_bits


def _rho_max_of(rho: DistortionMeasure) -> Fraction:
    return rho.exact_rho_max if rho.exact_rho_max is not None else Fraction(rho.rho_max)


def t2_cover(t: NType, digits: np.ndarray, grid: T2Grid, K: int) -> CoverCodebook:
    key = ("t2", grid.n, t.m, K, t.rank, digits.tobytes(), grid.threshold)
    return covers_cache.get_or_build(key, t, K, digit_predicate(digits, grid.threshold))


def encode_t2(x, rho: DistortionMeasure, d: Number, correct: bool = True) -> EncodedFrame:
    """Encode x so the decoded word is within d of x under the true rho.

    ``correct=False`` skips the post-correction step; it exists only for
    fault-injection runs and can violate the distortion guarantee.
    """
    xw = as_word(x, rho.J)
    n = int(xw.size)
    t = type_of(xw, rho.J)
    grid = T2Grid.of(n, d, _rho_max_of(rho))
    qd = quantize_distortion(rho, d, n)
    assert qd.q == grid.q, "quantizer and grid disagree on q"

    w = BitWriter()
    w.write(t.rank, type_rank_bits(n, rho.J))
    for m in qd.digits.reshape(-1):
        w.write(int(m), grid.digit_bits)
    header = w.getvalue()

    cover = t2_cover(t, qd.digits, grid, rho.K)
    idx = cover.assign(xw)
    word = cover.words[idx].copy()
    payload = cover.payload(idx)

    c = BitWriter()
    corrected = False
    if within_distortion(xw, word, rho, d) or not correct:
        c.write_bit(0)
        y = word
    else:
        pos = int(np.argmax(rho.rho[xw, word]))
        sym = int(np.argmin(rho.rho[xw[pos]]))
        y = word.copy()
        y[pos] = sym
        before = float(rho.rho[xw, word].mean())
        after = float(rho.rho[xw, y].mean())
        bound = float(grid.d + grid.step - grid.d / n)
        slack = 1e-12 * max(1.0, rho.rho_max)
        assert before <= float(grid.d + grid.step) + slack, "quantized cover exceeded d + step"
        assert after <= bound + slack and bound <= float(grid.d) + slack, "post-correction chain broken"
        c.write_bit(1)
        c.write(pos, ceil_log2(n))
        c.write(sym, ceil_log2(rho.K))
        corrected = True
        logger.debug("post-correction at position %d -> symbol %d", pos, sym)
    if correct:
        assert within_distortion(xw, y, rho, d), "t2 output exceeds d"
    return EncodedFrame("t2", header, payload, c.getvalue(), y, t.rank, corrected)


def decode_t2_from(reader: BitReader, n: int, J: int, K: int, d: Number, rho_max: Number) -> np.ndarray:
    grid = T2Grid.of(n, d, rho_max)
    rank = reader.read(type_rank_bits(n, J))
    if rank >= num_compositions(n, J):
        raise DecodeError(f"type rank {rank} out of range")
    t = NType(composition_unrank(rank, n, J), n)
    digits = np.array([reader.read(grid.digit_bits) for _ in range(J * K)], dtype=np.int64)
    if digits.max() > grid.q * n:
        raise DecodeError("quantization digit exceeds q n")
    digits = digits.reshape(J, K)
    cover = t2_cover(t, digits, grid, K)
    y = cover.words[cover.code.decode(reader)].copy()
    if reader.read_bit():
        pos = reader.read(ceil_log2(n))
        sym = reader.read(ceil_log2(K))
        if pos >= n or sym >= K:
            raise DecodeError(f"correction ({pos}, {sym}) out of range")
        y[pos] = sym
    return y


def decode_t2(bits: BitString, n: int, J: int, K: int, d: Number, rho_max: Number) -> np.ndarray:
    reader = BitReader(bits)
    y = decode_t2_from(reader, n, J, K, d, rho_max)
    if not reader.at_end():
        raise DecodeError(f"{reader.remaining} trailing bits after t2 frame")
    return y


# ==== t1: equivalence-class index ====

def class_index_bits(table: AnyClassTable) -> int:
    return table.index_bits


def _lookup(table: AnyClassTable, rho: DistortionMeasure, d: Number) -> int:
    if isinstance(table, ClassRegistry):
        return table.index_of(rho, d)
    idx = table.find(fingerprint(rho, d, table.n))
    if idx is None:
        raise ClassLookupError(f"(rho, d) falls in no class of the n={table.n} table; use a ClassRegistry")
    return idx


def _fingerprint_at(table: AnyClassTable, index: int) -> ClassFingerprint:
    tbl = table.table if isinstance(table, ClassRegistry) else table
    if not 0 <= index < len(tbl):
        raise DecodeError(f"class index {index} not in table of {len(tbl)} classes")
    return tbl.fingerprints[index]


def t1_cover(t: NType, fp: ClassFingerprint, n: int, K: int) -> CoverCodebook:
    key = ("t1", n, t.m, K, t.rank, fp.packed)
    return covers_cache.get_or_build(key, t, K, label_predicate(fp, n, t.m, K))


def encode_t1(x, rho: DistortionMeasure, d: Number, table: AnyClassTable) -> EncodedFrame:
    xw = as_word(x, rho.J)
    n = int(xw.size)
    if n != table.n:
        raise InvalidInputError(f"word length {n} does not match the class table's n={table.n}")
    t = type_of(xw, rho.J)
    index = _lookup(table, rho, d)
    w = BitWriter()
    w.write(t.rank, type_rank_bits(n, rho.J))
    w.write(index, class_index_bits(table))

    cover = t1_cover(t, _fingerprint_at(table, index), n, rho.K)
    idx = cover.assign(xw)
    y = cover.words[idx].copy()
    assert within_distortion(xw, y, rho, d), "t1 output exceeds d"
    return EncodedFrame("t1", w.getvalue(), cover.payload(idx), BitString(), y, t.rank, False, index)


def decode_t1_from(reader: BitReader, n: int, J: int, K: int, table: AnyClassTable) -> np.ndarray:
    rank = reader.read(type_rank_bits(n, J))
    if rank >= num_compositions(n, J):
        raise DecodeError(f"type rank {rank} out of range")
    t = NType(composition_unrank(rank, n, J), n)
    fp = _fingerprint_at(table, reader.read(class_index_bits(table)))
    cover = t1_cover(t, fp, n, K)
    return cover.words[cover.code.decode(reader)].copy()


def decode_t1(bits: BitString, n: int, J: int, K: int, table: AnyClassTable) -> np.ndarray:
    reader = BitReader(bits)
    y = decode_t1_from(reader, n, J, K, table)
    if not reader.at_end():
        raise DecodeError(f"{reader.remaining} trailing bits after t1 frame")
    return y


# ==== exact expected rate ====

def measure_expected_rate(
    codec: str, p: SourceDistribution, rho: DistortionMeasure, d: Number, n: int, table: Optional[AnyClassTable] = None
) -> float:
    """Expected frame length in nats per symbol, exact over the type distribution."""
    if codec not in ("t1", "t2"):
        raise InvalidInputError(f"exact rate is defined for t1/t2, not {codec!r}")
    types = enumerate_types(n, p.J)
    probs = type_probabilities(p, n)
    rank_bits = type_rank_bits(n, p.J)
    if codec == "t1":
        if table is None:
            raise InvalidInputError("t1 needs a class table")
        index = _lookup(table, rho, d)
        fp = _fingerprint_at(table, index)
        header = rank_bits + class_index_bits(table)
    else:
        grid = T2Grid.of(n, d, _rho_max_of(rho))
        digits = quantize_distortion(rho, d, n).digits
        header = grid.header_bits(rho.J, rho.K)
        fix_bits = ceil_log2(n) + ceil_log2(rho.K)

    total = 0.0
    for i in np.flatnonzero(probs > 0):
        t = types[int(i)]
        if codec == "t1":
            cover = t1_cover(t, fp, n, rho.K)
            extra = 0.0
        else:
            cover = t2_cover(t, digits, grid, rho.K)
            members = type_class_members(t)
            ok = within_distortion_batch(members, cover.words[cover.assignment], rho, d)
            extra = 1.0 + fix_bits * float(np.mean(~ok))
        total += probs[i] * (header + cover.mean_payload_bits() + extra)
    return total * math.log(2) / n

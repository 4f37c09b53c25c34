"""Random-codebook codec driven by NML draws and acceptance-rejection.

Raw codewords Z_1, Z_2, ... are i.i.d. from the NML distribution over B^n
and are a pure function of (seed, index). The encoder thins them with
uniforms from a separate auxiliary stream so the accepted ones are i.i.d.
from Q*^n, and sends the raw index of the first accepted draw within
distortion d. The decoder only regenerates raw draws.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from mini_udc.codec.bitcoder import BitReader, BitString, BitWriter, ceil_log2, elias2_decode, elias2_encode
from mini_udc.codec.rng import block_generator, check_seed, derive_seed
from mini_udc.core.distortion_space import within_distortion, within_distortion_batch
from mini_udc.core.method_of_types import enumerate_types, type_class_log_size, type_of, weighted_log
from mini_udc.core.model import DistortionMeasure, Number, SourceDistribution, as_word, zero_distortion_word
from mini_udc.core.rd_solver import plug_in_expectation, sd_membership, solve_rd
from mini_udc.errors import DecodeError, EmptySampleError, InvalidInputError

logger = logging.getLogger(__name__)

BATCH = 1024
CAP_LIMIT = 2**32
FLAG_BITS = 3
FLAG_ELIAS = 3
FLAG_FALLBACK = 4


# ==== Shtarkov sums ====

@dataclass(frozen=True)
class ShtarkovSum:
    n: int
    K: int
    log_value: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _log_ml(counts: np.ndarray) -> np.ndarray:
    """sum_k c_k ln(c_k / n), the log of the maximized i.i.d. likelihood."""
    n = counts.sum(axis=-1, keepdims=True)
    safe = np.where(counts > 0, counts, 1)
    return np.sum(np.where(counts > 0, counts * np.log(safe / n), 0.0), axis=-1)


@functools.lru_cache(maxsize=128)
def _nml_types(n: int, K: int) -> Tuple[np.ndarray, np.ndarray, float]:
    counts = enumerate_types(n, K).counts
    logw = type_class_log_size(counts) + _log_ml(counts)
    log_s = float(logsumexp(logw))
    return counts, np.exp(logw - log_s), log_s


def shtarkov_sum(n: int, K: int) -> ShtarkovSum:
    """ln S_n = ln sum_t |T(t)| prod_k t(k)^{n t(k)}, exact over types."""
    if n < 1 or K < 1:
        raise InvalidInputError(f"need n >= 1 and K >= 1, got n={n} K={K}")
    return ShtarkovSum(n, K, _nml_types(n, K)[2])


def nml_probability(z, K: int) -> float:
    """Q^NML(z) = prod_k t(k)^{c_k} / S_n."""
    zw = as_word(z, K)
    counts = np.bincount(zw, minlength=K)
    return math.exp(float(_log_ml(counts)) - shtarkov_sum(int(zw.size), K).log_value)


# ==== codeword stream ====

@dataclass
class CodewordStream:
    """Raw NML draws; draw i (1-based) depends only on (seed, i)."""

    seed: int
    n: int
    K: int
    position: int = 0
    _cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        check_seed(self.seed)
        counts, probs, _ = _nml_types(self.n, self.K)
        self._counts = counts
        self._cdf = np.cumsum(probs)
        self._base = np.stack([np.repeat(np.arange(self.K), c) for c in counts])

    def batch(self, b: int) -> Tuple[np.ndarray, np.ndarray]:
        """(words, type indices) for raw draws b*BATCH+1 .. (b+1)*BATCH."""
        hit = self._cache.get(b)
        if hit is not None:
            return hit
        g = block_generator(self.seed, "codewords", b)
        u = g.random(BATCH)
        tidx = np.minimum(np.searchsorted(self._cdf, u * self._cdf[-1], side="right"), len(self._cdf) - 1)
        order = np.argsort(g.random((BATCH, self.n)), axis=1)
        words = np.take_along_axis(self._base[tidx], order, axis=1)
        self._cache.clear()
        self._cache[b] = (words, tidx)
        return words, tidx

    def draw(self, i: int) -> np.ndarray:
        if i < 1:
            raise InvalidInputError(f"raw draw index is 1-based, got {i}")
        words, _ = self.batch((i - 1) // BATCH)
        return words[(i - 1) % BATCH].copy()

    def next(self) -> np.ndarray:
        self.position += 1
        return self.draw(self.position)

    @property
    def type_counts(self) -> np.ndarray:
        return self._counts


def nml_draw(stream: CodewordStream) -> np.ndarray:
    return stream.next()


def aux_uniforms(seed: int, b: int) -> np.ndarray:
    """Encoder-only uniforms for raw draws of batch b."""
    return block_generator(seed, "aux", b).random(BATCH)


# ==== index search ====

@dataclass(frozen=True)
class SearchResult:
    index: Optional[int]
    word: Optional[np.ndarray]
    raw_draws: int
    accepted: int

    @property
    def exhausted(self) -> bool:
        return self.index is None


def acceptance_log_ratio(counts: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """ln Q^n(z) - ln sup_q q^n(z) per type; never positive."""
    return weighted_log(counts, Q) - _log_ml(counts)


def default_cap(n: int, K: int) -> int:
    return min(K**n, CAP_LIMIT)


def accepted_index_search(
    stream: CodewordStream, x, rho: DistortionMeasure, d: Number, cap: int, Q: Optional[np.ndarray] = None
) -> SearchResult:
    """First raw index whose draw is accepted and within d of x, or exhausted past cap."""
    xw = as_word(x, rho.J)
    if Q is None:
        t = type_of(xw, rho.J)
        Q = solve_rd(t.freqs, float(d), rho).Q_star
    log_ratio = acceptance_log_ratio(stream.type_counts, Q)
    accepted = 0
    b = 0
    while b * BATCH < cap:
        words, tidx = stream.batch(b)
        with np.errstate(divide="ignore"):
            ok = np.log(aux_uniforms(stream.seed, b)) < log_ratio[tidx]
        limit = min(BATCH, cap - b * BATCH)
        ok[limit:] = False
        hits = np.flatnonzero(ok)
        if hits.size:
            feasible = within_distortion_batch(np.broadcast_to(xw, (hits.size, xw.size)), words[hits], rho, d)
            good = hits[feasible]
            if good.size:
                j = int(good[0])
                accepted += int(np.sum(hits <= j))
                return SearchResult(b * BATCH + j + 1, words[j].copy(), b * BATCH + j + 1, accepted)
        accepted += int(hits.size)
        b += 1
    return SearchResult(None, None, cap, accepted)


# ==== frames ====

@dataclass(frozen=True, eq=False)
class NmlFrame:
    flag: int
    body: BitString
    index: Optional[int]
    y: np.ndarray

    @property
    def bits(self) -> BitString:
        return BitString(self.flag, FLAG_BITS) + self.body

    def __len__(self) -> int:
        return FLAG_BITS + self.body.length


def _fixed_rate(word: np.ndarray, K: int) -> BitString:
    w = BitWriter()
    for s in word:
        w.write(int(s), ceil_log2(K))
    return w.getvalue()


def encode_nml(x, rho: DistortionMeasure, d: Number, seed: int, cap: Optional[int] = None) -> NmlFrame:
    xw = as_word(x, rho.J)
    n = int(xw.size)
    cap = default_cap(n, rho.K) if cap is None else cap
    if not 0 <= cap <= CAP_LIMIT:
        raise InvalidInputError(f"cap must lie in [0, 2^32], got {cap}")
    stream = CodewordStream(seed, n, rho.K)
    found = accepted_index_search(stream, xw, rho, d, cap)
    if found.exhausted:
        y = zero_distortion_word(xw, rho)
        logger.debug("index search exhausted at cap=%d, sending fixed-rate fallback", cap)
        return NmlFrame(FLAG_FALLBACK, _fixed_rate(y, rho.K), None, y)
    i = found.index
    assert i is not None and found.word is not None
    body = BitString() if i <= 3 else elias2_encode(i)
    flag = i - 1 if i <= 3 else FLAG_ELIAS
    assert within_distortion(xw, found.word, rho, d), "nml output exceeds d"
    return NmlFrame(flag, body, i, found.word)


def decode_nml_from(reader: BitReader, seed: int, n: int, K: int) -> np.ndarray:
    flag = reader.read(FLAG_BITS)
    if flag < FLAG_ELIAS:
        i = flag + 1
    elif flag == FLAG_ELIAS:
        i, _ = elias2_decode(reader)
    elif flag == FLAG_FALLBACK:
        width = ceil_log2(K)
        y = np.array([reader.read(width) for _ in range(n)], dtype=np.int64)
        if y.size and y.max() >= K:
            raise DecodeError("fallback symbol out of range")
        return y
    else:
        raise DecodeError(f"unknown flag {flag:03b}")
    return CodewordStream(seed, n, K).draw(i)


def decode_nml(bits: BitString, seed: int, n: int, K: int) -> np.ndarray:
    reader = BitReader(bits)
    y = decode_nml_from(reader, seed, n, K)
    if not reader.at_end():
        raise DecodeError(f"{reader.remaining} trailing bits after nml frame")
    return y


# ==== Monte Carlo rate ====

@dataclass(frozen=True)
class NmlRate:
    mean: float
    half_width: float
    trials: int
    mean_index: float
    fallbacks: int
    rd_rate: Optional[float] = None
    plug_in: Optional[float] = None


def sample_source(p: SourceDistribution, n: int, seed: int, trial: int) -> np.ndarray:
    return block_generator(seed, "source", trial).choice(p.J, size=n, p=p.p)


def measure_rate_nml(
    p: SourceDistribution,
    rho: DistortionMeasure,
    d: Number,
    n: int,
    trials: int,
    seed: int,
    cap: Optional[int] = None,
    anchors: bool = True,
) -> NmlRate:
    """Mean frame length (nats/symbol) over independent (codebook, source) draws, with a 95% CI."""
    if trials < 1:
        raise EmptySampleError("measure_rate_nml needs at least one trial")
    sol = solve_rd(p, float(d), rho)
    if not sd_membership(p, float(d), rho, sol).member:
        logger.warning("(p, d, rho) is not flagged inside S_d; the rate guarantee may not apply")
    lengths = np.empty(trials)
    indices = []
    fallbacks = 0
    for k in range(trials):
        x = sample_source(p, n, seed, k)
        frame = encode_nml(x, rho, d, derive_seed(seed, f"codebook-{k}"), cap)
        lengths[k] = len(frame)
        if frame.index is None:
            fallbacks += 1
        else:
            indices.append(frame.index)
    rates = lengths * math.log(2) / n
    half = float(norm.ppf(0.975) * rates.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
    return NmlRate(
        float(rates.mean()),
        half,
        trials,
        float(np.mean(indices)) if indices else math.nan,
        fallbacks,
        sol.rate if anchors else None,
        plug_in_expectation(p, float(d), rho, n) if anchors else None,
    )


# ==== acceptance diagnostics ====

def accepted_draws(seed: int, n: int, K: int, Q: np.ndarray, raw: int) -> Tuple[int, np.ndarray]:
    """Acceptance count and accepted words among the first ``raw`` raw draws."""
    stream = CodewordStream(seed, n, K)
    log_ratio = acceptance_log_ratio(stream.type_counts, np.asarray(Q, dtype=np.float64))
    kept = []
    for b in range((raw + BATCH - 1) // BATCH):
        words, tidx = stream.batch(b)
        with np.errstate(divide="ignore"):
            ok = np.log(aux_uniforms(seed, b)) < log_ratio[tidx]
        ok[min(BATCH, raw - b * BATCH):] = False
        kept.append(words[ok])
    accepted = np.concatenate(kept) if kept else np.empty((0, n), dtype=np.int64)
    return int(accepted.shape[0]), accepted

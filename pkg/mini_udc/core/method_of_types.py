"""Method of types: n-types, joint n-types, their ranks, sizes and probabilities.

Types are ranked in lexicographic order of their count vectors. That order
is part of the wire format: fixed-width type headers carry the rank.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from mini_udc.core.model import SourceDistribution, as_word, kl_divergence
from mini_udc.errors import InvalidInputError, SizeError

MAX_TYPES = 5_000_000
MAX_WORDS = 2_000_000
A_SQUARED_TOL = 1e-9


# ==== composition ranking ====

def num_compositions(n: int, m: int) -> int:
    """C(n+m-1, m-1): count vectors of length m summing to n."""
    if m < 1 or n < 0:
        raise InvalidInputError(f"bad composition parameters n={n} m={m}")
    return math.comb(n + m - 1, m - 1)


def composition_rank(counts: Sequence[int]) -> int:
    rank = 0
    rem = sum(counts)
    m = len(counts)
    for i, c in enumerate(counts[:-1]):
        tail = m - i - 1
        for v in range(c):
            rank += num_compositions(rem - v, tail)
        rem -= c
    return rank


def composition_unrank(rank: int, n: int, m: int) -> Tuple[int, ...]:
    total = num_compositions(n, m)
    if not 0 <= rank < total:
        raise InvalidInputError(f"type rank {rank} out of range [0, {total})")
    out = []
    rem = n
    for i in range(m - 1):
        tail = m - i - 1
        v = 0
        while True:
            block = num_compositions(rem - v, tail)
            if rank < block:
                break
            rank -= block
            v += 1
        out.append(v)
        rem -= v
    out.append(rem)
    return tuple(out)


def _compositions(n: int, m: int) -> Iterator[Tuple[int, ...]]:
    if m == 1:
        yield (n,)
        return
    for v in range(n + 1):
        for tail in _compositions(n - v, m - 1):
            yield (v,) + tail


# ==== types ====

@dataclass(frozen=True)
class NType:
    counts: Tuple[int, ...]
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError(f"type length must be positive, got {self.n}")
        if any(c < 0 for c in self.counts) or sum(self.counts) != self.n:
            raise InvalidInputError(f"counts {self.counts} do not form an {self.n}-type")

    @classmethod
    def of(cls, counts: Sequence[int]) -> "NType":
        counts = tuple(int(c) for c in counts)
        return cls(counts, sum(counts))

    @property
    def m(self) -> int:
        return len(self.counts)

    @property
    def freqs(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64) / self.n

    @property
    def rank(self) -> int:
        return composition_rank(self.counts)


@dataclass(frozen=True)
class JointNType:
    counts: Tuple[Tuple[int, ...], ...]
    n: int

    def __post_init__(self):
        flat = [c for row in self.counts for c in row]
        if self.n < 1 or any(c < 0 for c in flat) or sum(flat) != self.n:
            raise InvalidInputError(f"counts do not form a joint {self.n}-type")

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.counts), len(self.counts[0])

    @property
    def flat(self) -> Tuple[int, ...]:
        return tuple(c for row in self.counts for c in row)

    @property
    def rank(self) -> int:
        return composition_rank(self.flat)

    def marginal_x(self) -> NType:
        return NType(tuple(sum(row) for row in self.counts), self.n)

    def marginal_y(self) -> NType:
        return NType(tuple(sum(col) for col in zip(*self.counts)), self.n)


class TypeEnumeration:
    """All n-types over an m-letter alphabet in lexicographic (rank) order."""

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.counts = np.array(list(_compositions(n, m)), dtype=np.int64).reshape(-1, m)
        self.counts.setflags(write=False)

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    def __getitem__(self, i: int) -> NType:
        return NType(tuple(int(c) for c in self.counts[i]), self.n)

    def __iter__(self) -> Iterator[NType]:
        return (self[i] for i in range(len(self)))

    def rank(self, t: NType) -> int:
        if t.n != self.n or t.m != self.m:
            raise InvalidInputError(f"type {t} does not belong to n={self.n} m={self.m}")
        return t.rank

    def unrank(self, i: int) -> NType:
        return NType(composition_unrank(i, self.n, self.m), self.n)

    @property
    def freqs(self) -> np.ndarray:
        return self.counts / self.n


def type_count_guard(n: int, m: int, limit: int = MAX_TYPES) -> int:
    count = num_compositions(n, m)
    if count > limit:
        raise SizeError(
            f"{count} types for n={n} over {m} symbols exceeds the limit {limit}; "
            "reduce n or the alphabet size"
        )
    return count


@functools.lru_cache(maxsize=64)
def enumerate_types(n: int, m: int) -> TypeEnumeration:
    if n < 1 or m < 1:
        raise InvalidInputError(f"need n >= 1 and m >= 1, got n={n} m={m}")
    type_count_guard(n, m)
    return TypeEnumeration(n, m)


def type_of(x, J: int) -> NType:
    w = as_word(x, J)
    if w.size == 0:
        raise InvalidInputError("empty word has no type")
    return NType(tuple(int(c) for c in np.bincount(w, minlength=J)), int(w.size))


def joint_type_of(x, y, J: int, K: int) -> JointNType:
    xw, yw = as_word(x, J), as_word(y, K)
    if xw.size != yw.size or xw.size == 0:
        raise InvalidInputError("joint type needs two non-empty words of equal length")
    counts = np.bincount(xw * K + yw, minlength=J * K).reshape(J, K)
    return JointNType(tuple(tuple(int(c) for c in row) for row in counts), int(xw.size))


# ==== sizes and probabilities ====

def type_class_size(t: NType) -> int:
    """Multinomial n!/prod counts! as an exact integer."""
    size = math.factorial(t.n)
    for c in t.counts:
        size //= math.factorial(c)
    return size


def type_class_log_size(counts) -> np.ndarray:
    """ln |T(t)| for one count vector or a stack of them (last axis)."""
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum(axis=-1)
    return gammaln(n + 1) - gammaln(c + 1).sum(axis=-1)


def weighted_log(counts: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """sum_j counts_j ln probs_j over the last axis, with 0 ln 0 = 0."""
    counts = np.asarray(counts)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    # zero counts never meet a -inf log
    safe = np.where(counts > 0, counts, 1)
    return np.where(counts > 0, safe * logp, 0.0).sum(axis=-1)


def _log_type_probabilities(p: np.ndarray, counts: np.ndarray) -> np.ndarray:
    return type_class_log_size(counts) + weighted_log(counts, p)


def type_probability(p: SourceDistribution, t: NType) -> float:
    """p^n(T(t)); zero when t puts mass on a symbol with p(j) = 0."""
    if t.m != p.J:
        raise InvalidInputError(f"type over {t.m} symbols vs source over {p.J}")
    return float(np.exp(_log_type_probabilities(p.p, np.asarray(t.counts))))


def type_probability_upper_bound(p: SourceDistribution, t: NType) -> float:
    return math.exp(-t.n * kl_divergence(t.freqs, p.p))


def type_probability_lower_bound(p: SourceDistribution, t: NType) -> float:
    """(n+1)^{-(J-1)} exp(-n D(t||p)), a lower bound on p^n(T(t))."""
    return type_probability_upper_bound(p, t) / (t.n + 1) ** (t.m - 1)


def type_probabilities(p: SourceDistribution, n: int) -> np.ndarray:
    """p^n(T(t)) for every n-type, in rank order."""
    types = enumerate_types(n, p.J)
    return np.exp(_log_type_probabilities(p.p, types.counts))


def lemma1_bound(J: int, n: int) -> float:
    return math.exp(J - 1) / n**2


def tail_mass(p: SourceDistribution, n: int, a: float) -> float:
    """Probability that ||t - p||_2 exceeds a sqrt(ln n / n)."""
    J = p.J
    if a * a < 2 + 2 * J - A_SQUARED_TOL:
        raise InvalidInputError(f"tail_mass requires a^2 >= {2 + 2 * J}, got a={a}")
    types = enumerate_types(n, J)
    radius = a * math.sqrt(math.log(n) / n)
    dist = np.linalg.norm(types.freqs - p.p, axis=1)
    probs = type_probabilities(p, n)
    return float(probs[dist > radius].sum())


def nearest_type(p: SourceDistribution, n: int) -> NType:
    """Largest-remainder rounding of n p onto the n-type lattice."""
    scaled = p.p * n
    base = np.floor(scaled).astype(np.int64)
    short = n - int(base.sum())
    # stable sort keeps the lowest index first among equal remainders
    order = np.argsort(-(scaled - base), kind="stable")
    base[order[:short]] += 1
    return NType(tuple(int(c) for c in base), n)


# ==== words ====

def iter_type_class(t: NType) -> Iterator[Tuple[int, ...]]:
    """Members of T(t) in lexicographic order."""
    remaining = list(t.counts)
    word: List[int] = []

    def walk():
        if len(word) == t.n:
            yield tuple(word)
            return
        for s, c in enumerate(remaining):
            if c:
                remaining[s] -= 1
                word.append(s)
                yield from walk()
                word.pop()
                remaining[s] += 1

    yield from walk()


def type_class_members(t: NType, limit: int = MAX_WORDS) -> np.ndarray:
    size = type_class_size(t)
    if size > limit:
        raise SizeError(f"type class of size {size} exceeds {limit}; reduce n")
    return np.array(list(iter_type_class(t)), dtype=np.int64).reshape(size, t.n)


def rank_word(w, alphabet_size: int) -> int:
    """Base-m value of w, first symbol most significant."""
    r = 0
    for s in as_word(w, alphabet_size):
        r = r * alphabet_size + int(s)
    return r


def unrank_word(r: int, n: int, alphabet_size: int) -> np.ndarray:
    if not 0 <= r < alphabet_size**n:
        raise InvalidInputError(f"word rank {r} out of range for {alphabet_size}^{n}")
    out = np.zeros(n, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        r, out[i] = divmod(r, alphabet_size)
    return out


def all_words(n: int, alphabet_size: int, limit: int = MAX_WORDS) -> np.ndarray:
    """Every word of length n in rank order, one per row."""
    total = alphabet_size**n
    if total > limit:
        raise SizeError(f"{alphabet_size}^{n} = {total} words exceeds {limit}; reduce n")
    idx = np.unravel_index(np.arange(total), (alphabet_size,) * n)
    return np.stack(idx, axis=1).astype(np.int64)


@functools.lru_cache(maxsize=64)
def _rank_table(n: int, m: int) -> np.ndarray:
    """table[i, r, c]: rank offset of value c at position i with r units left."""
    table = np.zeros((max(m - 1, 1), n + 1, n + 1), dtype=np.int64)
    for i in range(m - 1):
        tail = m - i - 1
        for r in range(n + 1):
            acc = 0
            for c in range(r + 1):
                table[i, r, c] = acc
                acc += num_compositions(r - c, tail)
    table.setflags(write=False)
    return table


def rank_counts(counts: np.ndarray, n: int) -> np.ndarray:
    """Vectorized composition_rank over the last axis of an integer array."""
    counts = np.asarray(counts, dtype=np.int64)
    m = counts.shape[-1]
    if m == 1:
        return np.zeros(counts.shape[:-1], dtype=np.int64)
    table = _rank_table(n, m)
    head = np.zeros(counts.shape[:-1] + (1,), dtype=np.int64)
    rem = n - np.concatenate([head, np.cumsum(counts[..., :-2], axis=-1)], axis=-1)
    rank = np.zeros(counts.shape[:-1], dtype=np.int64)
    for i in range(m - 1):
        rank += table[i, rem[..., i], counts[..., i]]
    return rank

"""Alphabets, sources, distortion measures and per-word distortion.

Symbols are 0-based everywhere in code and on the wire (symbol ``j`` in the
docs' 1..J numbering is ``j - 1`` here). Rates and entropies are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from mini_udc.errors import InvalidInputError

Number = Union[int, float, str, Fraction]
ExactMatrix = Tuple[Tuple[Fraction, ...], ...]

SIMPLEX_TOL = 1e-12
STOCHASTIC_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def exact_value(v: Number) -> Optional[Fraction]:
    """Decimal strings, ints and Fractions parse exactly; floats do not."""
    if isinstance(v, bool):
        raise InvalidInputError(f"boolean is not a number: {v!r}")
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        try:
            return Fraction(v.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise InvalidInputError(f"not a decimal number: {v!r}") from e
    return None


def as_float(v: Number) -> float:
    if isinstance(v, str):
        ex = exact_value(v)
        assert ex is not None
        return float(ex)
    return float(v)


@dataclass(frozen=True)
class Alphabets:
    J: int
    K: int

    def __post_init__(self):
        if self.J < 1 or self.K < 1:
            raise InvalidInputError(f"alphabet sizes must be positive, got J={self.J} K={self.K}")


@dataclass(frozen=True, eq=False)
class SourceDistribution:
    p: np.ndarray
    exact: Optional[Tuple[Fraction, ...]] = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise InvalidInputError("source distribution must be a non-empty vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidInputError(f"source probabilities must be finite and >= 0: {p}")
        if abs(math.fsum(p) - 1.0) > SIMPLEX_TOL:
            raise InvalidInputError(f"source probabilities sum to {math.fsum(p)!r}, not 1")
        object.__setattr__(self, "p", _frozen(p))

    @classmethod
    def from_values(cls, values: Sequence[Number]) -> "SourceDistribution":
        exact = [exact_value(v) for v in values]
        if all(e is not None for e in exact):
            total = sum(exact, Fraction(0))
            if total != 1:
                raise InvalidInputError(f"decimal source probabilities sum to {total}, not 1")
            return cls(np.array([float(e) for e in exact]), tuple(exact))  # type: ignore[arg-type]
        return cls(np.array([as_float(v) for v in values]))

    @property
    def J(self) -> int:
        return int(self.p.size)


@dataclass(frozen=True, eq=False)
class DistortionMeasure:
    """Normalized J x K distortion matrix (every row holds an exact zero)."""

    rho: np.ndarray
    rho_max: float
    offsets: np.ndarray
    exact: Optional[ExactMatrix] = None
    exact_rho_max: Optional[Fraction] = None
    _key: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        rho = _frozen(self.rho)
        if rho.ndim != 2 or rho.size == 0:
            raise InvalidInputError("distortion measure must be a non-empty matrix")
        if self.rho_max <= 0 or not math.isfinite(self.rho_max):
            raise InvalidInputError(f"rho_max must be positive and finite, got {self.rho_max}")
        if np.any(rho < 0) or np.any(rho > self.rho_max):
            raise InvalidInputError(f"entries must lie in [0, rho_max={self.rho_max}]")
        if not np.all(np.any(rho == 0.0, axis=1)):
            raise InvalidInputError("every row of a normalized measure must contain a zero")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "offsets", _frozen(self.offsets))
        object.__setattr__(self, "_key", rho.tobytes() + np.float64(self.rho_max).tobytes())

    @property
    def J(self) -> int:
        return int(self.rho.shape[0])

    @property
    def K(self) -> int:
        return int(self.rho.shape[1])

    @property
    def key(self) -> bytes:
        """Canonical bytes identifying the measure (cache keys)."""
        return self._key

    def __eq__(self, other):
        if not isinstance(other, DistortionMeasure):
            return NotImplemented
        return self._key == other._key

    def __hash__(self):
        return hash(self._key)


def _check_raw(raw) -> list:
    rows = [list(r) for r in raw]
    if not rows or not rows[0]:
        raise InvalidInputError("distortion matrix must be non-empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InvalidInputError("distortion matrix must be rectangular")
    return rows


def normalize_distortion(raw, rho_max: Optional[Number] = None) -> Tuple[DistortionMeasure, np.ndarray]:
    """Subtract each row's minimum so every row contains a zero.

    Returns the normalized measure and the subtracted row minima. ``rho_max``
    defaults to the largest normalized entry (1 when the measure is all zeros).
    Decimal-string input keeps an exact rational copy of the matrix.
    """
    if isinstance(raw, DistortionMeasure):
        if rho_max is None:
            rho_max = raw.exact_rho_max if raw.exact_rho_max is not None else raw.rho_max
        raw = raw.exact if raw.exact is not None else raw.rho.tolist()
    rows = _check_raw(raw)

    exact_rows = [[exact_value(v) for v in r] for r in rows]
    is_exact = all(v is not None for r in exact_rows for v in r)
    exact: Optional[ExactMatrix] = None
    if is_exact:
        if any(v < 0 for r in exact_rows for v in r):  # type: ignore[operator]
            raise InvalidInputError("distortion entries must be nonnegative")
        mins = [min(r) for r in exact_rows]  # type: ignore[type-var]
        exact = tuple(tuple(v - m for v in r) for r, m in zip(exact_rows, mins))  # type: ignore[operator]
        rho = np.array([[float(v) for v in r] for r in exact], dtype=np.float64)
        offsets = np.array([float(m) for m in mins])  # type: ignore[arg-type]
    else:
        arr = np.array([[as_float(v) for v in r] for r in rows], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("distortion entries must be finite")
        if np.any(arr < 0):
            raise InvalidInputError("distortion entries must be nonnegative")
        offsets = arr.min(axis=1)
        rho = arr - offsets[:, None]

    exact_max: Optional[Fraction] = None
    if rho_max is None:
        if exact is not None:
            exact_max = max(max(r) for r in exact)
            if exact_max == 0:
                exact_max = Fraction(1)
            rho_max_f = float(exact_max)
        else:
            rho_max_f = float(rho.max()) if rho.max() > 0 else 1.0
    else:
        exact_max = exact_value(rho_max) if exact is not None else None
        rho_max_f = as_float(rho_max)

    measure = DistortionMeasure(rho, rho_max_f, offsets, exact, exact_max)
    return measure, measure.offsets


def as_word(x, alphabet_size: int) -> np.ndarray:
    w = np.asarray(x, dtype=np.int64)
    if w.ndim != 1:
        raise InvalidInputError("a word must be a 1-D symbol sequence")
    if w.size and (w.min() < 0 or w.max() >= alphabet_size):
        raise InvalidInputError(f"symbols must lie in 0..{alphabet_size - 1}")
    return w


def distortion_n_fold(x, y, rho: DistortionMeasure) -> float:
    """(1/n) sum_i rho(x_i, y_i)."""
    xw = as_word(x, rho.J)
    yw = as_word(y, rho.K)
    if xw.size != yw.size:
        raise InvalidInputError(f"length mismatch: {xw.size} != {yw.size}")
    if xw.size == 0:
        raise InvalidInputError("empty words have no distortion")
    return float(rho.rho[xw, yw].sum() / xw.size)


def check_channel(W, J: int, K: int) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (J, K):
        raise InvalidInputError(f"channel must be {J}x{K}, got {W.shape}")
    if np.any(W < 0) or np.any(np.abs(W.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
        raise InvalidInputError("channel rows must be probability vectors")
    return W


def expected_distortion(p: SourceDistribution, W, rho: DistortionMeasure) -> float:
    """sum_{j,k} p(j) W(k|j) rho(j,k)."""
    W = check_channel(W, rho.J, rho.K)
    return float(np.einsum("j,jk,jk->", p.p, W, rho.rho))


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def kl_divergence(t, p) -> float:
    """D(t||p) in nats with 0 ln(0/q) = 0; +inf when t is not dominated by p."""
    t = np.asarray(t, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    nz = t > 0
    if np.any(p[nz] == 0):
        return math.inf
    return float(np.sum(t[nz] * np.log(t[nz] / p[nz])))


def mutual_information(p, W) -> float:
    p = np.asarray(p, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    q = p @ W
    joint = p[:, None] * W
    nz = joint > 0
    ratio = W[nz] / np.broadcast_to(q, W.shape)[nz]
    return max(0.0, float(np.sum(joint[nz] * np.log(ratio))))


def zero_distortion_word(x, rho: DistortionMeasure) -> np.ndarray:
    """Symbol-wise argmin of each row (smallest index on ties); distortion 0."""
    xw = as_word(x, rho.J)
    return np.argmin(rho.rho, axis=1)[xw]

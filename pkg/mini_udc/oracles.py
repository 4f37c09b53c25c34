"""Exact oracles for the bounds the codecs are measured against.

- d-ball probability P(rho_n(x, Y^n) <= d), Y i.i.d. Q, by convolution
- the margin ln P + n R(t) + (1/2) ln n
- the converse floor on the rate of any d-semifaithful code
- plug-in gap and Shtarkov asymptotics
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Union

import numpy as np
from scipy.special import gammaln

from mini_udc.codec.nml_codec import shtarkov_sum
from mini_udc.core.distortion_space import exact_scaled
from mini_udc.core.method_of_types import (
    NType,
    enumerate_types,
    nearest_type,
    num_compositions,
    type_class_log_size,
    type_probabilities,
)
from mini_udc.core.model import DistortionMeasure, Number, SourceDistribution, as_word, entropy, kl_divergence
from mini_udc.core.rd_solver import plug_in_expectation, solve_rd
from mini_udc.errors import InvalidInputError, PreconditionError, SizeError

logger = logging.getLogger(__name__)

BALL_MAX_N = 64
DENSE_SPAN = 2_000_000
MERGE_TOL = 1e-12
SD_MARGIN = 1e-3


# ==== d-ball probability ====

@dataclass(frozen=True)
class BallProbability:
    log_p: float
    exact: bool

    @property
    def value(self) -> float:
        return math.exp(self.log_p)


def _log(mass: float) -> float:
    return math.log(mass) if mass > 0 else -math.inf


def _dense(ints: np.ndarray, xs: np.ndarray, Q: np.ndarray, bound: int) -> float:
    pmf = np.ones(1)
    for j in xs:
        kernel = np.zeros(int(ints[j].max()) + 1)
        np.add.at(kernel, ints[j], Q)
        pmf = np.convolve(pmf, kernel)
    return float(pmf[: bound + 1].sum()) if bound >= 0 else 0.0


def _sparse(keys: np.ndarray, xs: np.ndarray, Q: np.ndarray) -> Dict[int, float]:
    states: Dict[int, float] = {0: 1.0}
    for j in xs:
        nxt: Dict[int, float] = {}
        for s, m in states.items():
            for k, q in enumerate(Q):
                if q > 0:
                    key = s + int(keys[j, k])
                    nxt[key] = nxt.get(key, 0.0) + m * q
        states = nxt
    return states


def ball_probability_exact(x: Union[Sequence[int], np.ndarray, NType], Q, rho: DistortionMeasure, d: Number) -> BallProbability:
    """P(sum_i rho(x_i, Y_i) <= n d) for Y i.i.d. Q, exact on the distortion support.

    Only the type of x matters; positions are processed in sorted order so
    two words of one type give identical results. Decimal inputs are scaled
    to integers; float inputs merge sums within 1e-12 and come back
    flagged inexact.
    """
    if isinstance(x, NType):
        xs = np.repeat(np.arange(x.m), x.counts)
    else:
        xs = np.sort(as_word(x, rho.J))
    n = int(xs.size)
    if n == 0:
        raise InvalidInputError("empty word")
    if n > BALL_MAX_N:
        raise SizeError(f"n={n} exceeds the ball DP limit {BALL_MAX_N}")
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (rho.K,) or np.any(Q < 0) or abs(Q.sum() - 1.0) > 1e-9:
        raise InvalidInputError("Q must be a probability vector over the reconstruction alphabet")

    scaled = exact_scaled(rho, d)
    if scaled is not None:
        ints, level = scaled
        bound = level * n
        span = int(max(ints[j].max() for j in xs)) * n
        if span <= DENSE_SPAN:
            mass = _dense(ints.astype(np.int64), xs, Q, bound)
        else:
            states = _sparse(ints, xs, Q)
            mass = math.fsum(m for s, m in states.items() if s <= bound)
        return BallProbability(_log(min(mass, 1.0)), True)

    unit = MERGE_TOL * rho.rho_max
    keys = np.rint(rho.rho / unit).astype(np.int64)
    states = _sparse(keys, xs, Q)
    bound = float(d) * n / unit
    mass = math.fsum(m for s, m in states.items() if s <= bound + MERGE_TOL * max(bound, 1.0))
    return BallProbability(_log(min(mass, 1.0)), False)


# ==== margins and floors ====

@dataclass(frozen=True)
class MarginPoint:
    n: int
    t: NType
    log_p: float
    rate: float
    c_n: float


def check_sd_margin(p: SourceDistribution, d: float, rho: DistortionMeasure, margin: float = SD_MARGIN) -> None:
    sol = solve_rd(p, d, rho)
    if p.p.min() < margin:
        raise PreconditionError(f"source has a symbol with probability below {margin}")
    if sol.Q_star.min() < margin:
        raise PreconditionError(f"optimal output distribution has mass below {margin}")
    if d > sol.d_max - margin:
        raise PreconditionError(f"d={d} is within {margin} of d_max={sol.d_max}")


def lemma3_margin(p: SourceDistribution, rho: DistortionMeasure, d: Number, n_grid: Sequence[int]) -> List[MarginPoint]:
    """c_n = ln P(ball around a type-t word under Q*(t)) + n R(t, d, rho) + (1/2) ln n, t nearest to p."""
    check_sd_margin(p, float(d), rho)
    out = []
    for n in n_grid:
        t = nearest_type(p, n)
        if min(t.counts) == 0:
            raise PreconditionError(f"nearest {n}-type {t.counts} has an empty symbol")
        sol = solve_rd(t.freqs, float(d), rho)
        ball = ball_probability_exact(t, sol.Q_star, rho, d)
        c_n = ball.log_p + n * sol.rate + 0.5 * math.log(n)
        out.append(MarginPoint(n, t, ball.log_p, sol.rate, c_n))
        logger.debug("n=%d log_p=%.6f R=%.6f c_n=%.6f", n, ball.log_p, sol.rate, c_n)
    return out


def converse_coefficient(J: int, K: int) -> int:
    return J * K + J - 2


def converse_floor(p: SourceDistribution, d: Number, rho: DistortionMeasure, n: int, tight: bool = False) -> float:
    """E_p[R(T, d, rho)] - (JK + J - 2)(ln n + 1) / n.

    ``tight=True`` uses ln(n + 1), the form the type-counting argument yields
    before simplification; it is the lower of the two floors.
    """
    c = converse_coefficient(rho.J, rho.K)
    log_term = math.log(n + 1) if tight else math.log(n)
    return plug_in_expectation(p, float(d), rho, n) - c * (log_term + 1.0) / n


@dataclass(frozen=True)
class PlugInGap:
    n: int
    plug_in: float
    rate: float

    @property
    def gap(self) -> float:
        return self.plug_in - self.rate

    @property
    def scaled(self) -> float:
        return self.gap * self.n / math.log(self.n) if self.n > 1 else math.nan


def plug_in_gap(p: SourceDistribution, d: Number, rho: DistortionMeasure, n: int) -> PlugInGap:
    return PlugInGap(n, plug_in_expectation(p, float(d), rho, n), solve_rd(p, float(d), rho).rate)


def shtarkov_constant(K: int) -> float:
    """ln(Gamma(1/2)^K / ((2 pi)^((K-1)/2) Gamma(K/2)))."""
    return float(K * gammaln(0.5) - gammaln(K / 2) - (K - 1) / 2 * math.log(2 * math.pi))


def shtarkov_asymptotic_gap(n: int, K: int) -> float:
    if n < 2:
        raise InvalidInputError(f"asymptotic gap needs n >= 2, got {n}")
    return shtarkov_sum(n, K).log_value - ((K - 1) / 2 * math.log(n) + shtarkov_constant(K))


# ==== type bounds ====

@dataclass(frozen=True)
class TypeBoundsReport:
    n: int
    type_count: int
    count_bound: int
    total_probability: float
    upper_violations: int
    lower_violations: int
    size_violations: int

    @property
    def ok(self) -> bool:
        return (
            self.type_count <= self.count_bound
            and abs(self.total_probability - 1.0) <= 1e-10
            and self.upper_violations == self.lower_violations == self.size_violations == 0
        )


def type_bounds_report(p: SourceDistribution, n: int) -> TypeBoundsReport:
    """Checks the type-count, type-probability and class-size bounds at every n-type."""
    J = p.J
    types = enumerate_types(n, J)
    probs = type_probabilities(p, n)
    log_size = type_class_log_size(types.counts)
    upper = lower = size = 0
    slack = 1e-12
    for i, t in enumerate(types):
        D = kl_divergence(t.freqs, p.p)
        H = entropy(t.freqs)
        if probs[i] > math.exp(-n * D) * (1 + slack) + 1e-300:
            upper += 1
        if math.isfinite(D) and probs[i] < math.exp(-n * D) / (n + 1) ** (J - 1) * (1 - slack):
            lower += 1
        if not (n * H - (J - 1) * math.log(n + 1) - 1e-9 <= log_size[i] <= n * H + 1e-9):
            size += 1
    return TypeBoundsReport(n, len(types), (n + 1) ** (J - 1), float(probs.sum()), upper, lower, size)


def type_count_bound_holds(n: int, m: int) -> bool:
    return num_compositions(n, m) <= (n + 1) ** (m - 1)

"""Rate-distortion function R(p, d, rho) by Blahut-Arimoto plus bisection on lambda.

The inner loop is the classic alternating update at a fixed slope lambda;
the outer loop bisects lambda until the expected distortion of the optimal
channel sits in [d - tol_d, d]. All rates are in nats.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from mini_udc.core.method_of_types import enumerate_types, num_compositions, type_probabilities
from mini_udc.core.model import DistortionMeasure, SourceDistribution, mutual_information, normalize_distortion
from mini_udc.errors import ConvergenceError, InvalidInputError, SizeError

logger = logging.getLogger(__name__)

RATE_TOL = 1e-9
DIST_TOL = 1e-9
BA_MAX_ITER = 10_000
BA_STEP_TOL = 1e-12
# Q entries below this fraction of max Q are dropped from the support
PRUNE_FLOOR = 1e-12
KKT_TOL = 1e-6
BISECT_MAX_ITER = 64
# BA runs that exhaust the cap are accepted when their bound gap is below this
ACCEPT_GAP = 1e-4
PLUG_IN_MAX_TYPES = 1_000_000
UNIQUE_RESTARTS = 8
UNIQUE_TOL = 1e-6
SUPPORT_FLOOR = 1e-9

PmfLike = Union[SourceDistribution, Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class RdSolution:
    rate: float
    W_star: np.ndarray
    Q_star: np.ndarray
    lambda_star: float
    d_max: float
    iterations: int
    residual: float
    distortion: float
    mixed: bool = False


@dataclass(frozen=True)
class SdMembership:
    full_support_p: bool
    q_star_full_support: bool
    d_below_dmax: bool
    q_star_unique_heuristic: bool

    @property
    def member(self) -> bool:
        return self.full_support_p and self.q_star_full_support and self.d_below_dmax and self.q_star_unique_heuristic


@dataclass(frozen=True)
class BaResult:
    Q: np.ndarray
    W: np.ndarray
    distortion: float
    rate: float
    lower: float
    iterations: int
    gap: float


def _pmf(p: PmfLike) -> np.ndarray:
    if isinstance(p, SourceDistribution):
        return p.p
    return SourceDistribution(np.asarray(p, dtype=np.float64)).p


def d_max_of(p: PmfLike, rho: DistortionMeasure) -> float:
    """min_k sum_j p(j) rho(j, k)."""
    pv = _pmf(p)
    if pv.size != rho.J:
        raise InvalidInputError(f"source over {pv.size} symbols vs measure with J={rho.J}")
    return float((pv @ rho.rho).min())


# ==== fixed-slope Blahut-Arimoto ====

def blahut_arimoto(
    p: np.ndarray,
    rho: np.ndarray,
    lam: float,
    tol: float = RATE_TOL,
    max_iter: int = BA_MAX_ITER,
    Q0: Optional[np.ndarray] = None,
    accept_gap: float = ACCEPT_GAP,
) -> BaResult:
    """BA at slope -lam over the support of p (p > 0 everywhere here).

    Stops once no supported entry of Q moves by more than BA_STEP_TOL, or once
    the rate bounds agree within tol and Q has settled to KKT_TOL. Entries that
    shrink below PRUNE_FLOOR relative to the largest one leave the support.
    """
    K = rho.shape[1]
    A = np.exp(-lam * rho)
    Q = np.full(K, 1.0 / K) if Q0 is None else np.asarray(Q0, dtype=np.float64)
    gap = math.inf
    it = 0
    while it < max_iter:
        it += 1
        Z = np.maximum(A @ Q, np.finfo(float).tiny)
        c = (p / Z) @ A
        with np.errstate(divide="ignore"):
            logc = np.log(c)
        upper_c = float(logc.max())
        Q_new = Q * c
        Q_new /= Q_new.sum()
        # only shrinking entries are pruned, so the optimum keeps its support
        prune = (Q_new > 0) & (Q_new < PRUNE_FLOOR * Q_new.max()) & (logc < upper_c)
        if prune.any():
            Q_new[prune] = 0.0
            Q_new /= Q_new.sum()
        support = (Q_new > 0) | (Q > 0)
        step = float(np.abs(Q_new[support] - Q[support]).max())
        Q = Q_new
        live = Q > 0
        gap = upper_c - float(np.sum(Q[live] * logc[live]))
        if step < BA_STEP_TOL or (gap < tol and step < KKT_TOL):
            break
    else:
        if gap > accept_gap:
            raise ConvergenceError(
                f"Blahut-Arimoto did not converge in {max_iter} iterations at lambda={lam:.6g}", gap
            )
        logger.debug("BA cap reached at lambda=%.6g with gap %.3g", lam, gap)

    Z = np.maximum(A @ Q, np.finfo(float).tiny)
    W = (A * Q) / Z[:, None]
    D = float(np.sum(p[:, None] * W * rho))
    rate = mutual_information(p, W)
    c = (p / Z) @ A
    with np.errstate(divide="ignore"):
        lower = -lam * D - float(np.sum(p * np.log(Z))) - float(np.log(c).max())
    return BaResult(Q, W, D, rate, max(0.0, lower), it, max(0.0, gap))


def lagrangian_bounds(p: PmfLike, rho: DistortionMeasure, lam: float, tol: float = RATE_TOL) -> Tuple[float, float, float]:
    """(lower, upper, distortion): BA rate bounds at slope -lam on the p > 0 support."""
    pv = _pmf(p)
    mask = pv > 0
    res = blahut_arimoto(pv[mask], rho.rho[mask], lam, tol)
    return res.lower, res.rate, res.distortion


# ==== solver ====

def _embed(pv: np.ndarray, mask: np.ndarray, rho: DistortionMeasure, W_sub: np.ndarray) -> np.ndarray:
    W = np.zeros((rho.J, rho.K))
    W[mask] = W_sub
    for j in np.flatnonzero(~mask):
        W[j, int(np.argmin(rho.rho[j]))] = 1.0
    return W


def _solve(pv: np.ndarray, d: float, rho: DistortionMeasure, tol: float, max_iter: int, accept_gap: float) -> RdSolution:
    d_max = float((pv @ rho.rho).min())
    if d >= d_max:
        col = int(np.argmin(pv @ rho.rho))
        W = np.zeros((rho.J, rho.K))
        W[:, col] = 1.0
        Q = np.zeros(rho.K)
        Q[col] = 1.0
        return RdSolution(0.0, W, Q, 0.0, d_max, 0, 0.0, float(pv @ rho.rho[:, col]))

    mask = pv > 0
    ps, rs = pv[mask], rho.rho[mask]
    tol_d = DIST_TOL
    iterations = 0

    lo, hi = 0.0, 2.0 * math.log(max(rho.K, 2)) / d + 1.0
    hi_res = blahut_arimoto(ps, rs, hi, tol, max_iter, accept_gap=accept_gap)
    iterations += hi_res.iterations
    grow = 0
    while hi_res.distortion > d:
        grow += 1
        if grow > 16:
            raise ConvergenceError(f"no slope reaches distortion {d}", hi_res.distortion - d)
        lo, hi = hi, hi * 2.0
        hi_res = blahut_arimoto(ps, rs, hi, tol, max_iter, accept_gap=accept_gap)
        iterations += hi_res.iterations
    lo_res: Optional[BaResult] = None

    for _ in range(BISECT_MAX_ITER):
        if d - hi_res.distortion <= tol_d or hi - lo <= 1e-15 * hi:
            break
        mid = 0.5 * (lo + hi)
        res = blahut_arimoto(ps, rs, mid, tol, max_iter, accept_gap=accept_gap)
        iterations += res.iterations
        if res.distortion > d:
            lo, lo_res = mid, res
        else:
            hi, hi_res = mid, res

    W_sub, Q_res, D = hi_res.W, hi_res.Q, hi_res.distortion
    mixed = False
    if d - D > tol_d and lo_res is not None:
        # distortion jumps across the slope: straddle it with a mixture
        theta = (d - D) / (lo_res.distortion - D)
        W_sub = theta * lo_res.W + (1.0 - theta) * hi_res.W
        D = float(np.sum(ps[:, None] * W_sub * rs))
        if D > d:
            W_sub, D = hi_res.W, hi_res.distortion
        else:
            mixed = True
        logger.debug("mixed slopes %.6g/%.6g with theta=%.6g", lo, hi, theta)

    W = _embed(pv, mask, rho, W_sub)
    Q = pv @ W
    rate = mutual_information(pv, W)
    rate = min(rate, math.log(rho.K))
    if not mixed:
        kkt = _gibbs_deviation(rs, hi, Q, W_sub)
        if kkt > KKT_TOL:
            logger.warning("KKT residual %.3g above %.0e at d=%.6g", kkt, KKT_TOL, d)
    logger.debug("R(d=%.6g)=%.9g lambda=%.6g after %d BA iterations", d, rate, hi, iterations)
    return RdSolution(rate, W, Q, hi, d_max, iterations, hi_res.gap, D, mixed)


_cache: Dict[tuple, RdSolution] = {}
_cache_lock = threading.Lock()


def clear_cache() -> None:
    with _cache_lock:
        _cache.clear()


def cache_size() -> int:
    with _cache_lock:
        return len(_cache)


def solve_rd(
    p: PmfLike,
    d: float,
    rho: DistortionMeasure,
    tol: float = RATE_TOL,
    max_iter: int = BA_MAX_ITER,
    accept_gap: float = ACCEPT_GAP,
) -> RdSolution:
    """R(p, d, rho) with the optimal channel and output distribution.

    Solutions are memoized on (p rounded to 1e-12, d, rho, tol).
    """
    pv = _pmf(p)
    d = float(d)
    if pv.size != rho.J:
        raise InvalidInputError(f"source over {pv.size} symbols vs measure with J={rho.J}")
    if not d > 0 or not math.isfinite(d):
        raise InvalidInputError(f"distortion level must be positive, got {d}")
    if not tol > 0:
        raise InvalidInputError(f"tolerance must be positive, got {tol}")

    key = (np.round(pv, 12).tobytes(), d, rho.key, tol, max_iter)
    with _cache_lock:
        hit = _cache.get(key)
    if hit is not None:
        return hit
    sol = _solve(pv, d, rho, tol, max_iter, accept_gap)
    with _cache_lock:
        _cache.setdefault(key, sol)
    return sol


def rd_curve(p: PmfLike, rho: DistortionMeasure, d_grid: Sequence[float], tol: float = RATE_TOL) -> List[RdSolution]:
    return [solve_rd(p, d, rho, tol) for d in d_grid]


def kkt_residual(p: PmfLike, rho: DistortionMeasure, sol: RdSolution) -> float:
    """Largest deviation of W* from the Gibbs form Q* exp(-lambda rho) / Z on p > 0 rows."""
    pv = _pmf(p)
    mask = pv > 0
    return _gibbs_deviation(rho.rho[mask], sol.lambda_star, sol.Q_star, sol.W_star[mask])


def _gibbs_deviation(rs: np.ndarray, lam: float, Q: np.ndarray, W: np.ndarray) -> float:
    A = Q * np.exp(-lam * rs)
    gibbs = A / np.maximum(A.sum(axis=1, keepdims=True), np.finfo(float).tiny)
    return float(np.abs(W - gibbs).max())


# ==== plug-in estimator ====

def plug_in_expectation(p: PmfLike, d: float, rho: DistortionMeasure, n: int, tol: float = RATE_TOL) -> float:
    """E_p[R(T, d, rho)] over the exact distribution of the n-type T."""
    src = p if isinstance(p, SourceDistribution) else SourceDistribution(np.asarray(p, dtype=np.float64))
    count = num_compositions(n, src.J)
    if count > PLUG_IN_MAX_TYPES:
        raise SizeError(f"{count} types for n={n} exceeds {PLUG_IN_MAX_TYPES}; reduce n")
    types = enumerate_types(n, src.J)
    probs = type_probabilities(src, n)
    total = 0.0
    for i in np.flatnonzero(probs > 0):
        t = types.freqs[i]
        total += probs[i] * solve_rd(t / t.sum(), d, rho, tol).rate
    return float(total)


# ==== S_d membership ====

def sd_membership(p: PmfLike, d: float, rho: DistortionMeasure, sol: RdSolution, seed: int = 0) -> SdMembership:
    """Flags of the regular set S_d; uniqueness is a restart probe, not a proof."""
    pv = _pmf(p)
    full_p = bool(np.all(pv > 0))
    full_q = bool(np.all(sol.Q_star > SUPPORT_FLOOR))
    below = float(d) < sol.d_max
    unique = False
    if below:
        unique = q_star_unique(pv, rho, sol.lambda_star, seed=seed)
    return SdMembership(full_p, full_q, below, unique)


def q_star_unique(pv: np.ndarray, rho: DistortionMeasure, lam: float, seed: int = 0, restarts: int = UNIQUE_RESTARTS) -> bool:
    mask = pv > 0
    ps, rs = pv[mask], rho.rho[mask]
    ref = blahut_arimoto(ps, rs, lam, accept_gap=math.inf).Q
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        Q0 = rng.dirichlet(np.ones(rho.K))
        Q = blahut_arimoto(ps, rs, lam, Q0=Q0, accept_gap=math.inf).Q
        if np.abs(Q - ref).max() > UNIQUE_TOL:
            return False
    return True


@dataclass(frozen=True)
class ContinuityProbe:
    frobenius: float
    unique: bool
    within: bool


def continuity_probe(
    p: PmfLike, d: float, rho: DistortionMeasure, delta: float = 1e-4, bound: float = 1e-2, seed: int = 0
) -> ContinuityProbe:
    """Perturb every coordinate of (p, d, rho) by delta and measure how far W* moves."""
    pv = _pmf(p)
    base = solve_rd(pv, d, rho)
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=pv.size)
    p2 = np.clip(pv + delta * signs, 0.0, None)
    p2 /= p2.sum()
    bumped = np.where(rho.rho > 0, rho.rho + delta, 0.0)
    rho2, _ = normalize_distortion(bumped, rho_max=max(rho.rho_max, float(bumped.max())))
    moved = solve_rd(p2, float(d) + delta, rho2)
    frob = float(np.linalg.norm(moved.W_star - base.W_star))
    unique = float(d) < base.d_max and q_star_unique(pv, rho, base.lambda_star, seed=seed)
    return ContinuityProbe(frob, unique, frob <= bound)

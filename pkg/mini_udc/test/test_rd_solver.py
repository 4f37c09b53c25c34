"""
Tests for the rate-distortion solver and its diagnostics.
"""

import math

import numpy as np
import pytest

from mini_udc.core.model import SourceDistribution, entropy, expected_distortion, normalize_distortion
from mini_udc.core.rd_solver import (
    blahut_arimoto,
    cache_size,
    clear_cache,
    continuity_probe,
    d_max_of,
    kkt_residual,
    lagrangian_bounds,
    plug_in_expectation,
    rd_curve,
    sd_membership,
    solve_rd,
)
from mini_udc.errors import InvalidInputError, SizeError

HAMMING, _ = normalize_distortion([["0", "1"], ["1", "0"]])
UNIFORM = SourceDistribution.from_values(["0.5", "0.5"])


@pytest.mark.unit
@pytest.mark.parametrize("d", [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45])
def test_binary_hamming_closed_form(d):
    """R(d) = ln 2 - h(d) for the uniform binary source."""
    sol = solve_rd(UNIFORM, d, HAMMING)
    assert abs(sol.rate - (math.log(2) - entropy([d, 1 - d]))) <= 1e-6, f"rate off at d={d}"
    assert kkt_residual(UNIFORM, HAMMING, sol) <= 1e-6, "W* is not of Gibbs form"
    assert sol.distortion <= d + 1e-9
    assert np.allclose(sol.Q_star, UNIFORM.p @ sol.W_star, atol=1e-9)


@pytest.mark.unit
def test_reference_rate():
    assert solve_rd(UNIFORM, 0.1, HAMMING).rate == pytest.approx(0.368064, abs=1e-6)


@pytest.mark.unit
def test_skewed_binary_source():
    p = SourceDistribution.from_values(["0.3", "0.7"])
    sol = solve_rd(p, 0.1, HAMMING)
    assert sol.rate == pytest.approx(entropy([0.3, 0.7]) - entropy([0.1, 0.9]), abs=1e-6)
    assert expected_distortion(p, sol.W_star, HAMMING) <= 0.1 + 1e-9


@pytest.mark.unit
@pytest.mark.parametrize("d", [0.5, 0.75, 1.0])
def test_rate_zero_beyond_dmax(d):
    sol = solve_rd(UNIFORM, d, HAMMING)
    assert sol.rate == 0.0, "R must vanish for d >= d_max"
    assert sol.d_max == 0.5 == d_max_of(UNIFORM, HAMMING)


@pytest.mark.unit
def test_zero_probability_row_gets_point_mass():
    p = SourceDistribution.from_values(["0", "0.5", "0.5"])
    rho, _ = normalize_distortion([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
    sol = solve_rd(p, 0.1, rho)
    assert sol.W_star[0].tolist() == [1.0, 0.0, 0.0], "unused rows map to their zero"
    assert np.allclose(sol.W_star.sum(axis=1), 1.0)


@pytest.mark.unit
def test_curve_is_monotone_and_convex():
    grid = np.linspace(0.02, 0.48, 24)
    rates = [s.rate for s in rd_curve(UNIFORM, HAMMING, grid)]
    assert all(b <= a + 1e-9 for a, b in zip(rates, rates[1:])), "R(d) must be nonincreasing"
    for a, b, c in zip(rates, rates[1:], rates[2:]):
        assert b <= (a + c) / 2 + 1e-7, "R(d) must be convex"


@pytest.mark.unit
def test_rate_bounded_by_log_k():
    p = SourceDistribution.from_values(["0.2", "0.3", "0.5"])
    rho, _ = normalize_distortion([[0, 1, 2], [2, 0, 1], [1, 2, 0]])
    for d in (0.01, 0.2, 0.5):
        sol = solve_rd(p, d, rho)
        assert 0.0 <= sol.rate <= math.log(3) + 1e-12
        assert sol.lambda_star <= math.log(3) / d + 1e-6 or sol.rate == 0.0


@pytest.mark.unit
def test_lagrangian_bounds_sandwich_rate():
    lam = math.log(9)  # slope of d = 0.1 on the binary Hamming curve
    lower, upper, D = lagrangian_bounds(UNIFORM, HAMMING, lam)
    assert D == pytest.approx(0.1, abs=1e-9)
    assert lower <= upper + 1e-12
    assert upper == pytest.approx(math.log(2) - entropy([0.1, 0.9]), abs=1e-8)


@pytest.mark.unit
def test_input_validation():
    with pytest.raises(InvalidInputError, match="positive"):
        solve_rd(UNIFORM, 0.0, HAMMING)
    with pytest.raises(InvalidInputError, match="symbols"):
        solve_rd([0.2, 0.3, 0.5], 0.1, HAMMING)


@pytest.mark.unit
def test_solutions_are_memoized():
    clear_cache()
    a = solve_rd(UNIFORM, 0.2, HAMMING)
    size = cache_size()
    b = solve_rd(SourceDistribution.from_values(["0.5", "0.5"]), 0.2, HAMMING)
    assert a is b and cache_size() == size == 1


@pytest.mark.unit
def test_plug_in_expectation():
    """E[R(T)] at n=2: types (0,2), (1,1), (2,0) weigh 1/4, 1/2, 1/4."""
    expected = 0.5 * solve_rd([0.5, 0.5], 0.1, HAMMING).rate
    assert plug_in_expectation(UNIFORM, 0.1, HAMMING, 2) == pytest.approx(expected, abs=1e-9)
    assert plug_in_expectation(UNIFORM, 0.1, HAMMING, 32) <= solve_rd(UNIFORM, 0.1, HAMMING).rate + 1e-9


@pytest.mark.unit
def test_plug_in_guard():
    p = SourceDistribution(np.full(6, 1 / 6))
    rho, _ = normalize_distortion(1 - np.eye(6))
    with pytest.raises(SizeError):
        plug_in_expectation(p, 0.1, rho, 200)


@pytest.mark.unit
def test_sd_membership_flags():
    sol = solve_rd(UNIFORM, 0.1, HAMMING)
    flags = sd_membership(UNIFORM, 0.1, HAMMING, sol)
    assert flags.member, f"uniform binary Hamming should be regular: {flags}"
    skewed = SourceDistribution.from_values(["1", "0"])
    flags = sd_membership(skewed, 0.1, HAMMING, solve_rd(skewed, 0.1, HAMMING))
    assert not flags.full_support_p and not flags.member


@pytest.mark.unit
def test_continuity_probe_small_move():
    probe = continuity_probe(UNIFORM, 0.1, HAMMING)
    assert probe.unique and probe.within, f"W* moved too far: {probe.frobenius}"


# ==== vanishing reproduction symbols ====

SKEWED_RHO, _ = normalize_distortion([[0, 0.51, 0.193], [0.741, 0, 0.06]])
SKEWED_P = SourceDistribution(np.array([0.1144, 0.8856]))


@pytest.mark.unit
def test_solver_converges_when_q_entries_vanish():
    """An output symbol the optimum abandons must not stall the BA loop."""
    clear_cache()
    sol = solve_rd(SKEWED_P, 0.04054, SKEWED_RHO)
    assert sol.distortion <= 0.04054 + 1e-9
    assert kkt_residual(SKEWED_P, SKEWED_RHO, sol) <= 1e-6, "W* is not of Gibbs form"
    assert np.allclose(sol.W_star.sum(axis=1), 1.0)
    assert 0.0 < sol.rate <= entropy(SKEWED_P.p)


@pytest.mark.unit
def test_fixed_slope_iteration_settles_on_skewed_measure():
    lam = 40.0
    res = blahut_arimoto(SKEWED_P.p, SKEWED_RHO.rho, lam)
    assert res.gap <= 1e-4
    assert np.all(res.Q >= 0) and res.Q.sum() == pytest.approx(1.0)
    lower, upper, _ = lagrangian_bounds(SKEWED_P, SKEWED_RHO, lam)
    assert lower <= upper + 1e-9

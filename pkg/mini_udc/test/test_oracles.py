"""
Tests for the exact ball-probability oracle and the bound helpers.
"""

import math

import numpy as np
import pytest

from mini_udc.core.method_of_types import NType
from mini_udc.core.model import SourceDistribution, normalize_distortion
from mini_udc.core.rd_solver import plug_in_expectation, solve_rd
from mini_udc.errors import InvalidInputError, PreconditionError, SizeError
from mini_udc.oracles import (
    ball_probability_exact,
    check_sd_margin,
    converse_coefficient,
    converse_floor,
    lemma3_margin,
    plug_in_gap,
    shtarkov_asymptotic_gap,
    shtarkov_constant,
    type_bounds_report,
    type_count_bound_holds,
)

HAMMING, _ = normalize_distortion([["0", "1"], ["1", "0"]])
UNIFORM = SourceDistribution.from_values(["0.5", "0.5"])


# ==== ball probability ====


@pytest.mark.unit
def test_ball_probability_reference():
    """At most one mismatch in four fair flips: 5/16."""
    ball = ball_probability_exact([0, 0, 1, 1], [0.5, 0.5], HAMMING, "0.25")
    assert ball.exact
    assert ball.value == pytest.approx(5 / 16, rel=1e-12)


@pytest.mark.unit
def test_ball_probability_depends_on_type_only():
    rho, _ = normalize_distortion([["0", "0.4", "1"], ["0.7", "0", "0.2"]])
    Q = [0.2, 0.5, 0.3]
    a = ball_probability_exact([0, 1, 1, 0, 1], Q, rho, "0.3")
    b = ball_probability_exact([1, 1, 1, 0, 0], Q, rho, "0.3")
    c = ball_probability_exact(NType.of((2, 3)), Q, rho, "0.3")
    assert a == b == c


@pytest.mark.unit
def test_ball_probability_float_mode_agrees():
    floats, _ = normalize_distortion([[0, 0.4, 1], [0.7, 0, 0.2]])
    exact, _ = normalize_distortion([["0", "0.4", "1"], ["0.7", "0", "0.2"]])
    x = [0, 1, 1, 0, 1, 0]
    approx = ball_probability_exact(x, [0.2, 0.5, 0.3], floats, 0.3)
    ref = ball_probability_exact(x, [0.2, 0.5, 0.3], exact, "0.3")
    assert not approx.exact and ref.exact
    assert approx.value == pytest.approx(ref.value, rel=1e-12)


@pytest.mark.unit
def test_ball_probability_brute_force():
    rho, _ = normalize_distortion([["0", "0.5"], ["0.25", "0"]])
    Q = np.array([0.3, 0.7])
    x = np.array([0, 1, 1])
    total = 0.0
    for y in np.ndindex(2, 2, 2):
        if rho.rho[x, list(y)].mean() <= 0.25 + 1e-15:
            total += float(np.prod(Q[list(y)]))
    assert ball_probability_exact(x, Q, rho, "0.25").value == pytest.approx(total, rel=1e-12)


@pytest.mark.unit
def test_ball_probability_validation():
    with pytest.raises(SizeError):
        ball_probability_exact(np.zeros(65, dtype=int), [0.5, 0.5], HAMMING, "0.1")
    with pytest.raises(InvalidInputError, match="probability vector"):
        ball_probability_exact([0, 1], [0.5, 0.6], HAMMING, "0.1")
    assert ball_probability_exact([0, 1], [1.0, 0.0], HAMMING, "0.1").log_p == -math.inf


# ==== margins ====


@pytest.mark.unit
def test_lemma3_margin_stays_bounded():
    points = lemma3_margin(UNIFORM, HAMMING, "0.1", [8, 16, 32, 64])
    c = [pt.c_n for pt in points]
    assert min(c) >= -10, f"margin drifts down: {c}"
    assert abs(c[-1] - c[-2]) <= 1
    assert points[0].t.counts == (4, 4)


@pytest.mark.unit
def test_sd_margin_guard():
    skewed = SourceDistribution.from_values(["0.9995", "0.0005"])
    with pytest.raises(PreconditionError, match="probability below"):
        check_sd_margin(skewed, 0.1, HAMMING)
    with pytest.raises(PreconditionError, match="d_max"):
        check_sd_margin(UNIFORM, 0.4995, HAMMING)


# ==== floors and gaps ====


@pytest.mark.unit
def test_converse_floor_formula():
    assert converse_coefficient(2, 2) == 4
    n = 16
    expected = plug_in_expectation(UNIFORM, 0.1, HAMMING, n) - 4 * (math.log(n) + 1) / n
    assert converse_floor(UNIFORM, "0.1", HAMMING, n) == pytest.approx(expected)
    assert converse_floor(UNIFORM, "0.1", HAMMING, n, tight=True) < converse_floor(UNIFORM, "0.1", HAMMING, n)


@pytest.mark.unit
def test_plug_in_gap_trend():
    """For the fair coin the plug-in sits below R, and |g_n| n / ln n shrinks."""
    gaps = [plug_in_gap(UNIFORM, "0.1", HAMMING, n) for n in (8, 16, 32, 64)]
    assert all(g.gap <= 1e-12 for g in gaps)
    scaled = [abs(g.scaled) for g in gaps]
    assert all(b <= a + 1e-9 for a, b in zip(scaled, scaled[1:])), f"not shrinking: {scaled}"
    assert gaps[0].rate == pytest.approx(solve_rd(UNIFORM, 0.1, HAMMING).rate)


@pytest.mark.unit
def test_shtarkov_asymptotics():
    assert shtarkov_constant(2) == pytest.approx(0.5 * math.log(math.pi / 2))
    assert abs(shtarkov_asymptotic_gap(4096, 2)) <= 0.02
    with pytest.raises(InvalidInputError):
        shtarkov_asymptotic_gap(1, 2)


# ==== type bounds ====


@pytest.mark.unit
@pytest.mark.parametrize("n", [1, 5, 12, 16])
def test_type_bounds_report(n):
    p = SourceDistribution.from_values(["0.2", "0.5", "0.3"])
    report = type_bounds_report(p, n)
    assert report.ok, f"bound violations at n={n}: {report}"
    assert report.type_count == math.comb(n + 2, 2)
    assert all(type_count_bound_holds(k, 3) for k in range(1, 30))

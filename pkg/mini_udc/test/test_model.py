"""
Tests for sources, distortion measures and the information helpers.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from mini_udc.core.model import (
    Alphabets,
    SourceDistribution,
    distortion_n_fold,
    entropy,
    expected_distortion,
    kl_divergence,
    mutual_information,
    normalize_distortion,
    zero_distortion_word,
)
from mini_udc.errors import InvalidInputError


# ==== sources ====


@pytest.mark.unit
def test_source_from_decimal_strings_is_exact():
    p = SourceDistribution.from_values(["0.3", "0.7"])
    assert p.exact == (Fraction(3, 10), Fraction(7, 10)), "decimal strings should parse exactly"
    assert p.J == 2
    assert np.allclose(p.p, [0.3, 0.7])


@pytest.mark.unit
@pytest.mark.parametrize("values", [["0.5", "0.6"], [-0.1, 1.1], [0.2, 0.2]])
def test_source_off_simplex_rejected(values):
    with pytest.raises(InvalidInputError):
        SourceDistribution.from_values(values)


@pytest.mark.unit
def test_alphabets_must_be_positive():
    with pytest.raises(InvalidInputError, match="positive"):
        Alphabets(0, 2)


# ==== normalization ====


@pytest.mark.unit
def test_normalize_subtracts_row_minima():
    rho, offsets = normalize_distortion([[1, 2], [5, 3]])
    assert np.array_equal(rho.rho, [[0, 1], [2, 0]]), "row minima should be subtracted"
    assert np.array_equal(offsets, [1, 3])
    assert rho.rho_max == 2.0


@pytest.mark.unit
def test_normalize_is_idempotent():
    rho, _ = normalize_distortion([["0", "0.3"], ["0.3", "0"]], rho_max="1")
    again, offsets = normalize_distortion(rho)
    assert again == rho, "normalizing a normalized measure must not change it"
    assert np.array_equal(offsets, [0, 0])
    assert again.exact_rho_max == 1


@pytest.mark.unit
def test_all_zero_measure_gets_unit_rho_max():
    rho, _ = normalize_distortion([["0", "0"], ["0", "0"]])
    assert rho.rho_max == 1.0


@pytest.mark.unit
@pytest.mark.parametrize(
    "raw",
    [[[0, -1], [1, 0]], [[0, 1], [1]], [], [[0, math.inf], [1, 0]]],
)
def test_normalize_rejects_bad_matrices(raw):
    with pytest.raises(InvalidInputError):
        normalize_distortion(raw)


@pytest.mark.unit
def test_measure_equality_follows_values():
    a, _ = normalize_distortion([[0, 1], [1, 0]])
    b, _ = normalize_distortion([["0", "1"], ["1", "0"]])
    c, _ = normalize_distortion([[0, 1], [1, 0]], rho_max=2)
    assert a == b and hash(a) == hash(b), "same matrix and rho_max should compare equal"
    assert a != c, "a different rho_max is a different measure"


# ==== per-word distortion ====


@pytest.mark.unit
def test_distortion_n_fold_hamming():
    rho, _ = normalize_distortion([[0, 1], [1, 0]])
    assert distortion_n_fold([0, 1, 1, 0], [0, 0, 1, 1], rho) == 0.5


@pytest.mark.unit
def test_distortion_n_fold_rejects_mismatch():
    rho, _ = normalize_distortion([[0, 1], [1, 0]])
    with pytest.raises(InvalidInputError, match="length mismatch"):
        distortion_n_fold([0, 1], [0], rho)
    with pytest.raises(InvalidInputError, match="symbols must lie"):
        distortion_n_fold([0, 2], [0, 1], rho)


@pytest.mark.unit
def test_zero_distortion_word_breaks_ties_low():
    rho, _ = normalize_distortion([[0, 0, 1], [1, 0, 0]])
    y = zero_distortion_word([0, 1, 1], rho)
    assert y.tolist() == [0, 1, 1], "ties go to the smallest reconstruction symbol"
    assert distortion_n_fold([0, 1, 1], y, rho) == 0.0


# ==== information measures ====


@pytest.mark.unit
def test_entropy_reference_value():
    assert entropy([0.3, 0.7]) == pytest.approx(0.610864, abs=1e-6)
    assert entropy([1.0, 0.0]) == 0.0, "0 ln 0 counts as 0"


@pytest.mark.unit
def test_kl_divergence_support():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf, "undominated type has infinite divergence"


@pytest.mark.unit
def test_mutual_information_and_expected_distortion():
    p = SourceDistribution.from_values(["0.5", "0.5"])
    rho, _ = normalize_distortion([[0, 1], [1, 0]])
    bsc = np.array([[0.9, 0.1], [0.1, 0.9]])
    assert expected_distortion(p, bsc, rho) == pytest.approx(0.1)
    assert mutual_information(p.p, bsc) == pytest.approx(math.log(2) - entropy([0.1, 0.9]))
    assert mutual_information(p.p, np.full((2, 2), 0.5)) == 0.0

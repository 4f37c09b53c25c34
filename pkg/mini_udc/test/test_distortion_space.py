"""
Tests for quantized measures, class fingerprints and class tables.
"""

import io
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from mini_udc.core.distortion_space import (
    ClassFingerprint,
    ClassRegistry,
    class_index_of,
    class_table_bytes,
    enumerate_realizable_classes,
    fingerprint,
    growth_bound,
    growth_bound_polynomial,
    joint_type_counts,
    load_class_table,
    quantization_q,
    quantize_distortion,
    save_class_table,
    within_distortion,
    within_distortion_batch,
)
from mini_udc.core.method_of_types import all_words
from mini_udc.core.model import normalize_distortion
from mini_udc.errors import ClassLookupError, DecodeError, InvalidInputError, SizeError


# ==== quantization ====


@pytest.mark.unit
def test_quantize_rounds_down_on_grid():
    rho, _ = normalize_distortion([["0", "0.3"], ["0.3", "0"]], rho_max="1")
    qd = quantize_distortion(rho, "0.25", 4)
    assert quantization_q(rho, "0.25") == qd.q == 4
    assert qd.step == Fraction(1, 16)
    # 0.3 * 16 = 4.8 -> 4
    assert qd.digits.tolist() == [[0, 4], [4, 0]]
    assert qd.exact_values[0][1] == Fraction(1, 4)
    assert np.all(qd.values <= rho.rho + 1e-15), "quantized entries never exceed the originals"


@pytest.mark.unit
def test_quantized_measure_is_normalized():
    rho, _ = normalize_distortion([[0, 0.7, 0.2], [0.5, 0, 1.0]])
    measure = quantize_distortion(rho, 0.15, 3).to_measure()
    assert measure.J == 2 and measure.K == 3
    assert np.all(np.any(measure.rho == 0, axis=1))


@pytest.mark.unit
def test_quantize_rejects_bad_level():
    rho, _ = normalize_distortion([[0, 1], [1, 0]])
    with pytest.raises(InvalidInputError):
        quantize_distortion(rho, 0, 3)
    with pytest.raises(InvalidInputError):
        quantize_distortion(rho, 0.1, 0)


# ==== fingerprints ====


@pytest.mark.unit
def test_fingerprint_pack_roundtrip():
    labels = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1, 0], dtype=bool)
    fp = ClassFingerprint.from_labels(labels)
    assert np.array_equal(fp.labels, labels)
    assert ClassFingerprint.from_int(fp.as_int(), fp.length) == fp


@pytest.mark.unit
def test_fingerprint_labels_joint_types():
    rho, _ = normalize_distortion([["0", "1"], ["1", "0"]])
    counts = joint_type_counts(2, 2, 2)
    labels = fingerprint(rho, "0.5", 2).labels
    mismatches = counts[:, 1] + counts[:, 2]
    assert np.array_equal(labels, mismatches <= 1), "at most one mismatch fits d = 0.5 at n = 2"


@pytest.mark.unit
def test_fingerprint_tie_is_inside_in_float_and_exact_mode():
    exact, _ = normalize_distortion([["0", "0.1"], ["0.2", "0"]])
    floats, _ = normalize_distortion([[0, 0.1], [0.2, 0]])
    for n in (1, 2, 3):
        # (0.1 + 0.2) / 3 = 0.1 lands exactly on d at n = 3
        assert fingerprint(exact, "0.1", n) == fingerprint(floats, 0.1, n), f"modes disagree at n={n}"
    assert within_distortion([0, 1, 1], [1, 0, 1], exact, "0.1")
    assert within_distortion([0, 1, 1], [1, 0, 1], floats, 0.1), "float ties must count as inside"


@pytest.mark.unit
def test_equivalent_pairs_share_fingerprints():
    a, _ = normalize_distortion([["0", "1"], ["1", "0"]])
    b, _ = normalize_distortion([["0", "3"], ["3", "0"]])
    assert fingerprint(a, "0.3", 3) == fingerprint(b, "0.9", 3), "scaling rho and d together keeps the class"


# ==== class tables ====


@pytest.mark.unit
def test_nine_classes_at_n1():
    table = enumerate_realizable_classes(1, 2, 2)
    assert len(table) == 9, "binary n=1 has exactly nine realizable classes"
    assert len(table) <= growth_bound(1, 2, 2) == 16
    for fp, (rho, d) in zip(table.fingerprints, table.representatives):
        assert fingerprint(rho, d, 1) == fp, "every representative reproduces its class"


@pytest.mark.unit
def test_nine_classes_match_brute_force():
    """Sweep normalized measures on a grid and collect the labelings they induce."""
    table = enumerate_realizable_classes(1, 2, 2)
    seen = set()
    grid = [Fraction(i, 4) for i in range(5)]
    for a, b, c, e in itertools.product(grid, repeat=4):
        if min(a, b) != 0 or min(c, e) != 0:
            continue
        rho, _ = normalize_distortion([[a, b], [c, e]], rho_max=1)
        for d in (Fraction(1, 8), Fraction(3, 8), Fraction(5, 8), Fraction(7, 8), Fraction(1)):
            seen.add(fingerprint(rho, d, 1))
    assert seen == set(table.fingerprints)


@pytest.mark.unit
def test_growth_bounds():
    assert growth_bound(2, 2, 2) == 638
    assert growth_bound(1, 2, 2) <= growth_bound_polynomial(1, 2, 2)
    for n in (1, 2):
        assert len(enumerate_realizable_classes(n, 2, 2)) <= growth_bound(n, 2, 2)


@pytest.mark.unit
def test_enumeration_guard():
    with pytest.raises(SizeError, match="ClassRegistry"):
        enumerate_realizable_classes(3, 2, 2)


@pytest.mark.unit
def test_class_lookup():
    table = enumerate_realizable_classes(1, 2, 2)
    rho, _ = normalize_distortion([["0", "1"], ["1", "0"]])
    idx = class_index_of(rho, "0.5", table)
    assert table.fingerprints[idx] == fingerprint(rho, "0.5", 1)
    assert table.index_bits == 4


@pytest.mark.unit
def test_registry_indexes_by_first_encounter():
    reg = ClassRegistry(3, 2, 2)
    a, _ = normalize_distortion([["0", "1"], ["1", "0"]])
    b, _ = normalize_distortion([["0", "2"], ["2", "0"]])
    assert reg.index_of(a, "0.4") == 0
    assert reg.index_of(a, "0.7") == 1
    assert reg.index_of(b, "0.8") == 0, "an equivalent pair reuses its class"
    assert len(reg) == 2
    assert reg.index_bits == 15
    with pytest.raises(ClassLookupError):
        reg.representative(5)


# ==== UDCT files ====


@pytest.mark.unit
def test_class_table_file_roundtrip():
    table = enumerate_realizable_classes(1, 2, 2)
    buf = io.BytesIO()
    save_class_table(table, buf)
    buf.seek(0)
    loaded = load_class_table(buf)
    assert loaded.fingerprints == table.fingerprints
    assert (loaded.n, loaded.J, loaded.K) == (1, 2, 2)
    assert class_table_bytes(loaded) == buf.getvalue()


@pytest.mark.unit
def test_class_table_file_rejects_damage():
    data = class_table_bytes(enumerate_realizable_classes(1, 2, 2))
    with pytest.raises(DecodeError, match="UDCT"):
        load_class_table(io.BytesIO(b"XXXX" + data[4:]))
    with pytest.raises(DecodeError, match="truncated"):
        load_class_table(io.BytesIO(data[:-3]))


# ==== distortion checks ====


@pytest.mark.unit
def test_within_distortion_batch_matches_scalar():
    rho, _ = normalize_distortion([["0", "0.4", "1"], ["0.7", "0", "0.2"]])
    words_x = all_words(3, 2)
    rng = np.random.default_rng(1)
    ys = rng.integers(0, 3, size=words_x.shape)
    batch = within_distortion_batch(words_x, ys, rho, "0.3")
    assert batch.tolist() == [within_distortion(x, y, rho, "0.3") for x, y in zip(words_x, ys)]


@pytest.mark.unit
def test_within_distortion_length_mismatch():
    rho, _ = normalize_distortion([[0, 1], [1, 0]])
    with pytest.raises(InvalidInputError):
        within_distortion([0, 1], [0], rho, 0.5)


# ==== saved registries ====


@pytest.mark.unit
def test_registry_file_keeps_indices_and_width():
    reg = ClassRegistry(3, 2, 2)
    rng = np.random.default_rng(11)
    for _ in range(12):
        rho, _ = normalize_distortion(np.round(rng.random((2, 2)), 2))
        reg.index_of(rho, float(rng.uniform(0.1, 0.9)) * rho.rho_max)
    loaded = load_class_table(io.BytesIO(class_table_bytes(reg)))
    assert isinstance(loaded, ClassRegistry)
    assert loaded.table.fingerprints == reg.table.fingerprints
    assert loaded.index_bits == reg.index_bits == math.ceil(math.log2(21700))
    # new classes continue after the loaded ones
    hamming, _ = normalize_distortion([["0", "1"], ["1", "0"]])
    before = len(loaded)
    idx = loaded.index_of(hamming, "0.001")
    assert idx <= before and len(loaded) == max(before, idx + 1)


@pytest.mark.unit
def test_sampled_class_count_within_growth_bound():
    reg = ClassRegistry(3, 2, 2)
    rng = np.random.default_rng(3)
    for _ in range(400):
        rho, _ = normalize_distortion(np.round(rng.random((2, 2)), 3))
        reg.index_of(rho, float(rng.uniform(0.02, 1.0)) * rho.rho_max)
    assert 1 < len(reg) <= growth_bound(3, 2, 2) == 21700
    assert len(set(reg.table.fingerprints)) == len(reg), "registry holds a duplicate class"

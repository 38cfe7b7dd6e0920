"""
Numeric kernels and readme normalization.
"""

import numpy as np
import pytest
from scipy import sparse

from app.utils.numeric import (
    hellinger_distance,
    hellinger_distance_matrix,
    relative_error,
    segment_softmax,
    sigmoid,
    softplus,
    tanimoto,
    tanimoto_matrix,
)
from app.utils.text import ReadmeNormalizer


# ===== HELLINGER =====

def test_hellinger_identical_is_zero():
    p = np.array([0.2, 0.3, 0.5])
    assert hellinger_distance(p, p) == pytest.approx(0.0, abs=1e-12)


def test_hellinger_disjoint_support_is_one():
    assert hellinger_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)


def test_hellinger_half_mass_example():
    expected = np.sqrt((np.sqrt(0.5) - 1.0) ** 2 + 0.5) / np.sqrt(2.0)
    assert hellinger_distance([0.5, 0.5], [1.0, 0.0]) == pytest.approx(expected)
    assert hellinger_distance([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5412, abs=1e-4)


def test_hellinger_length_mismatch_raises():
    with pytest.raises(ValueError):
        hellinger_distance([0.5, 0.5], [1.0, 0.0, 0.0])


def test_hellinger_matrix_matches_pairwise():
    rng = np.random.default_rng(3)
    phi = rng.dirichlet(np.ones(6), size=5)
    matrix = hellinger_distance_matrix(phi)
    for i in range(5):
        for j in range(5):
            assert matrix[i, j] == pytest.approx(hellinger_distance(phi[i], phi[j]), abs=1e-7)
    np.testing.assert_allclose(matrix, matrix.T)


# ===== TANIMOTO =====

def test_tanimoto_examples():
    assert tanimoto([1, 0, 1], [1, 0, 1]) == pytest.approx(1.0)
    assert tanimoto([1, 0, 0], [0, 1, 0]) == pytest.approx(0.0)
    assert tanimoto([1, 1, 0], [1, 0, 0]) == pytest.approx(0.5)


def test_tanimoto_all_zero_is_zero():
    assert tanimoto([0, 0], [0, 0]) == 0.0


def test_tanimoto_matrix_matches_dense():
    rng = np.random.default_rng(5)
    dense = (rng.random((6, 8)) < 0.4) * rng.integers(1, 6, size=(6, 8)) / 5
    sim = tanimoto_matrix(sparse.csr_matrix(dense)).toarray()
    for i in range(6):
        for j in range(6):
            assert sim[i, j] == pytest.approx(tanimoto(dense[i], dense[j]))


# ===== ACTIVATIONS =====

def test_sigmoid_values():
    assert sigmoid(0.0) == pytest.approx(0.5)
    assert sigmoid(2.0) == pytest.approx(0.880797, abs=1e-6)
    out = sigmoid(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0)
    assert out[1] == pytest.approx(1.0)


def test_softplus_is_negative_log_sigmoid():
    s = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(softplus(-s), -np.log(sigmoid(s)))


def test_segment_softmax_sums_to_one_per_segment():
    scores = np.array([1.0, 2.0, 3.0, 1000.0, 1000.0])
    segments = np.array([0, 0, 2, 1, 1])
    weights = segment_softmax(scores, segments, 3)

    assert weights[:2].sum() == pytest.approx(1.0)
    assert weights[2] == pytest.approx(1.0)
    np.testing.assert_allclose(weights[3:], [0.5, 0.5])
    assert weights[1] / weights[0] == pytest.approx(np.e)


def test_relative_error_zero_vectors():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(3), -np.ones(3)) == pytest.approx(1.0)


# ===== README NORMALIZATION =====

def test_normalizer_drops_stopwords_and_stems():
    normalizer = ReadmeNormalizer()
    assert normalizer.normalize("The cat runs") == ["cat", "run"]
    assert normalizer.normalize("cats running") == ["cat", "run"]


def test_normalizer_stopword_only_text_is_empty():
    assert ReadmeNormalizer().normalize("the of and") == []


def test_normalizer_custom_stopwords():
    normalizer = ReadmeNormalizer(stopwords=["Puzzle"])
    assert normalizer.normalize("puzzle game") == ["game"]

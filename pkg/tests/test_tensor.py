import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from snapvit.errors import DimensionError, SingularityError
from snapvit.tensor import (cholesky_inverse, cholesky_lower, floor_eigenvalues, matmul,
                            matrix_exp, sym_expm, sym_logm)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_rejects_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 1)))


def spd(rng, n, shift=0.5):
    m = rng.normal(size=(n, n))
    return m @ m.T + shift * np.eye(n)


def test_cholesky_inverse_against_eigendecomposition():
    rng = np.random.default_rng(0)
    h = spd(rng, 7)
    w, v = np.linalg.eigh(h)
    np.testing.assert_allclose(cholesky_inverse(h), (v / w) @ v.T, rtol=1e-9, atol=1e-12)
    low = cholesky_lower(h)
    np.testing.assert_allclose(low @ low.T, h, rtol=1e-12, atol=1e-12)


def test_cholesky_singular_raises():
    with pytest.raises(SingularityError):
        cholesky_lower(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_matrix_exp_zero_is_identity_exactly():
    assert np.array_equal(matrix_exp(np.zeros((4, 4))), np.eye(4))


@pytest.mark.parametrize("scale", [1e-3, 0.3, 4.0, 30.0])
def test_matrix_exp_against_reference(scale):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(6, 6)) * scale / 6
    np.testing.assert_allclose(matrix_exp(a), scipy.linalg.expm(a), rtol=1e-10, atol=1e-12)


def test_matrix_exp_symmetric_against_eigendecomposition():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(5, 5))
    s = s + s.T
    w, v = np.linalg.eigh(s)
    np.testing.assert_allclose(matrix_exp(s), (v * np.exp(w)) @ v.T, rtol=1e-10)
    np.testing.assert_allclose(sym_expm(s), (v * np.exp(w)) @ v.T, rtol=1e-12)


def test_sym_logm_diag_and_roundtrip():
    np.testing.assert_allclose(sym_logm(np.diag([4.0, 1.0])), np.diag([np.log(4.0), 0.0]), atol=1e-14)
    rng = np.random.default_rng(3)
    s = spd(rng, 6)
    np.testing.assert_allclose(sym_expm(sym_logm(s)), s, rtol=1e-10, atol=1e-10)


def test_sym_logm_rejects_indefinite_and_asymmetric():
    with pytest.raises(SingularityError):
        sym_logm(np.diag([1.0, -1.0]))
    with pytest.raises(DimensionError):
        sym_logm(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_floor_eigenvalues_makes_pd():
    m = np.array([[1.0, 1.0], [1.0, 1.0]])  # singular
    f = floor_eigenvalues(m, 1e-6)
    assert np.allclose(f, f.T)
    assert np.linalg.eigvalsh(f).min() >= 1e-6 * (1 - 1e-9)

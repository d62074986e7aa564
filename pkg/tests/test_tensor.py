import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from sgstates.tensor import (
    DimensionError,
    ValidationError,
    contract,
    herm_eig_extreme,
    hermitize,
    matricize,
    random_hermitian,
    random_unitary,
    svd,
    unitarity_defect,
    unitary_exp,
)


def crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_contract_matches_einsum(rng):
    a = crand(rng, 2, 3, 4)
    b = crand(rng, 4, 5, 3)
    got = contract(a, [1, 2], b, [2, 0])
    np.testing.assert_allclose(got, np.einsum("ijk,klj->il", a, b), atol=1e-12)


def test_contract_result_mode_order(rng):
    a = crand(rng, 2, 3)
    b = crand(rng, 3, 5, 7)
    assert contract(a, [1], b, [0]).shape == (2, 5, 7)


def test_contract_extent_mismatch(rng):
    with pytest.raises(DimensionError):
        contract(crand(rng, 2, 3), [1], crand(rng, 4, 2), [0])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_contract_associative(i, j, k, l, seed):
    g = np.random.default_rng(seed)
    a, b, c = crand(g, i, j), crand(g, j, k), crand(g, k, l)
    left = contract(contract(a, [1], b, [0]), [1], c, [0])
    right = contract(a, [1], contract(b, [1], c, [0]), [0])
    np.testing.assert_allclose(left, right, atol=1e-10)


def test_matricize_partition_checked(rng):
    t = crand(rng, 2, 3, 4)
    assert matricize(t, [2, 0], [1]).shape == (8, 3)
    with pytest.raises(DimensionError):
        matricize(t, [0], [1])


def test_svd_singular_values_from_gram(rng):
    t = crand(rng, 3, 4, 5)
    res = svd(t, [0, 1], [2])
    m = matricize(t, [0, 1], [2])
    gram = np.sort(np.linalg.eigvalsh(m.conj().T @ m))[::-1]
    np.testing.assert_allclose(res.singular_values**2, gram, atol=1e-10)
    np.testing.assert_allclose(res.reconstruct(), m, atol=1e-12)


def test_svd_truncation_error(rng):
    m = crand(rng, 6, 6)
    res = svd(m, [0], [1], max_keep=3)
    full = np.linalg.svd(m, compute_uv=False)
    assert res.truncation_error == pytest.approx(np.sqrt(np.sum(full[3:] ** 2)))


def test_hermitize_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        hermitize(np.array([[0, 1], [0, 0]]))


def test_sigma_z_smallest_eigenpair():
    e, v = herm_eig_extreme(np.diag([1.0, -1.0]))
    assert e == pytest.approx(-1.0)
    assert abs(abs(v[1]) - 1.0) < 1e-12


def test_unitary_exp_sigma_y_quarter_turn():
    sy = np.array([[0, -1j], [1j, 0]])
    u = unitary_exp(sy, np.pi / 2)
    # exp(i pi/2 sy) = i sy
    np.testing.assert_allclose(u, [[0, 1], [-1, 0]], atol=1e-12)


def test_unitary_exp_matches_series(rng):
    k = random_hermitian(5, rng)
    np.testing.assert_allclose(unitary_exp(k, 0.3), scipy.linalg.expm(0.3j * k), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.floats(-5, 5), st.integers(0, 2**31))
def test_unitary_exp_is_unitary(n, delta, seed):
    k = random_hermitian(n, np.random.default_rng(seed))
    assert unitarity_defect(unitary_exp(k, delta)) < 1e-12


def test_random_unitary(rng):
    assert unitarity_defect(random_unitary(8, rng)) < 1e-12

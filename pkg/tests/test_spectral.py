import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from approxctl.spectral import (
    ModeSet,
    adjoint,
    apply_A,
    as_vector,
    coefficients,
    generator_matrix,
    inner_product,
    norm,
    operator_norm,
    sup_norm,
)

DIM = 6
MODES = ModeSet.first(DIM)
# magnitudes below ~1e-154 square to zero; keep them out of the generated data
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False).filter(lambda v: v == 0 or abs(v) > 1e-100)


def cvec(dim=DIM):
    return st.tuples(arrays(float, dim, elements=finite), arrays(float, dim, elements=finite)).map(
        lambda p: p[0] + 1j * p[1]
    )


def cmat(dim=DIM):
    return st.tuples(arrays(float, (dim, dim), elements=finite), arrays(float, (dim, dim), elements=finite)).map(
        lambda p: p[0] + 1j * p[1]
    )


def test_modeset_validation():
    assert ModeSet.first(3).modes == (1, 2, 3)
    assert ModeSet((2, 5)).basis(5).tolist() == [0, 1]
    for bad in [(), (0, 1), (2, 2), (3, 1), (-1,)]:
        with pytest.raises(ValueError):
            ModeSet(bad)


def test_as_vector_rejects_bad_input():
    with pytest.raises(ValueError, match="dimension mismatch"):
        as_vector([1, 2], 3)
    with pytest.raises(ValueError, match="non-finite"):
        as_vector([1, np.nan])
    with pytest.raises(ValueError):
        as_vector([[1, 2]])


def test_coefficients_sparse_and_dense():
    m = ModeSet.first(4)
    assert coefficients({2: 1j, 4: 3}, m).tolist() == [0, 1j, 0, 3]
    assert coefficients([1, 2, 3, 4], m).tolist() == [1, 2, 3, 4]
    with pytest.raises(ValueError, match="mode 7"):
        coefficients({7: 1}, m)


def test_generator_diagonal():
    x = np.arange(1, DIM + 1, dtype=complex)
    assert np.array_equal(apply_A(x, MODES), generator_matrix(MODES) @ x)
    assert apply_A(MODES.basis(3), MODES)[2] == -9


@given(cvec())
def test_norm_squared_is_real_nonnegative(x):
    ip = inner_product(x, x)
    assert ip.imag == 0 or abs(ip.imag) <= 1e-12 * abs(ip.real)
    assert ip.real >= 0
    assert (ip.real == 0) == (not np.any(x))
    assert norm(x) == pytest.approx(np.sqrt(ip.real), rel=1e-12, abs=1e-300)


@given(cvec(), cvec())
def test_inner_product_conjugate_symmetric(x, y):
    assert inner_product(x, y) == pytest.approx(np.conj(inner_product(y, x)), rel=1e-12, abs=1e-9)


@given(arrays(float, DIM, elements=finite), arrays(float, DIM, elements=finite))
def test_A_self_adjoint_on_real_vectors(x, y):
    lhs = inner_product(apply_A(x, MODES), y)
    rhs = inner_product(x, apply_A(y, MODES))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-6)


@settings(max_examples=60)
@given(cmat(), cvec(), cvec())
def test_adjoint_involution_and_pairing(m, x, y):
    assert np.array_equal(adjoint(adjoint(m)), m)
    lhs = inner_product(m @ x, y)
    rhs = inner_product(x, adjoint(m) @ y)
    scale = operator_norm(m) * norm(x) * norm(y) + 1.0
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_sup_norm():
    traj = np.array([[3, 4], [1, 0]], dtype=complex)
    assert sup_norm(traj) == 5.0
    assert sup_norm(np.zeros((0, 2))) == 0.0

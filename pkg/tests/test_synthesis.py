import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from approxctl.oracle import quadrature_gramian_reference
from approxctl.spectral import ModeSet
from approxctl.synthesis import (
    Gramian,
    assemble_gramian,
    control_law,
    control_trajectory,
    h0_diagnostic,
    linear_terminal_error,
    non_decay,
    residual_target,
    resolvent_apply,
    terminal_integral,
)

A_GRID = [10.0**-k for k in range(7)]


@pytest.fixture(scope="module")
def wave_gramian(wave_kernel):
    return assemble_gramian(wave_kernel, np.eye(16))


@pytest.fixture(scope="module")
def mixed_gramian(small_kernel):
    B = np.random.default_rng(3).standard_normal((8, 8)) + 1j * np.random.default_rng(4).standard_normal((8, 8))
    return assemble_gramian(small_kernel, B), B


def test_hermitian_psd(mixed_gramian):
    g, _ = mixed_gramian
    y = g.matrix
    assert np.linalg.norm(y - y.conj().T) <= 1e-12 * np.linalg.norm(y)
    assert g.lambda_min >= -1e-10
    assert np.all(np.diff(g.eigenvalues) >= 0)


def test_analytic_diagonal(free_kernel):
    g = assemble_gramian(free_kernel, np.eye(16))
    ref = quadrature_gramian_reference(free_kernel.modes, math.pi)
    d, dref = np.diag(g.matrix).real, np.diag(ref.matrix).real
    assert np.max(np.abs(d - dref) / dref) < 1e-6
    # sine modes are orthogonal on [0, pi]
    off = g.matrix - np.diag(np.diag(g.matrix))
    assert np.abs(off).max() < 1e-6 * dref.min()


def test_frozen_reference_values():
    ref = quadrature_gramian_reference(ModeSet.first(3), math.pi)
    assert np.diag(ref.matrix).real == pytest.approx([math.pi / 2, math.pi / 8, math.pi / 18], rel=1e-15)


def test_zero_input_gives_zero_gramian(small_kernel):
    g = assemble_gramian(small_kernel, np.zeros((8, 8)))
    assert np.all(g.matrix == 0) and g.lambda_min == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-8, 10.0), st.integers(0, 2**32 - 1))
def test_resolvent_identity(wave_gramian, a, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    w = resolvent_apply(wave_gramian, a, v)
    resid = (a * np.eye(16) + wave_gramian.matrix) @ w - v
    assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(v)
    assert np.linalg.norm(a * w) <= np.linalg.norm(v) * (1 + 1e-12)


def test_resolvent_rejects_nonpositive_a(wave_gramian):
    for a in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            resolvent_apply(wave_gramian, a, np.ones(16))


def test_linear_error_monotone_and_enveloped(wave_gramian, rng):
    p = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    errs = [linear_terminal_error(wave_gramian, a, p) for a in A_GRID]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    for a, e in zip(A_GRID, errs):
        assert e <= a / (a + wave_gramian.lambda_min) * np.linalg.norm(p) * (1 + 1e-12)


def test_control_reaches_regularized_target(wave, wave_kernel, wave_gramian):
    a = 1e-3
    p = residual_target(wave_kernel, wave.x0, wave.y0, wave.target)
    u = control_trajectory(wave_kernel, np.eye(16), wave_gramian, a, p)
    assert u.shape == (wave_kernel.grid.steps + 1, 16)
    M = wave_kernel.grid.steps
    xT = wave_kernel.r[:, M, 0] * wave.x0 + wave_kernel.q[:, M, 0] * wave.y0 + terminal_integral(wave_kernel, u)
    expected = wave.target - a * resolvent_apply(wave_gramian, a, p)
    assert np.linalg.norm(xT - expected) <= 1e-10 * np.linalg.norm(p)
    t = wave_kernel.grid.nodes[300]
    assert np.allclose(control_law(wave_kernel, np.eye(16), wave_gramian, a, p, t), u[300], rtol=0, atol=1e-14)


def test_residual_target_forcing_shape(wave, wave_kernel):
    with pytest.raises(ValueError, match="forcing"):
        residual_target(wave_kernel, wave.x0, wave.y0, wave.target, np.zeros((3, 16)))


def test_h0_diagnostic(wave_gramian):
    probes = [np.eye(16)[0], np.eye(16)[-1]]
    tab = h0_diagnostic(wave_gramian, A_GRID, probes)
    assert tab.h0_holds and tab.values.shape == (7, 2)
    assert len(tab.rows()) == 14 and tab.rows()[0][:2] == (1.0, 0)
    dead = h0_diagnostic(Gramian.from_matrix(np.zeros((16, 16))), A_GRID, probes)
    assert dead.non_decay == (True, True) and not dead.h0_holds
    with pytest.raises(ValueError, match="decreasing"):
        h0_diagnostic(wave_gramian, [1e-3, 1e-2], probes)
    with pytest.raises(ValueError):
        h0_diagnostic(wave_gramian, [], probes)


def test_non_decay_rule():
    assert non_decay(1.0, 1.0)
    assert not non_decay(1.0, 0.5)
    assert not non_decay(0.0, 0.0)

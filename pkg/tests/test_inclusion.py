from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from approxctl.errors import DiagnosticError
from approxctl.inclusion import (
    ControlProblem,
    ImpulseSpec,
    NonlocalSpec,
    SelectionStrategy,
    SetValuedMap,
    StateMap,
    TrajectoryMap,
    contraction_constant,
    gamma_from_growth,
    impulsive_solve,
    nonlocal_solve,
    picard_solve,
    sweep_regularization,
)
from approxctl.synthesis import linear_terminal_error, residual_target

DIM = 8
X0 = np.array([1.0, 0.25, 0.1 + 0.1j, 0, 0, 0, 0, 0.05])
Y0 = np.array([0.5j, -0.25, 0, 0, 0, 0, 0, 0])
TARGET = np.array([0, 0.5, -0.25, 0, 0, 0, 0, 0], dtype=complex)


def saturating(gain=0.2, radius=0.1):
    return SetValuedMap.ball(
        lambda t, x: gain * x / (1 + np.linalg.norm(x, axis=1, keepdims=True)), (gain, 0.0), radius, kind="saturating"
    )


@pytest.fixture(scope="module")
def linear(small_kernel):
    return ControlProblem(small_kernel, np.eye(DIM), SetValuedMap.zero(), X0, Y0, TARGET, 1e-3)


@pytest.fixture(scope="module")
def bounded(linear):
    return replace(linear, inclusion=saturating(), gramian_cache=linear.gramian)


def test_constants_frozen():
    assert gamma_from_growth((5.0, 0.25), 2.0) == 0.5
    assert contraction_constant(2.0, 0.5, 3.0, 0.1, 1.0) == pytest.approx(361.0)
    with pytest.raises(ValueError):
        contraction_constant(1, 1, 1, 0.0, 1)
    with pytest.raises(ValueError):
        gamma_from_growth((-1.0, 0.0), 1.0)


def test_problem_validation(small_kernel):
    with pytest.raises(ValueError, match="regularization"):
        ControlProblem(small_kernel, np.eye(DIM), SetValuedMap.zero(), X0, Y0, TARGET, 0.0)
    with pytest.raises(ValueError, match="relaxation"):
        ControlProblem(small_kernel, np.eye(DIM), SetValuedMap.zero(), X0, Y0, TARGET, 1.0, relaxation=1.5)
    with pytest.raises(ValueError, match="dimension"):
        ControlProblem(small_kernel, np.eye(DIM), SetValuedMap.zero(), X0[:3], Y0, TARGET, 1.0)
    with pytest.raises(ValueError):
        SetValuedMap.ball(lambda t, x: x, (0, 0), radius=-1.0)
    with pytest.raises(ValueError, match="selection"):
        SelectionStrategy("bogus")


def test_linear_solve_matches_closed_form(linear):
    sol = picard_solve(linear)
    assert sol.converged and sol.status == "converged"
    assert sol.iterations == 1
    p = residual_target(linear.kernel, X0, Y0, TARGET)
    expected = linear_terminal_error(linear.gramian, linear.a, p)
    assert sol.terminal_error == pytest.approx(expected, rel=1e-8)
    assert sol.states.shape == sol.controls.shape == (linear.grid.steps + 1, DIM)
    assert np.array_equal(sol.states[0], X0)


def test_mild_identity_by_direct_summation(bounded):
    """Re-substitute the returned trajectory, summing the trapezoid rule node by node."""
    sol = picard_solve(bounded)
    k, h = bounded.kernel, bounded.grid.h
    forcing = sol.selections + sol.controls @ bounded.B.T
    for j in (0, 1, 77, 200, bounded.grid.steps):
        acc = k.r[:, j, 0] * X0 + k.q[:, j, 0] * Y0
        for s in range(j + 1):
            w = 0.5 * h if s in (0, j) else h
            acc = acc + w * k.q[:, j, s] * forcing[s] * (j > 0)
        # the iterate is returned once the sweep moves it by less than tol
        assert np.linalg.norm(acc - sol.states[j]) <= bounded.tol


def test_residuals_shrink_under_contraction(bounded):
    sol = picard_solve(bounded)
    assert sol.contraction_constant < 1
    h = sol.residual_history
    assert all(b <= a for a, b in zip(h[1:], h[2:]))
    assert sol.residual_ratio < 1


@pytest.mark.parametrize("kind", SelectionStrategy.KINDS)
def test_selection_validity_on_solution(bounded, kind):
    sol = picard_solve(bounded, SelectionStrategy(kind, seed=11))
    F, t, x = bounded.inclusion, sol.times, sol.states
    gap = np.linalg.norm(sol.selections - F.center(t, x), axis=1)
    assert np.all(gap <= F.radius(t, x) + 1e-12)
    assert sol.converged


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(0, 2), st.sampled_from(SelectionStrategy.KINDS))
def test_selection_validity_random(seed, radius, kind):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 5)
    x = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    F = SetValuedMap.ball(lambda t, x: 0.5 * x, (0.0, 0.5), radius)
    f = SelectionStrategy(kind, seed).select(F, t, x)
    assert np.all(np.linalg.norm(f - F.center(t, x), axis=1) <= F.radius(t, x) + 1e-12)
    if kind == "min-norm-shift":
        # no point of the ball is shorter
        expected = np.maximum(np.linalg.norm(0.5 * x, axis=1) - radius, 0)
        assert np.allclose(np.linalg.norm(f, axis=1), expected, atol=1e-12)


def test_random_extreme_is_seeded():
    a = SelectionStrategy("random-extreme", 5).directions(4, 3)
    assert np.array_equal(a, SelectionStrategy("random-extreme", 5).directions(4, 3))
    assert not np.array_equal(a, SelectionStrategy("random-extreme", 6).directions(4, 3))
    assert np.allclose(np.linalg.norm(a, axis=1), 1)
    assert SelectionStrategy("center").directions(4, 3) is None


def test_envelope_violation_is_diagnostic(linear):
    liar = SetValuedMap(lambda t, x: 2 * x, lambda t, x: np.zeros(len(t)), (0.0, 1.0))
    with pytest.raises(DiagnosticError, match="envelope"):
        picard_solve(replace(linear, inclusion=liar))


def test_reduction_chain_bitwise(bounded):
    strat = SelectionStrategy("random-extreme", 3)
    a = picard_solve(bounded, strat)
    b = nonlocal_solve(bounded, NonlocalSpec(), strat)
    c = impulsive_solve(bounded, NonlocalSpec(), ImpulseSpec.none(), strat)
    zero_jump = ImpulseSpec((bounded.grid.nodes[100],), (StateMap.zero(),), (StateMap.zero(),))
    d = impulsive_solve(bounded, None, zero_jump, strat)
    for other in (b, c, d):
        assert np.array_equal(a.states, other.states)
        assert np.array_equal(a.controls, other.controls)
        assert a.residual_history == other.residual_history


@pytest.mark.parametrize("g", [TrajectoryMap.point(0.1, 0), TrajectoryMap.point(-0.2, 128), TrajectoryMap.mean(0.1)])
def test_nonlocal_condition_satisfied(bounded, g):
    nl = NonlocalSpec(g=g, h=TrajectoryMap.constant(0.05 * np.ones(DIM)))
    sol = nonlocal_solve(bounded, nl)
    assert sol.converged
    assert np.linalg.norm(sol.states[0] + g(sol.states) - X0) <= 1e-8
    assert np.linalg.norm(sol.velocities[0] + 0.05 - Y0) <= 1e-8


def test_lipschitz_sampling():
    NonlocalSpec(TrajectoryMap.point(0.1, 3), TrajectoryMap.mean(0.5)).check_lipschitz(10, 4)
    liar = TrajectoryMap(lambda x: 3 * x[0], 1.0)
    with pytest.raises(DiagnosticError, match="Lipschitz"):
        NonlocalSpec(g=liar).check_lipschitz(10, 4)


def test_impulse_jumps_exact(bounded):
    k = 128
    imp = ImpulseSpec(
        (bounded.grid.nodes[k],), (StateMap.saturating(0.3),), (StateMap.constant([0.2, -0.1j, 0, 0, 0, 0, 0, 0]),)
    )
    sol = impulsive_solve(bounded, None, imp)
    assert sol.converged
    (rec,) = sol.impulses
    assert rec.index == k and rec.time == bounded.grid.nodes[k]
    assert np.array_equal(rec.pos_minus, sol.states[k])
    assert np.array_equal(rec.jump_pos, imp.jump_pos[0](rec.pos_minus))
    assert np.array_equal(rec.jump_vel, imp.jump_vel[0](rec.pos_minus))
    assert np.allclose(rec.pos_plus - rec.pos_minus, rec.jump_pos, rtol=0, atol=1e-15)
    assert np.allclose(rec.vel_plus - rec.vel_minus, rec.jump_vel, rtol=0, atol=1e-15)
    # the trajectory leaves t_k from the reset state, not from x(t_k-)
    h = bounded.grid.h
    slope = (sol.states[k + 1] - rec.pos_plus) / h
    assert np.linalg.norm(slope - rec.vel_plus) < 0.1 * np.linalg.norm(rec.vel_plus)


def test_impulse_validation(bounded):
    g = bounded.grid
    one = (StateMap.zero(),)
    with pytest.raises(ValueError, match="not a node"):
        impulsive_solve(bounded, None, ImpulseSpec((1.0,), one, one))
    with pytest.raises(ValueError, match="inside"):
        impulsive_solve(bounded, None, ImpulseSpec((g.T,), one, one))
    with pytest.raises(ValueError, match="increasing"):
        ImpulseSpec((g.nodes[5], g.nodes[3]), one * 2, one * 2)
    with pytest.raises(ValueError, match="lengths"):
        ImpulseSpec((g.nodes[5],), one * 2, one)
    liar = StateMap(lambda x: x, 0.0)
    with pytest.raises(DiagnosticError, match="bound"):
        impulsive_solve(bounded, None, ImpulseSpec((g.nodes[5],), (liar,), one))


def test_non_convergence_reported(small_kernel, caplog):
    big = SetValuedMap.ball(lambda t, x: 3 * x, (0.0, 3.0))
    prob = ControlProblem(small_kernel, np.eye(DIM), big, X0, Y0, TARGET, 1e-3, max_iter=5)
    sol = picard_solve(prob)
    assert not sol.converged and sol.status == "not-converged"
    assert sol.iterations == 5 and len(sol.residual_history) == 5
    assert sol.contraction_constant > 1
    assert "contraction constant" in caplog.text


def test_relaxation_reaches_same_fixed_point(bounded):
    plain = picard_solve(bounded)
    damped = picard_solve(replace(bounded, relaxation=0.5))
    assert damped.converged and damped.iterations > plain.iterations
    assert np.abs(damped.states - plain.states).max() < 1e-8


def test_sweep(bounded):
    a_list = [1.0, 1e-2, 1e-4]
    tab = sweep_regularization(bounded, a_list, SelectionStrategy("random-extreme", 1))
    assert [r.a for r in tab.rows] == a_list
    assert all(r.converged for r in tab.rows)
    assert tab.nonincreasing and not tab.non_decay
    unbounded = replace(bounded, inclusion=SetValuedMap.ball(lambda t, x: 0.1 * x, (0, 0.1)))
    with pytest.raises(ValueError, match="bounded"):
        sweep_regularization(unbounded, a_list)
    zeroB = ControlProblem(bounded.kernel, np.zeros((DIM, DIM)), SetValuedMap.zero(), X0, Y0, TARGET, 1.0)
    flat = sweep_regularization(zeroB, a_list)
    assert flat.non_decay and not flat.strictly_decreasing

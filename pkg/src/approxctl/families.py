"""Cosine/sine families and the non-autonomous evolution operator.

With ``A(t) = A + b(t) d/dxi`` on the Fourier basis, every mode evolves
independently under ``q'' = (-n**2 + i n b(t)) q``.  The kernel tabulates, for
each mode and each pair of grid nodes ``t_j >= t_k``:

* ``q[n, j, k]``  -- solution with ``(q, q')(t_k) = (0, 1)``, i.e. ``S(t_j, t_k)``
* ``r[n, j, k]``  -- solution with ``(q, q')(t_k) = (1, 0)``, i.e. ``C(t_j, t_k)``
* ``dq``, ``dr``  -- their time derivatives, used for velocity trajectories.

Entries with ``j < k`` are zero and never read.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DiagnosticError
from .spectral import ComplexArray, ModeSet, as_vector

log = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j T / M`` on ``[0, T]``."""

    T: float
    steps: int

    def __post_init__(self) -> None:
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon must be positive and finite, got {self.T}")
        if self.steps < 2:
            raise ValueError(f"grid needs at least 2 steps, got {self.steps}")

    @property
    def h(self) -> float:
        return self.T / self.steps

    @property
    def nodes(self) -> FloatArray:
        return np.arange(self.steps + 1) * self.h

    def index(self, t: float) -> int:
        """Node index of ``t``; raises ``ValueError`` for off-grid times."""
        j = int(round(t / self.h))
        if j < 0 or j > self.steps or abs(j * self.h - t) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"time {t!r} is not a node of the grid (T={self.T}, M={self.steps})")
        return j

    def trapezoid_weights(self) -> FloatArray:
        w = np.full(self.steps + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True)
class DampingSpec:
    """Time-dependent coefficient ``b(t)`` of the first-order perturbation."""

    b: Callable[[FloatArray], FloatArray]
    beta: float
    kind: str = "custom"
    amplitude: float = 0.0

    @classmethod
    def zero(cls) -> "DampingSpec":
        return cls(lambda t: np.zeros_like(np.asarray(t, dtype=float)), 0.0, "zero")

    @classmethod
    def cosine(cls, k: float) -> "DampingSpec":
        return cls(lambda t: k * np.cos(t), abs(k), "cos", k)

    @classmethod
    def sine(cls, k: float, T: float) -> "DampingSpec":
        peak = 1.0 if T >= math.pi / 2 else math.sin(T)
        return cls(lambda t: k * np.sin(t), abs(k) * peak, "sin", k)

    @classmethod
    def piecewise(cls, knots: ArrayLike, values: ArrayLike) -> "DampingSpec":
        """Continuous piecewise-linear ``b`` through ``(knots[i], values[i])``, flat outside."""
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or values.shape != knots.shape or knots.size == 0:
            raise ValueError("piecewise damping needs matching non-empty knots and values")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("piecewise damping knots must be increasing")
        return cls(
            lambda t: np.interp(t, knots, values),
            float(np.max(np.abs(values))),
            "piecewise",
            float(np.max(np.abs(values))),
        )

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind in ("cos", "sin") and self.amplitude == 0)

    def __call__(self, t: ArrayLike) -> FloatArray:
        return np.asarray(self.b(np.asarray(t, dtype=float)), dtype=float)


def cosine_apply(t: float, x: ArrayLike, modes: ModeSet) -> ComplexArray:
    """Unperturbed cosine family: coefficient ``n`` times ``cos(n t)``."""
    x = as_vector(x, modes.dim)
    return np.cos(modes.indices * t) * x


def sine_apply(t: float, x: ArrayLike, modes: ModeSet) -> ComplexArray:
    """Unperturbed sine family: coefficient ``n`` times ``sin(n t) / n``."""
    x = as_vector(x, modes.dim)
    n = modes.indices
    return np.sin(n * t) / n * x


@dataclass(frozen=True, eq=False)
class EvolutionKernel:
    modes: ModeSet
    grid: TimeGrid
    damping: DampingSpec
    q: ComplexArray
    r: ComplexArray
    dq: ComplexArray
    dr: ComplexArray
    steps: ComplexArray = field(repr=False)  # (dim, M, 2, 2) one-step propagators
    Nhat: float = 0.0
    Ntilde: float = 0.0
    N1: float = 0.0
    substeps: int = 1
    step_error: FloatArray = field(default_factory=lambda: np.zeros(0), repr=False)

    def generator(self, t: ArrayLike) -> ComplexArray:
        """Diagonal of ``A(t)``; shape ``t.shape + (dim,)``."""
        return _mode_coefficient(self.modes, self.damping, np.asarray(t, dtype=float))

    def pair(self, t: float, s: float) -> tuple[int, int]:
        j, k = self.grid.index(t), self.grid.index(s)
        if k > j:
            raise ValueError(f"evolution kernel is tabulated for s <= t only (t={t}, s={s})")
        return j, k


def _mode_coefficient(modes: ModeSet, damping: DampingSpec, t: FloatArray) -> ComplexArray:
    n = modes.indices
    b = damping(t)
    return -(n**2) + 1j * n * b[..., None]


def _rk4_propagators(modes: ModeSet, damping: DampingSpec, grid: TimeGrid, substeps: int) -> ComplexArray:
    """One-interval propagators of ``y' = [[0, 1], [a_n(t), 0]] y``.

    Returns shape ``(dim, M, 2, 2)``; each interval is crossed with ``substeps``
    classical RK4 steps, all intervals advanced together.
    """
    dim, M = modes.dim, grid.steps
    delta = grid.h / substeps
    start = grid.nodes[:-1]
    Y = np.zeros((dim, M, 2, 2), dtype=complex)
    Y[..., 0, 0] = Y[..., 1, 1] = 1.0

    def lmul(a: ComplexArray, Z: ComplexArray) -> ComplexArray:
        out = np.empty_like(Z)
        out[..., 0, :] = Z[..., 1, :]
        out[..., 1, :] = a[..., None] * Z[..., 0, :]
        return out

    for i in range(substeps):
        t0 = start + i * delta
        a1 = _mode_coefficient(modes, damping, t0).T
        a2 = _mode_coefficient(modes, damping, t0 + 0.5 * delta).T
        a3 = _mode_coefficient(modes, damping, t0 + delta).T
        k1 = lmul(a1, Y)
        k2 = lmul(a2, Y + 0.5 * delta * k1)
        k3 = lmul(a2, Y + 0.5 * delta * k2)
        k4 = lmul(a3, Y + delta * k3)
        Y = Y + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y


def _chain(steps: ComplexArray) -> ComplexArray:
    """Product of all interval propagators, ``P_{M-1} ... P_0``, per mode."""
    out = np.broadcast_to(np.eye(2, dtype=complex), (steps.shape[0], 2, 2)).copy()
    for j in range(steps.shape[1]):
        out = steps[:, j] @ out
    return out


def build_kernel(
    modes: ModeSet,
    damping: DampingSpec,
    grid: TimeGrid,
    *,
    max_phase_step: float = 0.005,
    step_tol: float = 1e-6,
) -> EvolutionKernel:
    """Tabulate ``S(t, s)`` and ``C(t, s)`` on all grid pairs ``s <= t``.

    Each grid interval is integrated with enough RK4 sub-steps that
    ``n_max * dt <= max_phase_step``.  A second pass with halved sub-steps
    estimates the error of the fundamental matrix over ``[0, T]``; an estimate
    above ``step_tol`` (or any non-finite value) raises ``DiagnosticError``.
    """
    samples = damping(np.linspace(0.0, grid.T, 8 * grid.steps + 1))
    if not np.all(np.isfinite(samples)):
        raise ValueError("damping b(t) is not finite on [0, T]")
    if np.max(np.abs(samples)) > damping.beta * (1 + 1e-12) + 1e-15:
        raise ValueError(f"damping bound beta={damping.beta} is below sampled sup |b(t)|")

    n_max = max(modes.modes)
    substeps = max(1, math.ceil(n_max * grid.h / max_phase_step))
    coarse = _rk4_propagators(modes, damping, grid, substeps)
    fine = _rk4_propagators(modes, damping, grid, 2 * substeps)

    # chain error relative to the fundamental-matrix magnitude, per mode
    whole_c, whole_f = _chain(coarse), _chain(fine)
    scale = np.maximum(np.abs(whole_f).max(axis=(1, 2)), 1.0)
    err = np.abs(whole_c - whole_f).max(axis=(1, 2)) / scale
    bad = ~np.isfinite(err) | (err > step_tol)
    if np.any(bad):
        n = modes.modes[int(np.argmax(bad))]
        raise DiagnosticError(f"RK4 step-halving check failed for mode n={n} (estimate {err[bad][0]:.3e})")

    dim, M = modes.dim, grid.steps
    q = np.zeros((dim, M + 1, M + 1), dtype=complex)
    r = np.zeros_like(q)
    dq = np.zeros_like(q)
    dr = np.zeros_like(q)
    r[:, 0, 0] = dq[:, 0, 0] = 1.0
    for j in range(M):
        p00, p01 = fine[:, j, 0, 0, None], fine[:, j, 0, 1, None]
        p10, p11 = fine[:, j, 1, 0, None], fine[:, j, 1, 1, None]
        rj, drj = r[:, j, : j + 1], dr[:, j, : j + 1]
        qj, dqj = q[:, j, : j + 1], dq[:, j, : j + 1]
        r[:, j + 1, : j + 1] = p00 * rj + p01 * drj
        dr[:, j + 1, : j + 1] = p10 * rj + p11 * drj
        q[:, j + 1, : j + 1] = p00 * qj + p01 * dqj
        dq[:, j + 1, : j + 1] = p10 * qj + p11 * dqj
        r[:, j + 1, j + 1] = dq[:, j + 1, j + 1] = 1.0
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
        raise DiagnosticError("evolution kernel blew up (non-finite entries)")

    Nhat = max(float(np.abs(q[i]).max()) for i in range(dim))
    Ntilde = max(float(np.abs(r[i]).max()) for i in range(dim))
    N1 = max(float(np.abs(np.diff(q[i], axis=0)).max()) for i in range(dim)) / grid.h
    log.debug("kernel: dim=%d M=%d substeps=%d Nhat=%.4g Ntilde=%.4g", dim, M, substeps, Nhat, Ntilde)
    return EvolutionKernel(
        modes, grid, damping, q, r, dq, dr, fine, Nhat, Ntilde, N1, 2 * substeps, err
    )


def evolution_apply(kernel: EvolutionKernel, t: float, s: float, x: ArrayLike) -> ComplexArray:
    """``S(t, s) x``."""
    j, k = kernel.pair(t, s)
    return kernel.q[:, j, k] * as_vector(x, kernel.modes.dim)


def cosine_evolution_apply(kernel: EvolutionKernel, t: float, s: float, x: ArrayLike) -> ComplexArray:
    """``C(t, s) x``."""
    j, k = kernel.pair(t, s)
    return kernel.r[:, j, k] * as_vector(x, kernel.modes.dim)


def adjoint_evolution_apply(kernel: EvolutionKernel, t: float, s: float, x: ArrayLike) -> ComplexArray:
    """``S(t, s)* x``; the operator is diagonal so the adjoint conjugates entries."""
    j, k = kernel.pair(t, s)
    return np.conj(kernel.q[:, j, k]) * as_vector(x, kernel.modes.dim)


@dataclass(frozen=True)
class AxiomReport:
    """Maximum violations of the evolution-operator axioms on a kernel.

    ``gronwall_slack`` is the minimum of ``exp(beta (t - s)) / n - |q_n(t, s)|``;
    it is a margin, so negative values are violations.
    """

    zero_diagonal: float
    unit_cosine_diagonal: float
    dt_at_diagonal: float
    ds_at_diagonal: float
    second_order: float
    gronwall_slack: float
    lipschitz_N1: float

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("S(t,t)=0", self.zero_diagonal),
            ("C(t,t)=I", self.unit_cosine_diagonal),
            ("dS/dt|t=s=I", self.dt_at_diagonal),
            ("dS/ds|t=s=-I", self.ds_at_diagonal),
            ("d2S/dt2=A(t)S", self.second_order),
            ("gronwall_slack", self.gronwall_slack),
            ("N1_estimate", self.lipschitz_N1),
        ]


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0  # f'(0) from f(-2h..2h)
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0  # f''(0) from f(-2h..2h)


def _backward_position(inv: ComplexArray, start: int, back: int) -> ComplexArray:
    """Position of the unit-velocity solution from node ``start`` taken ``back`` nodes back."""
    y = np.zeros((inv.shape[0], 2), dtype=complex)
    y[:, 1] = 1.0
    for j in range(start - 1, start - 1 - back, -1):
        y = np.einsum("nab,nb->na", inv[:, j], y)
    return y[:, 0]


def verify_axioms(kernel: EvolutionKernel, test_vector: ArrayLike | None = None, sources: int = 16) -> AxiomReport:
    """Check the evolution-operator axioms on the tabulated kernel.

    Derivatives use fourth-order centred differences; values at ``t < s``
    come from inverting the stored one-interval propagators.  The second-order
    relation is checked on ``test_vector`` (default ``1/n**2`` coefficients)
    for up to ``sources`` source nodes and is reported relative to
    ``max ||A(t) S(t, s) x||``.
    """
    q, grid, modes = kernel.q, kernel.grid, kernel.modes
    M, h = grid.steps, grid.h
    diag = np.arange(M + 1)
    zero_diag = float(np.abs(q[:, diag, diag]).max())
    cos_diag = float(np.abs(kernel.r[:, diag, diag] - 1.0).max())

    inv = np.linalg.inv(kernel.steps)
    dt_viol = ds_viol = 0.0
    for k in range(2, M - 1):
        # d/dt q(t, t_k) at t = t_k
        f = [
            _backward_position(inv, k, 2),
            _backward_position(inv, k, 1),
            np.zeros(modes.dim),
            q[:, k + 1, k],
            q[:, k + 2, k],
        ]
        d = sum(c * v for c, v in zip(_D1, f)) / h
        dt_viol = max(dt_viol, float(np.abs(d - 1.0).max()))
        # d/ds q(t_k, s) at s = t_k
        g = [
            q[:, k, k - 2],
            q[:, k, k - 1],
            np.zeros(modes.dim),
            _backward_position(inv, k + 1, 1),
            _backward_position(inv, k + 2, 2),
        ]
        d = sum(c * v for c, v in zip(_D1, g)) / h
        ds_viol = max(ds_viol, float(np.abs(d + 1.0).max()))

    x = (1.0 / modes.indices**2) if test_vector is None else as_vector(test_vector, modes.dim)
    worst, scale = 0.0, 0.0
    for k in np.unique(np.linspace(0, M - 4, min(sources, M - 3)).astype(int)):
        traj = q[:, k:, k].T * x  # S(t_j, t_k) x for j >= k
        if traj.shape[0] < 5:
            continue
        second = sum(c * traj[i : traj.shape[0] - 4 + i] for i, c in enumerate(_D2)) / h**2
        a = kernel.generator(grid.nodes[k + 2 : M - 1])
        rhs = a * traj[2:-2]
        worst = max(worst, float(np.linalg.norm(second - rhs, axis=1).max()))
        scale = max(scale, float(np.linalg.norm(rhs, axis=1).max()))
    second_order = worst / scale if scale > 0 else worst

    beta = kernel.damping.beta
    gap = grid.nodes[:, None] - grid.nodes[None, :]
    lower = gap >= 0
    envelope = np.exp(beta * np.where(lower, gap, 0.0))
    slack = math.inf
    for i, n in enumerate(modes.modes):
        margin = envelope / n - np.abs(q[i])
        slack = min(slack, float(margin[lower].min()))

    return AxiomReport(zero_diag, cos_diag, dt_viol, ds_viol, second_order, slack, kernel.N1)

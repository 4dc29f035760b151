"""Mild solutions of the controlled inclusion by (damped) Picard iteration.

One sweep of the solution operator, given the current iterate ``x``:

1. pick ``f(t_j)`` from ``F(t_j, x(t_j))`` with the selection strategy,
2. form the terminal residual ``p(x)`` and the control
   ``u(t) = B* S(T,t)* (aI + Y)^{-1} p(x)``,
3. evaluate the mild-solution formula with forcing ``f + B u``, plus the
   nonlocal corrections ``g(x), h(x)`` and impulse terms when present.

The iteration stops once the sup-norm change over the grid drops below
``tol``.  ``picard_solve``, ``nonlocal_solve`` and ``impulsive_solve`` share
one code path so that degenerate inputs reproduce each other exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import DiagnosticError
from .families import EvolutionKernel, TimeGrid
from .spectral import ComplexArray, as_operator, as_vector, operator_norm, sup_norm
from .synthesis import Gramian, _check_decreasing, assemble_gramian, control_trajectory, non_decay, terminal_integral

log = logging.getLogger(__name__)

CenterFn = Callable[[np.ndarray, ComplexArray], ComplexArray]
RadiusFn = Callable[[np.ndarray, ComplexArray], np.ndarray]


def _envelope_slack(c1: float, c2: float, xnorm: np.ndarray) -> np.ndarray:
    return 1e-12 * (1.0 + c1 + c2 * xnorm)


@dataclass(frozen=True)
class SetValuedMap:
    """Ball-valued map ``F(t, x) = center(t, x) + closed ball of radius(t, x)``.

    ``center`` and ``radius`` are vectorized over nodes: they take times of
    shape ``(K,)`` and states of shape ``(K, dim)``.  ``growth = (c1, c2)``
    promises ``||center|| + radius <= c1 + c2 ||x||``.
    """

    center: CenterFn
    radius: RadiusFn
    growth: tuple[float, float]
    kind: str = "custom"

    @classmethod
    def zero(cls) -> "SetValuedMap":
        return cls(lambda t, x: np.zeros_like(x), lambda t, x: np.zeros(len(t)), (0.0, 0.0), "zero")

    @classmethod
    def ball(
        cls,
        center: CenterFn,
        center_growth: tuple[float, float],
        radius: float = 0.0,
        radius_slope: float = 0.0,
        kind: str = "ball",
    ) -> "SetValuedMap":
        if radius < 0 or radius_slope < 0:
            raise ValueError("ball radius parameters must be nonnegative")

        def rho(t: np.ndarray, x: ComplexArray) -> np.ndarray:
            return radius + radius_slope * np.linalg.norm(x, axis=-1)

        c1, c2 = center_growth
        return cls(center, rho, (c1 + radius, c2 + radius_slope), kind)

    @property
    def is_bounded(self) -> bool:
        return self.growth[1] == 0

    def check_envelope(self, t: np.ndarray, x: ComplexArray) -> None:
        """Raise ``DiagnosticError`` if the growth promise fails at the sampled points."""
        c1, c2 = self.growth
        xn = np.linalg.norm(x, axis=-1)
        rho = np.asarray(self.radius(t, x), dtype=float)
        if np.any(rho < 0):
            raise DiagnosticError("inclusion radius is negative at a sampled point")
        lhs = np.linalg.norm(self.center(t, x), axis=-1) + rho
        rhs = c1 + c2 * xn
        if np.any(lhs > rhs + _envelope_slack(c1, c2, xn)):
            i = int(np.argmax(lhs - rhs))
            raise DiagnosticError(
                f"growth envelope violated at t={t[i]:.6g}: {lhs[i]:.6g} > {c1} + {c2}*{xn[i]:.6g}"
            )


@dataclass(frozen=True)
class SelectionStrategy:
    """How a single-valued branch ``f(t) in F(t, x(t))`` is chosen.

    * ``center``: the ball centre.
    * ``min-norm-shift``: the element of least norm (projection of 0 onto the ball).
    * ``random-extreme``: centre plus radius times a unit direction drawn once
      per node from ``seed``; the same directions are reused on every sweep.
    """

    kind: str = "center"
    seed: int = 0

    KINDS = ("center", "min-norm-shift", "random-extreme")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown selection strategy {self.kind!r}; expected one of {self.KINDS}")

    def directions(self, nodes: int, dim: int) -> ComplexArray | None:
        if self.kind != "random-extreme":
            return None
        rng = np.random.default_rng(self.seed)
        d = rng.standard_normal((nodes, dim)) + 1j * rng.standard_normal((nodes, dim))
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def select(self, F: SetValuedMap, t: np.ndarray, x: ComplexArray, directions: ComplexArray | None = None) -> ComplexArray:
        center = np.asarray(F.center(t, x), dtype=complex)
        if self.kind == "center":
            return center
        rho = np.asarray(F.radius(t, x), dtype=float)
        if self.kind == "min-norm-shift":
            cn = np.linalg.norm(center, axis=1)
            shrink = np.where(cn > rho, 1.0 - rho / np.where(cn > 0, cn, 1.0), 0.0)
            return center * shrink[:, None]
        if directions is None:
            directions = self.directions(*x.shape)
        return center + rho[:, None] * directions


@dataclass(frozen=True)
class TrajectoryMap:
    """Map from a discrete trajectory ``(M+1, dim)`` to a state, with Lipschitz constant."""

    fn: Callable[[ComplexArray], ComplexArray]
    lipschitz: float
    kind: str = "custom"

    def __call__(self, traj: ComplexArray) -> ComplexArray:
        return np.asarray(self.fn(traj), dtype=complex)

    @classmethod
    def zero(cls) -> "TrajectoryMap":
        return cls(lambda x: np.zeros(x.shape[1], dtype=complex), 0.0, "zero")

    @classmethod
    def constant(cls, c: ArrayLike) -> "TrajectoryMap":
        c = as_vector(c)
        return cls(lambda x: c.copy(), 0.0, "constant")

    @classmethod
    def point(cls, eps: float, index: int) -> "TrajectoryMap":
        """``eps * x(t_index)``."""
        return cls(lambda x: eps * x[index], abs(eps), "point")

    @classmethod
    def mean(cls, eps: float) -> "TrajectoryMap":
        """``eps`` times the average over grid nodes."""
        return cls(lambda x: eps * x.mean(axis=0), abs(eps), "mean")


@dataclass(frozen=True)
class NonlocalSpec:
    """Nonlocal initial data ``x(0) + g(x) = x0`` and ``x'(0) + h(x) = y0``."""

    g: TrajectoryMap = field(default_factory=TrajectoryMap.zero)
    h: TrajectoryMap = field(default_factory=TrajectoryMap.zero)

    @property
    def L_g(self) -> float:
        return self.g.lipschitz

    @property
    def L_h(self) -> float:
        return self.h.lipschitz

    def check_lipschitz(self, nodes: int, dim: int, seed: int = 0, samples: int = 16) -> None:
        rng = np.random.default_rng(seed)
        for name, m in (("g", self.g), ("h", self.h)):
            for _ in range(samples):
                x = rng.standard_normal((nodes, dim)) + 1j * rng.standard_normal((nodes, dim))
                y = rng.standard_normal((nodes, dim)) + 1j * rng.standard_normal((nodes, dim))
                quotient = np.linalg.norm(m(x) - m(y)) / sup_norm(x - y)
                if quotient > m.lipschitz * (1 + 1e-12) + 1e-12:
                    raise DiagnosticError(f"nonlocal map {name} exceeds its Lipschitz constant {m.lipschitz}")


@dataclass(frozen=True)
class StateMap:
    """Bounded map ``X -> X`` used for impulse jumps."""

    fn: Callable[[ComplexArray], ComplexArray]
    bound: float
    kind: str = "custom"

    def __call__(self, x: ComplexArray) -> ComplexArray:
        return np.asarray(self.fn(x), dtype=complex)

    @classmethod
    def zero(cls) -> "StateMap":
        return cls(lambda x: np.zeros_like(x), 0.0, "zero")

    @classmethod
    def constant(cls, c: ArrayLike) -> "StateMap":
        c = as_vector(c)
        return cls(lambda x: c.copy(), float(np.linalg.norm(c)), "constant")

    @classmethod
    def saturating(cls, gain: float) -> "StateMap":
        """``gain * x / (1 + ||x||)``, bounded by ``|gain|``."""
        return cls(lambda x: gain * x / (1.0 + np.linalg.norm(x)), abs(gain), "saturating")


@dataclass(frozen=True)
class ImpulseSpec:
    """Jumps ``x(t_i+) - x(t_i-) = I_i(x(t_i-))`` and ``x'(t_i+) - x'(t_i-) = J_i(x(t_i-))``."""

    times: tuple[float, ...]
    jump_pos: tuple[StateMap, ...]
    jump_vel: tuple[StateMap, ...]

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.jump_pos) == len(self.jump_vel)):
            raise ValueError("impulse times and jump maps must have equal lengths")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("impulse times must be strictly increasing")

    @classmethod
    def none(cls) -> "ImpulseSpec":
        return cls((), (), ())

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple((i.bound, j.bound) for i, j in zip(self.jump_pos, self.jump_vel))

    def indices(self, grid: TimeGrid) -> tuple[int, ...]:
        idx = tuple(grid.index(t) for t in self.times)
        if any(k <= 0 or k >= grid.steps for k in idx):
            raise ValueError(f"impulse times must lie strictly inside (0, T): {self.times}")
        return idx


@dataclass(frozen=True, eq=False)
class ControlProblem:
    kernel: EvolutionKernel
    B: ComplexArray
    inclusion: SetValuedMap
    x0: ComplexArray
    y0: ComplexArray
    x_target: ComplexArray
    a: float
    tol: float = 1e-9
    max_iter: int = 200
    relaxation: float = 1.0
    gramian_cache: Gramian | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        dim = self.kernel.modes.dim
        object.__setattr__(self, "B", as_operator(self.B, dim))
        for name in ("x0", "y0", "x_target"):
            object.__setattr__(self, name, as_vector(getattr(self, name), dim))
        if not self.a > 0:
            raise ValueError(f"regularization parameter must be positive, got {self.a}")
        if not 0 < self.relaxation <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation}")

    @property
    def grid(self) -> TimeGrid:
        return self.kernel.grid

    @property
    def gramian(self) -> Gramian:
        if self.gramian_cache is None:
            object.__setattr__(self, "gramian_cache", assemble_gramian(self.kernel, self.B))
        return self.gramian_cache

    @property
    def M_B(self) -> float:
        return operator_norm(self.B)

    def with_regularization(self, a: float) -> "ControlProblem":
        return replace(self, a=a, gramian_cache=self.gramian)

    def contraction(self) -> float:
        gamma = gamma_from_growth(self.inclusion.growth, self.grid.T)
        return contraction_constant(self.kernel.Ntilde, gamma, self.M_B, self.a, self.grid.T)


@dataclass(frozen=True)
class ImpulseRecord:
    index: int
    time: float
    pos_minus: ComplexArray
    pos_plus: ComplexArray
    vel_minus: ComplexArray
    vel_plus: ComplexArray
    jump_pos: ComplexArray
    jump_vel: ComplexArray


@dataclass(frozen=True, eq=False)
class MildSolution:
    """Result of a fixed-point solve.

    ``states`` holds ``x(t_j)`` with the left limit at impulse nodes; the
    right limits are in ``impulses``.  ``iterations`` counts updates made
    before the fixed-point check passed.
    """

    times: np.ndarray
    states: ComplexArray
    velocities: ComplexArray
    controls: ComplexArray
    selections: ComplexArray
    terminal_error: float
    iterations: int
    residual_history: tuple[float, ...]
    converged: bool
    contraction_constant: float
    impulses: tuple[ImpulseRecord, ...] = ()

    @property
    def status(self) -> str:
        return "converged" if self.converged else "not-converged"

    @property
    def residual_ratio(self) -> float:
        """Largest ratio of consecutive residuals (0 for fewer than two)."""
        h = self.residual_history
        ratios = [b / a for a, b in zip(h, h[1:]) if a > 0]
        return max(ratios, default=0.0)


def gamma_from_growth(growth: tuple[float, float], T: float) -> float:
    """Limit of ``int_0^t (c1 + c2 r) ds / r`` as ``r -> inf``, maximized over ``t <= T``."""
    c1, c2 = growth
    if c1 < 0 or c2 < 0:
        raise ValueError("growth constants must be nonnegative")
    return c2 * T


def contraction_constant(Ntilde: float, gamma: float, M_B: float, a: float, T: float) -> float:
    if not a > 0:
        raise ValueError("regularization parameter must be positive")
    return Ntilde * gamma * (1.0 + Ntilde**2 * M_B**2 * T / a)


def _volterra(table: ComplexArray, g: ComplexArray, h: float) -> ComplexArray:
    """Trapezoid ``int_0^{t_j} K(t_j, s) g(s) ds`` for every node ``j``.

    ``table`` is ``(dim, M+1, M+1)`` and zero above the diagonal; ``g`` is
    ``(M+1, dim)``.  Returns ``(M+1, dim)``.
    """
    full = np.matmul(table, g.T[:, :, None])[..., 0]
    nodes = np.arange(table.shape[1])
    ends = table[:, :, 0] * g[0][:, None] + table[:, nodes, nodes] * g.T
    return (h * full - 0.5 * h * ends).T


def _solve(
    problem: ControlProblem,
    strategy: SelectionStrategy,
    nonlocal_spec: NonlocalSpec | None = None,
    impulses: ImpulseSpec | None = None,
) -> MildSolution:
    kernel, grid, F = problem.kernel, problem.grid, problem.inclusion
    M, dim, h = grid.steps, kernel.modes.dim, grid.h
    t = grid.nodes
    x0, y0, B = problem.x0, problem.y0, problem.B
    gram = problem.gramian
    C0, S0 = kernel.r[:, :, 0].T, kernel.q[:, :, 0].T
    dC0, dS0 = kernel.dr[:, :, 0].T, kernel.dq[:, :, 0].T
    directions = strategy.directions(M + 1, dim)
    imp = impulses if impulses is not None and impulses.times else None
    imp_idx = imp.indices(grid) if imp is not None else ()

    kappa = problem.contraction()
    if kappa >= 1:
        log.warning("contraction constant %.4g >= 1; Picard iteration may not converge", kappa)

    def sweep(x: ComplexArray):
        xi, eta = x0, y0
        if nonlocal_spec is not None:
            xi = x0 - nonlocal_spec.g(x)
            eta = y0 - nonlocal_spec.h(x)
        F.check_envelope(t, x)
        f = strategy.select(F, t, x, directions)
        jumps = []
        p = problem.x_target - kernel.r[:, M, 0] * xi - kernel.q[:, M, 0] * eta - terminal_integral(kernel, f)
        for i, k in enumerate(imp_idx):
            dI, dJ = imp.jump_pos[i](x[k]), imp.jump_vel[i](x[k])
            if np.linalg.norm(dI) > imp.jump_pos[i].bound * (1 + 1e-12) + 1e-15 or np.linalg.norm(
                dJ
            ) > imp.jump_vel[i].bound * (1 + 1e-12) + 1e-15:
                raise DiagnosticError(f"impulse {i} exceeds its declared bound")
            jumps.append((k, dI, dJ))
            p = p - (kernel.r[:, M, k] * dI + kernel.q[:, M, k] * dJ)
        u = control_trajectory(kernel, B, gram, problem.a, p)
        forcing = f + u @ B.T
        gx = C0 * xi + S0 * eta + _volterra(kernel.q, forcing, h)
        gv = dC0 * xi + dS0 * eta + _volterra(kernel.dq, forcing, h)
        for k, dI, dJ in jumps:
            gx[k + 1 :] += kernel.r[:, k + 1 :, k].T * dI + kernel.q[:, k + 1 :, k].T * dJ
            gv[k + 1 :] += kernel.dr[:, k + 1 :, k].T * dI + kernel.dq[:, k + 1 :, k].T * dJ
        return gx, gv, f, u, jumps

    x = C0 * x0 + S0 * y0
    v = dC0 * x0 + dS0 * y0
    history: list[float] = []
    converged = False
    omega = problem.relaxation
    for _ in range(problem.max_iter):
        gx, gv, f, u, jumps = sweep(x)
        res = sup_norm(gx - x)
        if not np.isfinite(res):
            raise DiagnosticError("Picard iteration produced non-finite states")
        history.append(res)
        if res < problem.tol:
            converged = True
            break
        if omega == 1.0:
            x, v = gx, gv
        else:
            x = (1 - omega) * x + omega * gx
            v = (1 - omega) * v + omega * gv
    if not converged:
        log.warning("Picard iteration did not converge in %d sweeps (last residual %.3e)", problem.max_iter, history[-1])

    records = tuple(
        ImpulseRecord(k, float(t[k]), x[k], x[k] + dI, v[k], v[k] + dJ, dI, dJ) for k, dI, dJ in jumps
    )
    return MildSolution(
        times=t,
        states=x,
        velocities=v,
        controls=u,
        selections=f,
        terminal_error=float(np.linalg.norm(x[M] - problem.x_target)),
        iterations=len(history) - 1 if converged else len(history),
        residual_history=tuple(history),
        converged=converged,
        contraction_constant=kappa,
        impulses=records,
    )


def picard_solve(problem: ControlProblem, strategy: SelectionStrategy | None = None) -> MildSolution:
    return _solve(problem, strategy or SelectionStrategy())


def nonlocal_solve(problem: ControlProblem, nl: NonlocalSpec, strategy: SelectionStrategy | None = None) -> MildSolution:
    return _solve(problem, strategy or SelectionStrategy(), nonlocal_spec=nl)


def impulsive_solve(
    problem: ControlProblem,
    nl: NonlocalSpec | None,
    imp: ImpulseSpec,
    strategy: SelectionStrategy | None = None,
) -> MildSolution:
    imp.indices(problem.grid)  # reject off-grid times before any work
    return _solve(problem, strategy or SelectionStrategy(), nonlocal_spec=nl or NonlocalSpec(), impulses=imp)


@dataclass(frozen=True)
class SweepRow:
    a: float
    terminal_error: float
    iterations: int
    converged: bool
    contraction_constant: float


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple[SweepRow, ...]

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.terminal_error for r in self.rows])

    @property
    def non_decay(self) -> bool:
        """Final terminal error not below the first (flag is off for a single row)."""
        e = self.errors
        return len(e) > 1 and non_decay(e[0], e[-1])

    @property
    def nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.errors) <= 0))

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.errors) < 0))


def sweep_regularization(
    problem: ControlProblem,
    a_list: Sequence[float],
    strategy: SelectionStrategy | None = None,
    nonlocal_spec: NonlocalSpec | None = None,
    impulses: ImpulseSpec | None = None,
) -> ConvergenceTable:
    """Terminal error of the fixed point for each regularization value."""
    a_values = _check_decreasing(a_list)
    if not problem.inclusion.is_bounded:
        raise ValueError("regularization sweep requires a bounded inclusion (c2 = 0)")
    strategy = strategy or SelectionStrategy()
    rows = []
    for a in a_values:
        sol = _solve(problem.with_regularization(a), strategy, nonlocal_spec, impulses)
        rows.append(SweepRow(a, sol.terminal_error, sol.iterations, sol.converged, sol.contraction_constant))
    return ConvergenceTable(tuple(rows))

"""Controllability Gramian, regularized resolvent and the steering control.

The Gramian ``Y = int_0^T S(T,s) B B* S(T,s)* ds`` is assembled with the
composite trapezoid rule on the kernel grid.  For ``a > 0`` the control

    u(t) = B* S(T,t)* (a I + Y)^{-1} p

drives the linear part of the system to ``x_target - a (aI + Y)^{-1} p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike

from .errors import DiagnosticError
from .families import EvolutionKernel, TimeGrid
from .spectral import ComplexArray, as_operator, as_vector


@dataclass(frozen=True, eq=False)
class Gramian:
    matrix: ComplexArray
    eigenvalues: np.ndarray = field(repr=False)
    quadrature_steps: int = 0

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, matrix: ArrayLike, quadrature_steps: int = 0) -> "Gramian":
        m = as_operator(matrix)
        m = 0.5 * (m + m.conj().T)
        return cls(m, np.linalg.eigvalsh(m), quadrature_steps)


def assemble_gramian(kernel: EvolutionKernel, B: ArrayLike, grid: TimeGrid | None = None) -> Gramian:
    grid = grid or kernel.grid
    if grid != kernel.grid:
        raise ValueError("Gramian grid must be the kernel grid")
    B = as_operator(B, kernel.modes.dim)
    terminal = kernel.q[:, grid.steps, :]  # q_n(T, t_k), shape (dim, M+1)
    if not np.all(np.isfinite(terminal)):
        raise DiagnosticError("non-finite Gramian integrand")
    w = grid.trapezoid_weights()
    # entry (m, n): (BB*)_{mn} * sum_k w_k q_m(T, s_k) conj(q_n(T, s_k))
    outer = (terminal * w) @ terminal.conj().T
    return Gramian.from_matrix((B @ B.conj().T) * outer, grid.steps)


def _factor(g: Gramian, a: float):
    if not a > 0:
        raise ValueError(f"regularization parameter must be positive, got {a}")
    return sla.cho_factor(a * np.eye(g.dim) + g.matrix, lower=True)


def resolvent_apply(g: Gramian, a: float, v: ArrayLike) -> ComplexArray:
    """Solve ``(a I + Y) w = v`` with a Cholesky factorization."""
    v = as_vector(v, g.dim)
    return sla.cho_solve(_factor(g, a), v)


def linear_terminal_error(g: Gramian, a: float, p: ArrayLike) -> float:
    """Terminal miss ``||a R(a, Y) p||`` of the linear closed loop."""
    return float(np.linalg.norm(a * resolvent_apply(g, a, p)))


def residual_target(
    kernel: EvolutionKernel,
    x0: ArrayLike,
    y0: ArrayLike,
    x_target: ArrayLike,
    f_traj: ArrayLike | None = None,
) -> ComplexArray:
    """``p = x_T - C(T,0) x0 - S(T,0) y0 - int_0^T S(T,s) f(s) ds``."""
    dim, M = kernel.modes.dim, kernel.grid.steps
    x0, y0 = as_vector(x0, dim), as_vector(y0, dim)
    p = as_vector(x_target, dim) - kernel.r[:, M, 0] * x0 - kernel.q[:, M, 0] * y0
    if f_traj is not None:
        f = np.asarray(f_traj, dtype=complex)
        if f.shape != (M + 1, dim):
            raise ValueError(f"forcing must have shape {(M + 1, dim)}, got {f.shape}")
        p = p - terminal_integral(kernel, f)
    return p


def terminal_integral(kernel: EvolutionKernel, f: ComplexArray) -> ComplexArray:
    """Trapezoid ``int_0^T S(T,s) f(s) ds`` for a ``(M+1, dim)`` trajectory."""
    M = kernel.grid.steps
    w = kernel.grid.trapezoid_weights()
    return np.einsum("nk,kn->n", kernel.q[:, M, :] * w, f)


def control_trajectory(kernel: EvolutionKernel, B: ArrayLike, g: Gramian, a: float, p_hat: ArrayLike) -> ComplexArray:
    """``u(t_j) = B* S(T,t_j)* R(a,Y) p_hat`` at every node, shape ``(M+1, dim)``."""
    B = as_operator(B, kernel.modes.dim)
    w = resolvent_apply(g, a, p_hat)
    steered = np.conj(kernel.q[:, kernel.grid.steps, :]).T * w
    return steered @ B.conj()


def control_law(kernel: EvolutionKernel, B: ArrayLike, g: Gramian, a: float, p_hat: ArrayLike, t: float) -> ComplexArray:
    k = kernel.grid.index(t)
    B = as_operator(B, kernel.modes.dim)
    w = resolvent_apply(g, a, p_hat)
    return B.conj().T @ (np.conj(kernel.q[:, kernel.grid.steps, k]) * w)


@dataclass(frozen=True)
class DecayTable:
    """``||a R(a, Y) v||`` per regularization value and probe."""

    a_values: tuple[float, ...]
    values: np.ndarray  # (len(a_values), n_probes)
    non_decay: tuple[bool, ...]
    lambda_min: float

    def rows(self) -> list[tuple[float, int, float]]:
        return [
            (a, p, float(self.values[i, p]))
            for i, a in enumerate(self.a_values)
            for p in range(self.values.shape[1])
        ]

    @property
    def h0_holds(self) -> bool:
        return not any(self.non_decay)


def _check_decreasing(a_list: Sequence[float]) -> tuple[float, ...]:
    a = tuple(float(v) for v in a_list)
    if not a or any(v <= 0 for v in a):
        raise ValueError("a_list must be non-empty and positive")
    if any(y >= x for x, y in zip(a, a[1:])):
        raise ValueError("a_list must be strictly decreasing")
    return a


def non_decay(first: float, last: float, rtol: float = 1e-9) -> bool:
    """True when ``last`` is not meaningfully below a positive ``first``."""
    return first > 0 and last >= first * (1.0 - rtol)


def h0_diagnostic(g: Gramian, a_list: Sequence[float], probes: Sequence[ArrayLike]) -> DecayTable:
    """Probe ``a R(a, Y) -> 0`` strongly as ``a`` decreases, on the truncated model."""
    a_values = _check_decreasing(a_list)
    vs = [as_vector(v, g.dim) for v in probes]
    vals = np.array([[linear_terminal_error(g, a, v) for v in vs] for a in a_values])
    flags = tuple(non_decay(vals[0, i], vals[-1, i]) for i in range(len(vs)))
    return DecayTable(a_values, vals, flags, g.lambda_min)

"""Brute-force reference computations.

The oracle integrates the first-order form ``pos' = vel``,
``vel' = A(t) pos + forcing(t)`` directly, with RK4 at four times the main
grid resolution and impulse resets applied in place.  It shares no code
with the kernel tabulation, the Gramian quadrature or the Picard solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.interpolate import CubicSpline

from .errors import DiagnosticError
from .families import DampingSpec, EvolutionKernel, TimeGrid
from .inclusion import ImpulseSpec
from .spectral import ComplexArray, ModeSet, as_vector
from .synthesis import Gramian

BLOWUP = 1e12


@dataclass(frozen=True)
class DenseTrajectory:
    """Positions and velocities at the main-grid nodes.

    Rows before ``start`` are NaN.  At impulse nodes the rows hold the
    pre-impulse (left) values; ``jumps`` lists ``(node, pos_plus, vel_plus)``.
    """

    pos: ComplexArray
    vel: ComplexArray
    start: int = 0
    jumps: tuple[tuple[int, ComplexArray, ComplexArray], ...] = ()


def _forcing_samples(forcing, grid: TimeGrid, dim: int, lattice: np.ndarray) -> np.ndarray | None:
    """Forcing on the fine time lattice, shape ``lattice.shape + (dim,)``."""
    if forcing is None:
        return None
    if callable(forcing):
        flat = np.array([np.asarray(forcing(t), dtype=complex) for t in lattice.ravel()])
        return flat.reshape(lattice.shape + (dim,))
    samples = np.asarray(forcing, dtype=complex)
    if samples.shape != (grid.steps + 1, dim):
        raise ValueError(f"forcing samples must have shape {(grid.steps + 1, dim)}, got {samples.shape}")
    return CubicSpline(grid.nodes, samples, axis=0)(lattice)


def dense_integrate(
    modes: ModeSet,
    damping: DampingSpec,
    forcing,
    x0: ArrayLike,
    y0: ArrayLike,
    grid: TimeGrid,
    impulses: ImpulseSpec | None = None,
    *,
    start: int = 0,
    refine: int = 4,
) -> DenseTrajectory:
    """Integrate ``x'' = A(t) x + forcing`` from node ``start`` with data ``(x0, y0)``.

    ``forcing`` is ``None``, a callable ``t -> (dim,)``, or node samples of
    shape ``(M+1, dim)`` (interpolated with a cubic spline).  ``x0`` and
    ``y0`` may carry leading batch axes; each row is integrated independently.
    """
    dim, M = modes.dim, grid.steps
    n = modes.indices
    pos = np.array(x0, dtype=complex)
    vel = np.array(y0, dtype=complex)
    if pos.shape[-1:] != (dim,) or vel.shape != pos.shape:
        raise ValueError(f"initial data must end in dimension {dim} and match in shape")
    dt = grid.h / refine
    # half-step lattice: row j holds t_j + i dt / 2 for i = 0 .. 2 refine
    lattice = grid.nodes[:-1, None] + 0.5 * dt * np.arange(2 * refine + 1)
    coef = -(n**2) + 1j * n * damping(lattice)[..., None]
    push = _forcing_samples(forcing, grid, dim, lattice)
    jump_at = {}
    if impulses is not None:
        for i, k in enumerate(impulses.indices(grid)):
            jump_at[k] = (impulses.jump_pos[i], impulses.jump_vel[i])

    def accel(j: int, i: int, x: ComplexArray) -> ComplexArray:
        out = coef[j, i] * x
        return out if push is None else out + push[j, i]

    out_pos = np.full((M + 1,) + pos.shape, np.nan, dtype=complex)
    out_vel = np.full_like(out_pos, np.nan)
    jumps = []
    for j in range(start, M + 1):
        out_pos[j], out_vel[j] = pos, vel
        if j in jump_at and j > start:
            I, J = jump_at[j]
            before = pos.copy()
            pos = pos + I(before)
            vel = vel + J(before)
            jumps.append((j, pos.copy(), vel.copy()))
        if j == M:
            break
        for i in range(0, 2 * refine, 2):
            k1x, k1v = vel, accel(j, i, pos)
            k2x, k2v = vel + 0.5 * dt * k1v, accel(j, i + 1, pos + 0.5 * dt * k1x)
            k3x, k3v = vel + 0.5 * dt * k2v, accel(j, i + 1, pos + 0.5 * dt * k2x)
            k4x, k4v = vel + dt * k3v, accel(j, i + 2, pos + dt * k3x)
            pos = pos + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            vel = vel + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not np.all(np.isfinite(pos)) or np.max(np.abs(pos)) > BLOWUP:
            raise DiagnosticError(f"dense integration blew up near t={grid.nodes[j + 1]:.6g}")
    return DenseTrajectory(out_pos, out_vel, start, tuple(jumps))


def closed_form_kernel(n: int, t: float, s: float) -> tuple[float, float]:
    """Undamped mode kernels ``(sin(n (t-s)) / n, cos(n (t-s)))``."""
    return math.sin(n * (t - s)) / n, math.cos(n * (t - s))


def quadrature_gramian_reference(modes: ModeSet, T: float, steps: int = 0) -> Gramian:
    """Analytic Gramian for ``B = I`` and zero damping."""
    n = modes.indices
    diag = T / (2 * n**2) - np.sin(2 * n * T) / (4 * n**3)
    return Gramian.from_matrix(np.diag(diag), steps)


def kernel_agreement(kernel: EvolutionKernel, sources: int = 4) -> float:
    """Worst relative sup-norm gap between kernel columns and dense integration.

    For each sampled source node ``s`` both ``S(., s)`` (unit velocity) and
    ``C(., s)`` (unit position) are compared, per mode, over ``t >= s``.
    """
    M, dim = kernel.grid.steps, kernel.modes.dim
    # batch row 0: unit velocity (sine kernel), row 1: unit position (cosine kernel)
    x0 = np.stack([np.zeros(dim), np.ones(dim)])
    y0 = x0[::-1].copy()
    worst = 0.0
    for k in np.unique(np.linspace(0, M - 2, sources).astype(int)):
        ref = dense_integrate(kernel.modes, kernel.damping, None, x0, y0, kernel.grid, start=int(k)).pos[k:]
        for row, table in enumerate((kernel.q, kernel.r)):
            got = table[:, k:, k].T
            rel = np.abs(got - ref[:, row]).max(axis=0) / np.abs(ref[:, row]).max(axis=0)
            worst = max(worst, float(rel.max()))
    return worst

"""Finite spectral model of the state space.

States are complex coefficient vectors over an ordered set of positive
mode indices ``n``; the generator acts diagonally with eigenvalue ``-n**2``.
Trajectories are stored as ``(steps + 1, dim)`` arrays, one row per grid node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

ComplexArray = NDArray[np.complex128]


@dataclass(frozen=True)
class ModeSet:
    """Strictly increasing positive mode indices."""

    modes: tuple[int, ...]

    def __post_init__(self) -> None:
        modes = tuple(int(n) for n in self.modes)
        if not modes:
            raise ValueError("mode set must contain at least one mode")
        if any(n < 1 for n in modes):
            raise ValueError(f"mode indices must be >= 1, got {modes}")
        if any(b <= a for a, b in zip(modes, modes[1:])):
            raise ValueError(f"mode indices must be strictly increasing, got {modes}")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def first(cls, count: int) -> "ModeSet":
        """Modes ``1..count``."""
        return cls(tuple(range(1, count + 1)))

    @property
    def dim(self) -> int:
        return len(self.modes)

    @property
    def indices(self) -> NDArray[np.float64]:
        return np.asarray(self.modes, dtype=float)

    def __len__(self) -> int:
        return len(self.modes)

    def basis(self, n: int) -> ComplexArray:
        """Unit coefficient vector for mode index ``n`` (not position)."""
        e = np.zeros(self.dim, dtype=complex)
        e[self.modes.index(n)] = 1.0
        return e

    def zeros(self) -> ComplexArray:
        return np.zeros(self.dim, dtype=complex)


def as_vector(x: ArrayLike, dim: int | None = None) -> ComplexArray:
    """Coerce to a finite complex coefficient vector, checking its length."""
    v = np.asarray(x, dtype=complex)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D coefficient vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim} coefficients, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("coefficient vector has non-finite entries")
    return v


def as_operator(m: ArrayLike, dim: int | None = None) -> ComplexArray:
    """Coerce to a square finite complex matrix."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be a square matrix, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ValueError(f"operator dimension {a.shape[0]} does not match {dim} modes")
    if not np.all(np.isfinite(a)):
        raise ValueError("operator has non-finite entries")
    return a


def inner_product(u: ArrayLike, v: ArrayLike) -> complex:
    """l2 pairing, conjugate-linear in the first argument."""
    u = as_vector(u)
    v = as_vector(v, u.shape[0])
    return complex(np.vdot(u, v))


def norm(x: ArrayLike) -> float:
    return float(np.linalg.norm(as_vector(x)))


def apply_A(x: ArrayLike, modes: ModeSet) -> ComplexArray:
    """Unperturbed generator: multiply coefficient ``n`` by ``-n**2``."""
    x = as_vector(x, modes.dim)
    return -(modes.indices**2) * x


def generator_matrix(modes: ModeSet) -> ComplexArray:
    return np.diag(-(modes.indices**2)).astype(complex)


def adjoint(m: ArrayLike) -> ComplexArray:
    return as_operator(m).conj().T


def operator_norm(m: ArrayLike) -> float:
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(as_operator(m), 2))


def sup_norm(traj: NDArray) -> float:
    """Sup over grid nodes of the l2 norm of a ``(nodes, dim)`` trajectory."""
    traj = np.asarray(traj)
    return float(np.max(np.linalg.norm(traj, axis=-1))) if traj.size else 0.0


def coefficients(values: Sequence[complex] | dict[int, complex], modes: ModeSet) -> ComplexArray:
    """Full coefficient vector from a dense list or a sparse ``{mode: value}`` mapping."""
    if isinstance(values, dict):
        out = modes.zeros()
        for n, val in values.items():
            if int(n) not in modes.modes:
                raise ValueError(f"mode {n} is not in the mode set")
            out[modes.modes.index(int(n))] = complex(val)
        return out
    return as_vector(values, modes.dim)

"""Hamiltonian system interface with the standard symplectic structure.

A model exposes the energy H, its gradient, the vector field X_H, the
Jacobian DX_H and the bilinear action of the second derivative of X_H.
All evaluations are vectorized over leading batch axes; the integrator
relies on every method being written with elementwise numpy arithmetic
only, so that results per phase-space point are independent of how points
are batched together.

The structure kept here is the standard one on R^{2n}:

    Omega0 = [[0, -I], [I, 0]],   a0(z) = (1/2) [[0, I], [-I, 0]] z,
    J0 = Omega0,                  G0 = -Omega0 J0 = I.

The interface carries z-dependent signatures so non-standard structures
can be added later without touching the algorithms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np


def standard_omega(n: int) -> np.ndarray:
    O = np.zeros((2 * n, 2 * n))
    O[:n, n:] = -np.eye(n)
    O[n:, :n] = np.eye(n)
    return O


def standard_action_jacobian(n: int) -> np.ndarray:
    # Da0 with a0(z) = (1/2) [[0, I], [-I, 0]] z; Da0^T - Da0 = Omega0 exactly.
    M = np.zeros((2 * n, 2 * n))
    M[:n, n:] = 0.5 * np.eye(n)
    M[n:, :n] = -0.5 * np.eye(n)
    return M


@dataclass(frozen=True)
class SymplecticStructure:
    """Matrix data of an exact symplectic structure with compatible J, G."""

    n: int
    omega0: np.ndarray
    action_jacobian: np.ndarray  # constant Da for the standard action form
    almost_complex: np.ndarray
    metric: np.ndarray

    @classmethod
    def standard(cls, n: int) -> "SymplecticStructure":
        O = standard_omega(n)
        J = standard_omega(n)
        G = -O @ J
        return cls(n=n, omega0=O, action_jacobian=standard_action_jacobian(n),
                   almost_complex=J, metric=G)

    def omega(self, z: np.ndarray) -> np.ndarray:
        """Omega at a point; constant for the standard structure."""
        return self.omega0

    def action(self, z: np.ndarray) -> np.ndarray:
        """a(z) with a(z)^T the action form, shape (..., 2n)."""
        return z @ self.action_jacobian.T

    def j(self, z: np.ndarray) -> np.ndarray:
        return self.almost_complex

    def g(self, z: np.ndarray) -> np.ndarray:
        return self.metric


@runtime_checkable
class HamiltonianModel(Protocol):
    """Protocol for autonomous Hamiltonian systems used by the algorithms."""

    n: int
    structure: SymplecticStructure

    def hamiltonian(self, z: np.ndarray) -> np.ndarray: ...

    def gradient(self, z: np.ndarray) -> np.ndarray: ...

    def vector_field(self, z: np.ndarray) -> np.ndarray: ...

    def jacobian(self, z: np.ndarray) -> np.ndarray: ...

    def jacobian_columns(self, z: np.ndarray, cols: np.ndarray) -> np.ndarray: ...

    def hessian_action(self, z: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray: ...

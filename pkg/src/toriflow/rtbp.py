"""Spatial circular Restricted Three-Body Problem in rotating coordinates.

State z = (x1, x2, x3, p1, p2, p3) with momenta conjugate to the rotating
frame, so xdot1 = p1 + x2, xdot2 = p2 - x1, xdot3 = p3.  The Hamiltonian is

    H = |p|^2/2 - x1 p2 + x2 p1 - (1-mu)/r1 - mu/r2,

with the primaries of mass 1-mu and mu fixed at (mu,0,0) and (mu-1,0,0).

All methods are vectorized over leading axes and written with elementwise
arithmetic only (no matmul in the derivative applies); this keeps results
per point bitwise independent of batching, which the flow module relies on
for its determinism guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalError, SingularityError
from .model import SymplecticStructure

__all__ = ["RtbpParams", "RtbpModel", "find_l1", "linear_spectrum_at", "LinearSpectrum"]

MU_EARTH_MOON = 1.215058560962404e-2


@dataclass(frozen=True)
class RtbpParams:
    """Mass ratio mu = m2/(m1+m2), 0 < mu < 1/2."""

    mu: float
    singularity_guard: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mass ratio must lie in (0, 1/2), got {self.mu}")


def _split(z):
    z = np.asarray(z, dtype=float)
    return (z[..., 0], z[..., 1], z[..., 2], z[..., 3], z[..., 4], z[..., 5])


def _body_distances(mu, x1, x2, x3):
    yz2 = x2 * x2 + x3 * x3
    d1 = x1 - mu
    d2 = x1 - mu + 1.0
    r1 = np.sqrt(d1 * d1 + yz2)
    r2 = np.sqrt(d2 * d2 + yz2)
    return d1, d2, r1, r2


@dataclass(frozen=True)
class RtbpModel:
    """Concrete spatial RTBP with derivatives up to second order."""

    params: RtbpParams
    n: int = 3
    structure: SymplecticStructure = field(default_factory=lambda: SymplecticStructure.standard(3))

    @property
    def mu(self) -> float:
        return self.params.mu

    def _guarded_distances(self, x1, x2, x3):
        d1, d2, r1, r2 = _body_distances(self.mu, x1, x2, x3)
        guard = self.params.singularity_guard
        if np.any(r1 < guard) or np.any(r2 < guard):
            raise SingularityError(
                f"evaluation within {guard} of a primary (min r1={np.min(r1):.3e},"
                f" min r2={np.min(r2):.3e})")
        return d1, d2, r1, r2

    def hamiltonian(self, z) -> np.ndarray:
        x1, x2, x3, p1, p2, p3 = _split(z)
        d1, d2, r1, r2 = self._guarded_distances(x1, x2, x3)
        mu = self.mu
        return (0.5 * (p1 * p1 + p2 * p2 + p3 * p3)
                - x1 * p2 + x2 * p1 - (1.0 - mu) / r1 - mu / r2)

    def gradient(self, z) -> np.ndarray:
        """DH(z)^T, shape (..., 6)."""
        x1, x2, x3, p1, p2, p3 = _split(z)
        d1, d2, r1, r2 = self._guarded_distances(x1, x2, x3)
        mu = self.mu
        c1 = (1.0 - mu) / (r1 * r1 * r1)
        c2 = mu / (r2 * r2 * r2)
        out = np.empty(np.broadcast(x1, p1).shape + (6,))
        out[..., 0] = -p2 + c1 * d1 + c2 * d2
        out[..., 1] = p1 + (c1 + c2) * x2
        out[..., 2] = (c1 + c2) * x3
        out[..., 3] = p1 + x2
        out[..., 4] = p2 - x1
        out[..., 5] = p3
        return out

    def vector_field(self, z) -> np.ndarray:
        """X_H(z) = Omega0^{-1} DH(z)^T, shape (..., 6)."""
        x1, x2, x3, p1, p2, p3 = _split(z)
        d1, d2, r1, r2 = self._guarded_distances(x1, x2, x3)
        mu = self.mu
        c1 = (1.0 - mu) / (r1 * r1 * r1)
        c2 = mu / (r2 * r2 * r2)
        out = np.empty(np.broadcast(x1, p1).shape + (6,))
        out[..., 0] = p1 + x2
        out[..., 1] = p2 - x1
        out[..., 2] = p3
        out[..., 3] = p2 - c1 * d1 - c2 * d2
        out[..., 4] = -p1 - (c1 + c2) * x2
        out[..., 5] = -(c1 + c2) * x3
        return out

    def _gravity_hessian(self, x1, x2, x3):
        """The six independent entries of Hess V(x), V the gravity potential."""
        d1, d2, r1, r2 = self._guarded_distances(x1, x2, x3)
        mu = self.mu
        c1 = (1.0 - mu) / (r1 * r1 * r1)
        c2 = mu / (r2 * r2 * r2)
        q1 = 3.0 * (1.0 - mu) / (r1 * r1 * r1 * r1 * r1)
        q2 = 3.0 * mu / (r2 * r2 * r2 * r2 * r2)
        u11 = c1 + c2 - q1 * d1 * d1 - q2 * d2 * d2
        u12 = -(q1 * d1 + q2 * d2) * x2
        u13 = -(q1 * d1 + q2 * d2) * x3
        u22 = c1 + c2 - (q1 + q2) * x2 * x2
        u23 = -(q1 + q2) * x2 * x3
        u33 = c1 + c2 - (q1 + q2) * x3 * x3
        return u11, u12, u13, u22, u23, u33

    def jacobian(self, z) -> np.ndarray:
        """DX_H(z), shape (..., 6, 6)."""
        x1, x2, x3, p1, p2, p3 = _split(z)
        u11, u12, u13, u22, u23, u33 = self._gravity_hessian(x1, x2, x3)
        shape = np.broadcast(x1, p1).shape
        out = np.zeros(shape + (6, 6))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -1.0
        out[..., 0, 3] = 1.0
        out[..., 1, 4] = 1.0
        out[..., 2, 5] = 1.0
        out[..., 3, 0] = -u11
        out[..., 3, 1] = -u12
        out[..., 3, 2] = -u13
        out[..., 4, 0] = -u12
        out[..., 4, 1] = -u22
        out[..., 4, 2] = -u23
        out[..., 5, 0] = -u13
        out[..., 5, 1] = -u23
        out[..., 5, 2] = -u33
        out[..., 3, 4] = 1.0
        out[..., 4, 3] = -1.0
        return out

    def jacobian_columns(self, z, cols) -> np.ndarray:
        """DX_H(z) applied to k column vectors, cols shape (..., k, 6).

        The gravity Hessian is evaluated once and applied per column with
        elementwise products in a fixed order.
        """
        x1, x2, x3, p1, p2, p3 = _split(z)
        u11, u12, u13, u22, u23, u33 = self._gravity_hessian(x1, x2, x3)
        cols = np.asarray(cols, dtype=float)
        out = np.empty_like(cols)
        for j in range(cols.shape[-2]):
            v0 = cols[..., j, 0]
            v1 = cols[..., j, 1]
            v2 = cols[..., j, 2]
            v3 = cols[..., j, 3]
            v4 = cols[..., j, 4]
            v5 = cols[..., j, 5]
            out[..., j, 0] = v1 + v3
            out[..., j, 1] = -v0 + v4
            out[..., j, 2] = v5
            out[..., j, 3] = -(u11 * v0 + u12 * v1 + u13 * v2) + v4
            out[..., j, 4] = -(u12 * v0 + u22 * v1 + u23 * v2) - v3
            out[..., j, 5] = -(u13 * v0 + u23 * v1 + u33 * v2)
        return out

    def hessian_action(self, z, u, v) -> np.ndarray:
        """D^2 X_H(z)[u, v], shape (..., 6); symmetric in (u, v).

        Only the momentum rows are nonzero: they carry minus the third
        derivative of the gravity potential contracted with the position
        parts of u and v.
        """
        x1, x2, x3, p1, p2, p3 = _split(z)
        d1, d2, r1, r2 = self._guarded_distances(x1, x2, x3)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        a0, a1, a2 = u[..., 0], u[..., 1], u[..., 2]
        b0, b1, b2 = v[..., 0], v[..., 1], v[..., 2]
        ab = a0 * b0 + a1 * b1 + a2 * b2
        out = np.zeros(np.broadcast(x1, a0, b0).shape + (6,))
        for nu, dx, r in (((1.0 - self.mu), d1, r1), (self.mu, d2, r2)):
            r5 = r * r * r * r * r
            r7 = r5 * r * r
            da = dx * a0 + x2 * a1 + x3 * a2
            db = dx * b0 + x2 * b1 + x3 * b2
            s5 = 3.0 * nu / r5
            s7 = 15.0 * nu / r7
            # -D^3V[a,b] restricted to this body
            g_factor = s5 * ab - s7 * da * db
            out[..., 3] += g_factor * dx + s5 * (a0 * db + b0 * da)
            out[..., 4] += g_factor * x2 + s5 * (a1 * db + b1 * da)
            out[..., 5] += g_factor * x3 + s5 * (a2 * db + b2 * da)
        return out


def l1_quintic(mu: float, g):
    """Euler quintic whose positive root gives the L1 offset gamma1."""
    return (g ** 5 - (3.0 - mu) * g ** 4 + (3.0 - 2.0 * mu) * g ** 3
            - mu * g ** 2 + 2.0 * mu * g - mu)


def find_l1(params: RtbpParams, tol: float = 1e-15, max_iter: int = 200):
    """Locate L1 between the primaries.

    Returns (x_l1, gamma1) with gamma1 the positive quintic root in (0,1),
    solved by Newton safeguarded with bisection.
    """
    mu = params.mu

    def f(g):
        return l1_quintic(mu, g)

    def df(g):
        return (5.0 * g ** 4 - 4.0 * (3.0 - mu) * g ** 3
                + 3.0 * (3.0 - 2.0 * mu) * g ** 2 - 2.0 * mu * g + 2.0 * mu)

    lo, hi = 0.0, 1.0
    if f(lo) * f(hi) > 0:
        raise NumericalError("quintic does not bracket a root in (0, 1)")
    g = (mu / 3.0) ** (1.0 / 3.0)  # Hill-radius estimate
    if not lo < g < hi:
        g = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fg = f(g)
        if fg == 0.0:
            break
        if fg * f(lo) < 0:
            hi = g
        else:
            lo = g
        d = df(g)
        step = fg / d if d != 0.0 else np.inf
        g_new = g - step
        if not lo < g_new < hi:
            g_new = 0.5 * (lo + hi)
        if abs(g_new - g) < tol * max(1.0, abs(g)):
            g = g_new
            break
        g = g_new
    else:
        raise ConvergenceError("L1 quintic solve did not converge")
    x_l1 = mu - 1.0 + g
    return x_l1, g


def l1_state(params: RtbpParams) -> np.ndarray:
    """Phase-space equilibrium state of L1 (momenta of the rotating frame)."""
    x_l1, _ = find_l1(params)
    return np.array([x_l1, 0.0, 0.0, 0.0, x_l1, 0.0])


@dataclass(frozen=True)
class LinearSpectrum:
    """Spectrum of DX_H at a center x center x saddle equilibrium.

    Frequencies are in cycles per time unit: the eigenvalues of DX_H are
    +-i 2 pi omega_p, +-i 2 pi omega_v and +-lambda_h.  The vertical pair is
    the one whose eigenvector has no in-plane components.
    """

    omega_p: float
    omega_v: float
    lambda_h: float
    v_planar: np.ndarray    # complex eigenvector of +i 2 pi omega_p
    v_vertical: np.ndarray  # complex eigenvector of +i 2 pi omega_v
    v_unstable: np.ndarray  # real eigenvector of +lambda_h
    v_stable: np.ndarray    # real eigenvector of -lambda_h


def linear_spectrum_at(model: RtbpModel, z_eq, tol: float = 1e-9) -> LinearSpectrum:
    """Classify the linear behaviour at an equilibrium of the RTBP."""
    z_eq = np.asarray(z_eq, dtype=float)
    if np.max(np.abs(model.vector_field(z_eq))) > 1e-8:
        raise NumericalError("linear_spectrum_at called away from an equilibrium")
    A = model.jacobian(z_eq)
    vals, vecs = np.linalg.eig(A)

    centers, saddles = [], []
    for i, lam in enumerate(vals):
        if abs(lam.real) < tol * max(1.0, abs(lam)):
            if lam.imag > 0:
                centers.append(i)
        elif abs(lam.imag) < tol * max(1.0, abs(lam)):
            saddles.append(i)
    if len(centers) != 2 or len(saddles) != 2:
        raise NumericalError(
            f"spectrum is not of center x center x saddle type: {vals}")

    def in_plane_weight(v):
        return np.sum(np.abs(v[[0, 1, 3, 4]]) ** 2)

    # vertical pair: eigenvector supported on (x3, p3) only
    centers.sort(key=lambda i: in_plane_weight(vecs[:, i]))
    i_v, i_p = centers[0], centers[1]
    if in_plane_weight(vecs[:, i_v]) > 1e-6:
        raise NumericalError("could not identify a vertical center eigenvector")

    i_u = max(saddles, key=lambda i: vals[i].real)
    i_s = min(saddles, key=lambda i: vals[i].real)

    def real_unit(v):
        v = np.real_if_close(v / np.max(np.abs(v)))
        v = v.real
        return v / np.linalg.norm(v)

    return LinearSpectrum(
        omega_p=float(vals[i_p].imag / (2.0 * np.pi)),
        omega_v=float(vals[i_v].imag / (2.0 * np.pi)),
        lambda_h=float(vals[i_u].real),
        v_planar=vecs[:, i_p].copy(),
        v_vertical=vecs[:, i_v].copy(),
        v_unstable=real_unit(vecs[:, i_u]),
        v_stable=real_unit(vecs[:, i_s]),
    )

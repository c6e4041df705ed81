"""Dynamical and geometric observables of computed tori.

Calabi invariants measure the symplectic widths of the two homotopy
generators of the underlying 2D torus; they shrink to zero as the torus
collapses onto a periodic orbit, which makes them the natural stopping
diagnostics of a family run.  Bundle distances quantify the transversality
of the flow to the generator and the quality of hyperbolicity (stable /
unstable / center splittings).  The globalization samples the full 2D
torus from the multiple-shooting legs for export and seam checks.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .flow import IntegratorConfig, flow_grid, flow_point
from .fourier import CurveMap, derivative_coeffs, eval_coeffs, rotate_coeffs, to_samples
from .frame import AdaptedFrame
from .state import TorusState

__all__ = ["ObservableRecord", "calabi", "calabi_generator_curve", "calabi_2d",
           "bundle_distances", "natural_frequencies", "globalize_surface",
           "observe", "SurfaceData"]


@dataclass(frozen=True)
class ObservableRecord:
    """Scalar observables stored with every persisted torus."""

    T: float
    omega: float
    h: float
    lam: float
    multiplier_unstable: float   # lambda^{-m}
    chi: float                   # (1/T) log of the unstable multiplier
    C1: float
    C2: float
    r1: float
    r2: float
    d_tangent_flow: float        # d(T K, X)
    d_stable_unstable: float
    d_stable_center: float
    d_unstable_center: float
    N: int
    m: int
    generator: str

    def as_dict(self) -> dict:
        return asdict(self)


def calabi(curve, structure) -> float:
    """Calabi invariant <a(K)^T K'> of a loop, by spectral quadrature."""
    if not isinstance(curve, CurveMap):
        curve = CurveMap.from_samples(curve)
    dK = to_samples(derivative_coeffs(curve.coeffs, curve.N), curve.N)
    a = structure.action(curve.values.T)
    return float(np.mean(np.sum(a * dK.T, axis=1)))


def _surface_point_times(state: TorusState, theta2: np.ndarray):
    """Leg indices and leg-local flow times realizing theta2 slices."""
    j = np.minimum((state.m * theta2).astype(int), state.m - 1)
    t = (theta2 - j / state.m) * state.T
    return j, t


def calabi_generator_curve(model, state: TorusState, direction=(0, 1),
                           n2: int = 256,
                           integrator: IntegratorConfig = IntegratorConfig(),
                           workers: int = 1) -> float:
    """Calabi invariant of the loop s -> Khat(a s, b s) with b = 1.

    The loop is sampled through the multiple-shooting globalization; its
    tangent combines the flow direction with the transported angular
    derivative of the generator leg, so one variational column per sample
    is integrated.  ``direction`` = (a, 1) with integer a selects the
    homotopy class; (0, 1) is the second generator.
    """
    a, b = direction
    if b != 1:
        raise ValueError("only directions (a, 1) are supported")
    m, T, omega = state.m, state.T, state.omega
    s = (np.arange(n2) + 0.5) / n2  # offset grid avoids duplicate leg seams
    j, t = _surface_point_times(state, s % 1.0)
    base = a * s - t / T * omega    # argument of K_j
    pts = np.empty((n2, 2 * state.n))
    dcol = np.empty((n2, 1, 2 * state.n))
    for i in range(m):
        sel = j == i
        if not np.any(sel):
            continue
        pts[sel] = eval_coeffs(state.K[i].coeffs, state.N, base[sel]).T
        dcol[sel, 0] = eval_coeffs(
            derivative_coeffs(state.K[i].coeffs, state.N), state.N, base[sel]).T
    res = flow_grid(model, pts, t, integrator, columns=dcol, workers=workers)
    gamma = res.endpoints
    dgamma = T * model.vector_field(gamma) + (a - omega) * res.columns[:, 0, :]
    act = model.structure.action(gamma)
    return float(np.mean(np.sum(act * dgamma, axis=1)))


def calabi_2d(model, state: TorusState, generator: str | None = None,
              n2: int = 256,
              integrator: IntegratorConfig = IntegratorConfig(),
              workers: int = 1):
    """Calabi invariants (C1, C2) of the naturally parameterized 2D torus.

    The generator curve gives one invariant directly; the companion comes
    from the Calabi invariant of the flow generator s -> Khat(0, s),
    combined per the unimodular change between the generator's
    parameterization and the natural one (vertical: C1 = C(K), C2 = C_flow
    - C(K); planar: C2 = -C(K), C1 = C_flow ... with C_flow = C(Khat(0,.))
    of the respective parameterization).
    """
    generator = generator or state.generator
    C_gen = calabi(state.K[0], model.structure)
    C_flow = calabi_generator_curve(model, state, (0, 1), n2, integrator, workers)
    if generator == "vertical":
        # C_flow is C2 of the vertical-generator surface Khat_v
        return float(C_gen), float(C_flow - C_gen)
    if generator == "planar":
        return float(C_gen + C_flow), float(-C_gen)
    raise ValueError(f"unknown generator tag {generator!r}")


def _unit(v, axis=-1):
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def _dist_line_to_subspace(u, Q):
    """Length of the projection of unit vectors u onto span(Q)^perp, per point."""
    proj = np.einsum("nij,nj->ni", np.swapaxes(Q, 1, 2), u)
    back = np.einsum("nij,nj->ni", Q, proj)
    return np.linalg.norm(u - back, axis=1)


def bundle_distances(state: TorusState, frame: AdaptedFrame) -> dict:
    """Minimum distances between bundle fibers over all legs and angles.

    The distance from a line E1 to a subspace E2 is the length of the
    projection of a unit vector of E1 onto the orthogonal complement of
    E2; subspace bases are orthonormalized first.  Returns the four
    distances d(TK, X), d(Es, Eu), d(Es, Ec), d(Eu, Ec).
    """
    n = state.n
    out = {"d_tangent_flow": np.inf, "d_stable_unstable": np.inf,
           "d_stable_center": np.inf, "d_unstable_center": np.inf}
    for i in range(state.m):
        P = frame.P[i]
        tangent = _unit(P[:, :, 0])
        flow_dir = _unit(P[:, :, n - 2])
        stable = _unit(P[:, :, n - 1])
        unstable = _unit(P[:, :, 2 * n - 1])
        center_cols = P[:, :, [0, n - 2, n, 2 * n - 2]]
        Qc, _ = np.linalg.qr(center_cols)
        flow_Q = flow_dir[:, :, None]
        unst_Q = unstable[:, :, None]
        out["d_tangent_flow"] = min(out["d_tangent_flow"],
                                    float(np.min(_dist_line_to_subspace(tangent, flow_Q))))
        out["d_stable_unstable"] = min(out["d_stable_unstable"],
                                       float(np.min(_dist_line_to_subspace(stable, unst_Q))))
        out["d_stable_center"] = min(out["d_stable_center"],
                                     float(np.min(_dist_line_to_subspace(stable, Qc))))
        out["d_unstable_center"] = min(out["d_unstable_center"],
                                       float(np.min(_dist_line_to_subspace(unstable, Qc))))
    return out


def natural_frequencies(state: TorusState, generator: str | None = None):
    """(omega_p, omega_v, nu_p, nu_v) of the 2D torus from its generator.

    A vertical generator has T = 1/omega_v and rotation nu_v; a planar one
    has T = 1/omega_p and rotation nu_p; the companion frequency follows
    from nu_p = 1 - omega_v/omega_p and nu_v = omega_p/omega_v - 1.
    """
    generator = generator or state.generator
    if generator == "vertical":
        omega_v = 1.0 / state.T
        nu_v = state.omega
        omega_p = omega_v * (1.0 + nu_v)
    elif generator == "planar":
        omega_p = 1.0 / state.T
        nu_p = state.omega
        omega_v = omega_p * (1.0 - nu_p)
    else:
        raise ValueError(f"unknown generator tag {generator!r}")
    return (float(omega_p), float(omega_v),
            float(1.0 - omega_v / omega_p), float(omega_p / omega_v - 1.0))


@dataclass
class SurfaceData:
    """One sampled 2D torus in phase space plus its homotopy generators."""

    theta1: np.ndarray        # (n1,)
    theta2: np.ndarray        # (n2,)
    points: np.ndarray        # (n1, n2, 2n)
    generator1: np.ndarray    # (n1, 2n): Khat(., 0)
    generator2: np.ndarray    # (n2, 2n): Khat(0, .)
    state_meta: dict


def globalize_surface(model, state: TorusState, n1: int, n2: int,
                      integrator: IntegratorConfig = IntegratorConfig(),
                      workers: int = 1) -> SurfaceData:
    """Sample Khat(theta1, theta2) on an n1 x n2 grid via the leg flows.

    Khat(theta1, theta2) = phi_{(theta2 - j/m) T}(K_j(theta1 - (theta2 - j/m) w))
    with j = floor(m theta2); the theta2 = i/m slices reproduce the legs
    exactly (zero flow time).
    """
    m, T, omega, N = state.m, state.T, state.omega, state.N
    theta1 = np.arange(n1) / n1
    theta2 = np.arange(n2) / n2
    j, t = _surface_point_times(state, theta2)
    points = np.empty((n1, n2, 2 * state.n))
    for col in range(n2):
        shifted = rotate_coeffs(state.K[j[col]].coeffs, N, -t[col] / T * omega)
        vals = to_samples(shifted, N) if n1 == N else eval_coeffs(shifted, N, theta1)
        pts = vals.T.copy()
        if t[col] == 0.0:
            points[:, col] = pts
        else:
            res = flow_grid(model, pts, t[col], integrator, workers=workers)
            points[:, col] = res.endpoints
    gen2 = np.empty((n2, 2 * state.n))
    for col in range(n2):
        z0 = eval_coeffs(state.K[j[col]].coeffs, N,
                         np.array([-t[col] / T * omega]))[:, 0]
        if t[col] == 0.0:
            gen2[col] = z0
        else:
            gen2[col] = flow_point(model, z0, t[col], integrator).endpoint
    meta = {"n1": n1, "n2": n2, "m": m, "N": N, "T": T, "omega": omega,
            "h": state.h}
    return SurfaceData(theta1=theta1, theta2=theta2, points=points,
                       generator1=points[:, 0].copy(), generator2=gen2,
                       state_meta=meta)


def observe(model, state: TorusState, frame: AdaptedFrame,
            integrator: IntegratorConfig = IntegratorConfig(),
            n2: int = 256, workers: int = 1) -> ObservableRecord:
    """Collect the standard observable set for one converged state."""
    C1, C2 = calabi_2d(model, state, state.generator, n2, integrator, workers)
    dists = bundle_distances(state, frame)
    mult_u = state.lam ** (-state.m)
    return ObservableRecord(
        T=state.T, omega=state.omega, h=state.h, lam=state.lam,
        multiplier_unstable=float(mult_u),
        chi=float(np.log(abs(mult_u)) / state.T),
        C1=C1, C2=C2,
        r1=float(np.sqrt(abs(C1) / np.pi)), r2=float(np.sqrt(abs(C2) / np.pi)),
        N=state.N, m=state.m, generator=state.generator, **dists)

"""Initial torus states: Lyapunov periodic orbits, linear-flow invariant
curve seeds around them, and conversion of Poincare-map torus data to
time-T flow-map data.

Differential correction of the periodic orbits exploits the RTBP
reflection symmetries for phase fixing:

  * planar orbits start at (x1, 0, 0, 0, p2, 0) and close after twice the
    time of the next perpendicular crossing of {x2 = 0};
  * vertical orbits start on the x axis at (x1, 0, 0, 0, p2, p3) and reach
    a vertical extreme (x2 = p1 = p3 = 0) after a quarter period.

Both are solved as fixed-time shooting problems with the crossing time
among the unknowns and the energy as the closing equation, so no implicit
section events are needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohomology import RotationNumber, small_divisor_coeffs
from .errors import ConvergenceError, NumericalError
from .flow import IntegratorConfig, flow_grid, flow_point, flow_with_jacobian
from .fourier import CurveMap, PeriodicFunction
from .rtbp import LinearSpectrum, RtbpModel, l1_state, linear_spectrum_at
from .state import TorusState

__all__ = ["PeriodicOrbit", "lyapunov_po", "lyapunov_po_with_rotation",
           "seed_from_po", "poincare_to_flowmap", "read_poincare_file"]


@dataclass(frozen=True)
class PeriodicOrbit:
    """A corrected Lyapunov periodic orbit with its Floquet data."""

    x0: np.ndarray
    period: float
    monodromy: np.ndarray
    energy: float
    family: str                  # 'planar' or 'vertical'
    nu: float                    # elliptic rotation number in [0, 1/2]
    multiplier_unstable: float   # > 1
    multiplier_stable: float     # reciprocal partner
    v_elliptic: np.ndarray       # complex eigenvector of e^{+i 2 pi nu}
    v_unstable: np.ndarray
    v_stable: np.ndarray


def _phase_for_zero(component: complex) -> float:
    """Phase phi with Re(e^{i phi} component) = 0."""
    return 0.5 * np.pi - np.angle(component)


def _linear_guess(model: RtbpModel, spectrum: LinearSpectrum, family: str,
                  amplitude: float):
    z_eq = l1_state(model.params)
    if family == "planar":
        v = spectrum.v_planar
        phi = _phase_for_zero(v[1])       # x2 = 0 at start
        tau = 0.5 / spectrum.omega_p      # half period
        unknowns = (0, 4)                 # x1, p2
        residual_rows = (1, 3)            # x2, p1 at tau
    elif family == "vertical":
        v = spectrum.v_vertical
        phi = _phase_for_zero(v[2])       # x3 = 0 at start
        tau = 0.25 / spectrum.omega_v     # quarter period
        unknowns = (0, 4, 5)              # x1, p2, p3
        residual_rows = (1, 3, 5)         # x2, p1, p3 at tau
    else:
        raise ValueError(f"unknown family {family!r}")
    v = v / np.linalg.norm(v)
    du = np.real(np.exp(1j * phi) * v)
    u0 = z_eq + amplitude * du
    # symmetric start: zero the components the symmetry fixes
    mask = np.ones(6)
    mask[[1, 3]] = 0.0
    if family == "vertical":
        mask[2] = 0.0
    u0 = z_eq + amplitude * (du * mask)
    return u0, tau, unknowns, residual_rows


def _correct_po(model, u0, tau, unknowns, residual_rows, h_target, cfg,
                tol=1e-12, max_iter=30):
    """Newton on (section residuals at tau, H(u0) - h_target)."""
    u = u0.copy()
    tau = float(tau)
    nq = len(unknowns) + 1
    for _ in range(max_iter):
        res = flow_with_jacobian(model, u, tau, cfg)
        zt = res.endpoint
        F = np.empty(nq)
        F[:-1] = zt[list(residual_rows)]
        F[-1] = model.hamiltonian(u) - h_target
        if np.max(np.abs(F)) < tol:
            return u, tau
        J = np.zeros((nq, nq))
        xdot = model.vector_field(zt)
        dH = model.gradient(u)
        for c, j in enumerate(unknowns):
            J[:-1, c] = res.jacobian[list(residual_rows), j]
            J[-1, c] = dH[j]
        J[:-1, -1] = xdot[list(residual_rows)]
        try:
            dq = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular correction system: {exc}") from exc
        for c, j in enumerate(unknowns):
            u[j] += dq[c]
        tau += dq[-1]
    raise ConvergenceError(
        f"periodic orbit correction did not converge (|F| = {np.max(np.abs(F)):.3e})")


def _floquet_data(model, x0, period, cfg, mod_tol=1e-6, sep=5e-2):
    res = flow_with_jacobian(model, x0, period, cfg)
    closure = np.max(np.abs(res.endpoint - x0))
    if closure > 1e-10:
        raise ConvergenceError(f"orbit does not close: |phi_T(x0) - x0| = {closure:.3e}")
    M = res.jacobian
    vals, vecs = np.linalg.eig(M)

    elliptic = [i for i, v in enumerate(vals)
                if abs(abs(v) - 1.0) < mod_tol and abs(v - 1.0) > sep and v.imag > 0]
    hyper = [i for i, v in enumerate(vals)
             if abs(v.imag) < mod_tol * abs(v) and abs(abs(v) - 1.0) > sep]
    if len(elliptic) != 1 or len(hyper) != 2:
        raise NumericalError(
            f"monodromy spectrum is not of elliptic x hyperbolic x unit type: {vals}")

    i_e = elliptic[0]
    nu = float(np.angle(vals[i_e]) / (2.0 * np.pi))
    i_u = max(hyper, key=lambda i: abs(vals[i]))
    i_s = min(hyper, key=lambda i: abs(vals[i]))
    lam_u = float(vals[i_u].real)
    lam_s = float(vals[i_s].real)
    if lam_u <= 0 or lam_s <= 0:
        raise NumericalError("negative hyperbolic multipliers (non-orientable bundle)")

    def unit_real(v):
        v = v.real
        return v / np.linalg.norm(v)

    return M, nu, lam_u, lam_s, vecs[:, i_e].copy(), unit_real(vecs[:, i_u]), unit_real(vecs[:, i_s])


def lyapunov_po(model: RtbpModel, family: str, energy: float | None = None,
                amplitude: float | None = None,
                cfg: IntegratorConfig = IntegratorConfig(),
                spectrum: LinearSpectrum | None = None,
                guess: tuple | None = None) -> PeriodicOrbit:
    """Differentially correct a planar or vertical Lyapunov orbit.

    Exactly one of ``energy`` (target value of H) or ``amplitude`` (size of
    the linear guess, whose energy becomes the target) must be given.
    ``guess`` = (u0, tau) overrides the linear initial guess, e.g. when
    walking along the family.
    """
    if (energy is None) == (amplitude is None):
        raise ValueError("specify exactly one of energy or amplitude")
    if spectrum is None:
        spectrum = linear_spectrum_at(model, l1_state(model.params))
    u0, tau, unknowns, rows = _linear_guess(model, spectrum, family,
                                            amplitude if amplitude is not None else 1e-3)
    if guess is not None:
        u0, tau = np.array(guess[0], dtype=float), float(guess[1])
    h_target = float(model.hamiltonian(u0)) if energy is None else float(energy)
    u, tau = _correct_po(model, u0, tau, unknowns, rows, h_target, cfg)
    period = (2.0 if family == "planar" else 4.0) * tau
    M, nu, lam_u, lam_s, v_e, v_u, v_s = _floquet_data(model, u, period, cfg)
    return PeriodicOrbit(x0=u, period=period, monodromy=M,
                         energy=float(model.hamiltonian(u)), family=family,
                         nu=nu, multiplier_unstable=lam_u, multiplier_stable=lam_s,
                         v_elliptic=v_e, v_unstable=v_u, v_stable=v_s)


def lyapunov_po_with_rotation(model: RtbpModel, family: str, rho: float,
                              cfg: IntegratorConfig = IntegratorConfig(),
                              tol: float = 1e-11, max_iter: int = 40,
                              amplitude0: float = 5e-3) -> PeriodicOrbit:
    """Find the Lyapunov orbit whose elliptic rotation number equals rho.

    Walks the family in energy with a secant iteration on nu(h) - rho,
    starting from the linear limit at the equilibrium.
    """
    spectrum = linear_spectrum_at(model, l1_state(model.params))
    h0 = float(model.hamiltonian(l1_state(model.params)))
    if family == "vertical":
        nu0 = spectrum.omega_p / spectrum.omega_v - 1.0
    else:
        nu0 = 1.0 - spectrum.omega_v / spectrum.omega_p

    po = lyapunov_po(model, family, amplitude=amplitude0, cfg=cfg, spectrum=spectrum)
    h_a, nu_a = h0, nu0
    h_b, nu_b = po.energy, po.nu
    for _ in range(max_iter):
        if abs(nu_b - rho) < tol:
            return po
        if nu_b == nu_a:
            raise ConvergenceError("rotation number stagnated along the family")
        h_new = h_b + (rho - nu_b) * (h_b - h_a) / (nu_b - nu_a)
        po = lyapunov_po(model, family, energy=h_new, cfg=cfg, spectrum=spectrum,
                         guess=(po.x0, po.period / (2.0 if family == "planar" else 4.0)))
        h_a, nu_a = h_b, nu_b
        h_b, nu_b = po.energy, po.nu
    raise ConvergenceError(
        f"no orbit with rotation number {rho} found (last nu = {nu_b})")


def seed_from_po(model: RtbpModel, po: PeriodicOrbit, amplitude: float,
                 m: int, N: int, cfg: IntegratorConfig = IntegratorConfig(),
                 hyperbolic_delta: float = 0.5) -> TorusState:
    """Invariant curve of the linearized flow around a Lyapunov orbit.

    The elliptic Floquet eigenvector, transported along the orbit and
    detwisted by its rotation, traces the linear invariant curve

        K_i(theta) = x(t_i) + s Re(e^{i 2 pi theta} u(t_i)),  t_i = i T / m,

    which solves the invariance equations to first order in s.  The bundle
    legs transport the stable Floquet eigenvector the same way, so that
    Dphi_{T/m} W_i = lambda W_{i+1} with lambda the per-leg stable factor.
    """
    T = po.period
    nu = po.nu
    # leg transition matrices along the orbit
    x = [po.x0.copy()]
    A = []
    for i in range(m):
        res = flow_with_jacobian(model, x[i], T / m, cfg)
        A.append(res.jacobian)
        x.append(res.endpoint)

    w = po.v_elliptic / np.linalg.norm(po.v_elliptic)
    lam = po.multiplier_stable ** (1.0 / m)
    u = [w]
    s_vec = [po.v_stable.copy()]
    for i in range(m):
        u.append(np.exp(-2j * np.pi * nu / m) * (A[i] @ u[i]))
        s_vec.append((A[i] @ s_vec[i]) / lam)

    theta = np.arange(N) / N
    cos_t = np.cos(2.0 * np.pi * theta)
    sin_t = np.sin(2.0 * np.pi * theta)
    K, W = [], []
    for i in range(m):
        circle = np.outer(u[i].real, cos_t) - np.outer(u[i].imag, sin_t)
        K.append(CurveMap.from_samples(x[i][:, None] + amplitude * circle))
        W.append(CurveMap.from_samples(np.tile(s_vec[i][:, None], (1, N))))

    h = float(np.mean(model.hamiltonian(K[0].values.T)))
    state = TorusState(K=K, W=W, T=T, lam=lam, omega=nu, h=h,
                       generator=po.family)
    state.check_hyperbolic(hyperbolic_delta)
    return state


def poincare_to_flowmap(model, K_P: CurveMap, T_P: PeriodicFunction, omega,
                        cfg: IntegratorConfig = IntegratorConfig(),
                        workers: int = 1):
    """Convert a Poincare-map invariant torus to a time-T flow-map torus.

    Given phi_{T_P(theta)}(K_P(theta)) = K_P(theta + omega), flow each point
    by the zero-average solution tau of

        tau(theta) - tau(theta + omega) = T_P(theta) - <T_P>

    and return (K, T) with T = <T_P> and K(theta) = phi_{tau(theta)}(K_P(theta)).
    """
    if isinstance(omega, (int, float)):
        omega = RotationNumber(float(omega))
    T = T_P.average()
    rhs = T_P.coeffs.copy()
    rhs[0] = 0.0
    tau_c, _ = small_divisor_coeffs(rhs, T_P.N, omega.omega, omega.floor)
    tau = PeriodicFunction.from_coeffs(tau_c, T_P.N)
    if np.max(np.abs(tau.samples)) == 0.0:
        return CurveMap.from_samples(K_P.values), float(T), tau
    res = flow_grid(model, K_P, tau.samples, cfg, workers=workers)
    return CurveMap.from_samples(res.endpoints.T), float(T), tau


def read_poincare_file(path):
    """Read externally produced Poincare-torus data.

    Format: a header line ``poincare-torus 1``, then ``n <int>``,
    ``N <int>``, ``omega <float>``, then N rows of 2n+1 floats holding the
    K_P components followed by the return time T_P at theta = j/N.
    """
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.readline().split()
        if tokens[:1] != ["poincare-torus"]:
            raise ValueError(f"{path}: not a poincare-torus file")
        n = int(fh.readline().split()[1])
        N = int(fh.readline().split()[1])
        omega = float(fh.readline().split()[1])
        data = np.loadtxt(fh)
    if data.shape != (N, 2 * n + 1):
        raise ValueError(f"{path}: expected {N} rows of {2*n+1} columns")
    K_P = CurveMap.from_samples(data[:, :2 * n].T)
    T_P = PeriodicFunction.from_samples(data[:, 2 * n])
    return K_P, T_P, omega

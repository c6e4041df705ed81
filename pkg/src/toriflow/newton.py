"""Newton corrections of multiple tori and bundles in the adapted frame.

The linearized invariance equations, written in the frame coordinates
Delta K_i = P_i xi_i, decouple blockwise into two multiple non-small
divisor equations (hyperbolic components), one zero-average multiple
small-divisor equation, the twist linear system fixing the free action
average (isochronous: the mean torsion matrix; isoenergetic: its
energy-bordered extension), and one final multiple small-divisor equation
for the tangent components.  The average of the action-like block of the
right-hand side is quadratically small by exact symplecticity; it is
reported as a diagnostic rather than solved for.  The bundle correction
solves the analogous system with the eigenvalue update absorbing the
solvability average.

Because the adapted frame only block-triangularizes the transfer matrices
up to the invariance error, the blockwise pass alone solves a perturbed
linear system.  Both solvers therefore apply iterative refinement: the
frame stores Dphi P assembled from exact flow identities, so the true
linearized residual of a candidate correction costs only spectral algebra,
and re-running the blockwise pass on that residual removes the neglected
frame-error term to integration accuracy.  This keeps the outer iteration
quadratic even on narrow tori where the frame conditioning degrades.

The same linear solvers, fed with the appropriate right-hand sides,
produce the continuation tangents; see the continuation module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohomology import (multiple_non_small_divisor_coeffs,
                         multiple_small_divisor_coeffs)
from .errors import ConvergenceError, TwistConditionError
from .flow import IntegratorConfig, flow_grid
from .fourier import CurveMap, rotate_coeffs, to_coeffs, to_samples
from .frame import AdaptedFrame, build_frame
from .state import TorusState

__all__ = ["NewtonConfig", "NewtonReport", "torus_error", "bundle_error",
           "newton_torus_step", "newton_bundle_step", "refine",
           "solve_torus_system", "solve_bundle_system", "perturb_state",
           "action_average", "action_average_slope"]


@dataclass(frozen=True)
class NewtonConfig:
    """Tolerances and numerical knobs of the Newton refinement."""

    eps: float = 1e-7
    eps_w: float = 1e-5
    max_iters: int = 12
    mode: str = "isochronous"       # or "isoenergetic"
    constant_torsion: bool = False
    reuse_frame: bool = False       # reuse the torus-step frame for the bundle step
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    divisor_floor: float = 1e-8
    cond_limit: float = 1e12
    hyperbolic_delta: float = 0.5
    inner_rounds: int = 4           # iterative-refinement passes per linear solve
    inner_tol: float = 1e-13
    workers: int = 1
    chunk: int = 64

    def __post_init__(self):
        if self.mode not in ("isochronous", "isoenergetic"):
            raise ValueError(f"unknown Newton mode {self.mode!r}")


@dataclass
class NewtonReport:
    """Per-step diagnostics of one Newton correction."""

    kind: str                       # 'torus' or 'bundle'
    err_before: float
    energy_error: float = np.nan
    dtau: float = 0.0
    dh: float = np.nan
    dlam: float = 0.0
    eta3_avg: np.ndarray | None = None   # <eta^3>, quadratically small
    twist_matrix: np.ndarray | None = None
    twist_cond: float = np.nan
    linear_residual: float = np.nan      # of the refined linearized solve
    inner_rounds: int = 0
    frame_residual: float = np.nan
    frame_sympl_defect: float = np.nan
    err_after: float = np.nan            # filled by refine


def _frame_for(model, state, cfg: NewtonConfig) -> AdaptedFrame:
    return build_frame(model, state, integrator=cfg.integrator,
                       constant_torsion=cfg.constant_torsion,
                       divisor_floor=cfg.divisor_floor,
                       workers=cfg.workers, chunk=cfg.chunk)


def torus_error(model, state: TorusState, cfg: NewtonConfig = NewtonConfig(),
                frame: AdaptedFrame | None = None):
    """Invariance error E_i = phi_{T/m}(K_i) - K_{i+1}(. + w/m) on the grid.

    Returns (E, err, E_h) with E of shape (m, N, 2n), err the sup norm over
    legs and grid points, and E_h the mean-energy mismatch of the first leg.
    """
    m, N = state.m, state.N
    if frame is not None:
        E = frame.endpoints - frame.K_shift
    else:
        E = np.empty((m, N, 2 * state.n))
        for i in range(m):
            res = flow_grid(model, state.K[i].values.T.copy(), state.T / m,
                            cfg.integrator, workers=cfg.workers, chunk=cfg.chunk)
            Kr = state.K[(i + 1) % m].rotate(state.omega / m)
            E[i] = res.endpoints - Kr.values.T
    err = float(np.max(np.abs(E)))
    E_h = float(np.mean(model.hamiltonian(state.K[0].values.T)) - state.h)
    return E, err, E_h


def bundle_error(model, state: TorusState, frame: AdaptedFrame):
    """E^W_i = Dphi_{T/m}(K_i) W_i - lambda W_{i+1}(. + w/m) from frame data."""
    EW = frame.W_transport - state.lam * frame.W_shift
    return EW, float(np.max(np.abs(EW)))


# -- linear solvers in the adapted frame ----------------------------------------

def _to_c(grid_md, N):
    return to_coeffs(np.moveaxis(grid_md, 1, -1))


def _to_g(coeff_md, N):
    return np.moveaxis(to_samples(coeff_md, N), -1, 1)


def _rotate_next(grid_md, N, m, delta):
    """Leg i of the result is field_{i+1}(theta + delta) on the grid."""
    c = _to_c(grid_md, N)
    out = np.empty_like(c)
    for i in range(m):
        out[i] = rotate_coeffs(c[(i + 1) % m], N, delta)
    return _to_g(out, N)


def _eta_blocks(frame: AdaptedFrame, E: np.ndarray, n: int):
    eta = -np.einsum("mnij,mnj->mni", frame.Pinv_shift, E)
    return (eta[:, :, : n - 1], eta[:, :, n - 1],
            eta[:, :, n: 2 * n - 1], eta[:, :, 2 * n - 1])


def _solve_twist(S1_mean, rhs_mean, E_h, mode, cond_limit, x_scale):
    """Fix the free action average (and Delta tau in the isoenergetic case).

    ``x_scale`` is the frame's X_H column scale: the flow direction is
    x_scale times a frame unit vector, so it borders the isoenergetic
    system wherever the unscaled formulation has a bare unit vector.
    """
    nm1 = S1_mean.shape[0]
    e = np.zeros(nm1)
    e[-1] = x_scale
    if mode == "isochronous":
        A = S1_mean
        b = rhs_mean
    else:
        A = np.zeros((nm1 + 1, nm1 + 1))
        A[:nm1, :nm1] = S1_mean
        A[:nm1, nm1] = e
        A[nm1, :nm1] = e
        b = np.concatenate([rhs_mean, [-E_h]])
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > cond_limit:
        raise TwistConditionError(
            f"{mode} twist condition numerically singular (cond = {cond:.3e})",
            cond=cond)
    sol = np.linalg.solve(A, b)
    if mode == "isochronous":
        return sol, 0.0, A, cond
    return sol[:nm1], float(sol[nm1]), A, cond


def _torus_blockwise(frame, E, E_h, omega, mode, cfg, n, N):
    """One blockwise pass of the torus system for right-hand side (E, E_h)."""
    m = E.shape[0]
    lam = frame.lam
    eta1, eta2, eta3, eta4 = _eta_blocks(frame, E, n)
    xi2 = _to_g(multiple_non_small_divisor_coeffs(
        _to_c(eta2[:, :, None], N), N, omega, lam, 1.0, cfg.divisor_floor),
        N)[:, :, 0]
    xi4 = _to_g(multiple_non_small_divisor_coeffs(
        _to_c(eta4[:, :, None], N), N, omega, 1.0 / lam, 1.0, cfg.divisor_floor),
        N)[:, :, 0]
    xi3_c, eta3_avg = multiple_small_divisor_coeffs(
        _to_c(eta3, N), N, omega, cfg.divisor_floor)
    xi3_bar = _to_g(xi3_c, N)

    S_xi3bar = np.einsum("mnab,mnb->mna", frame.S1, xi3_bar)
    rhs_mean = np.mean(eta1 - S_xi3bar, axis=(0, 1))
    xi300, dtau, A, cond = _solve_twist(frame.S1_mean, rhs_mean, E_h,
                                        mode, cfg.cond_limit, frame.x_scale)
    xi3 = xi3_bar + xi300

    e = np.zeros(n - 1)
    e[-1] = frame.x_scale
    rhs1 = eta1 - np.einsum("mnab,mnb->mna", frame.S1, xi3) - e * dtau
    xi1_c, _ = multiple_small_divisor_coeffs(_to_c(rhs1, N), N, omega,
                                             cfg.divisor_floor)
    xi1 = _to_g(xi1_c, N)
    xi = np.concatenate([xi1, xi2[:, :, None], xi3, xi4[:, :, None]], axis=2)
    return xi, dtau, eta3_avg, A, cond, xi300


def solve_torus_system(model, state: TorusState, frame: AdaptedFrame,
                       E: np.ndarray, E_h: float, mode: str,
                       cfg: NewtonConfig = NewtonConfig()):
    """Solve the linearized torus equations for right-hand side (E, E_h).

    Finds Delta K_i = P_i xi_i and Delta tau with

        Dphi_{T/m}(K_i) DK_i - DK_{i+1}(.+w/m) + X_H(K_{i+1}(.+w/m)) Dtau = -E_i

    plus the energy condition of the requested mode.  The blockwise frame
    pass is iterated on the true linearized residual (assembled from the
    frame's Dphi P) until it stops improving, which removes the error the
    approximate block-triangularization would otherwise leave behind.

    Returns (dK, dtau, info) with dK of shape (m, N, 2n).
    """
    m, N, n = state.m, state.N, state.n
    omega = state.omega
    grad0 = model.gradient(state.K[0].values.T)

    xi_acc = np.zeros((m, N, 2 * n))
    dtau_acc = 0.0
    rho, rho_h = E, E_h
    info = {}
    best = None
    for inner in range(max(1, cfg.inner_rounds)):
        xi, dtau, eta3_avg, A, cond, xi300 = _torus_blockwise(
            frame, rho, rho_h, omega, mode, cfg, n, N)
        xi_acc = xi_acc + xi
        dtau_acc += dtau
        if inner == 0:
            info.update(eta3_avg=eta3_avg, twist_matrix=A, twist_cond=cond,
                        xi300=xi300)
        dK = np.einsum("mnij,mnj->mni", frame.P, xi_acc)
        lin = np.einsum("mnij,mnj->mni", frame.DphiP, xi_acc)
        lin -= _rotate_next(dK, N, m, omega / m)
        lin += frame.X_shift * dtau_acc
        rho = lin + E
        rho_h = E_h + float(np.mean(np.einsum("nj,nj->n", grad0, dK[0])))
        res = float(np.max(np.abs(rho)))
        if best is None or res < best[0]:
            best = (res, xi_acc.copy(), dtau_acc)
        if res <= cfg.inner_tol:
            break
    res, xi_acc, dtau_acc = best
    info.update(linear_residual=res, inner_rounds=inner + 1)
    dK = np.einsum("mnij,mnj->mni", frame.P, xi_acc)
    return dK, dtau_acc, info


def _bundle_blockwise(frame, EW, omega, cfg, n, N):
    lam = frame.lam
    eta1, eta2, eta3, eta4 = _eta_blocks(frame, EW, n)
    xi3 = _to_g(multiple_non_small_divisor_coeffs(
        _to_c(eta3, N), N, omega, 1.0, lam, cfg.divisor_floor), N)
    xi4 = _to_g(multiple_non_small_divisor_coeffs(
        _to_c(eta4[:, :, None], N), N, omega, 1.0 / lam, lam, cfg.divisor_floor),
        N)[:, :, 0]
    rhs1 = eta1 - np.einsum("mnab,mnb->mna", frame.S1, xi3)
    xi1 = _to_g(multiple_non_small_divisor_coeffs(
        _to_c(rhs1, N), N, omega, 1.0, lam, cfg.divisor_floor), N)
    dlam = -float(np.mean(eta2)) / frame.w_scale
    xi2_c, _ = multiple_small_divisor_coeffs(
        _to_c((eta2 + frame.w_scale * dlam)[:, :, None] / lam, N), N, omega,
        cfg.divisor_floor)
    xi2 = _to_g(xi2_c, N)[:, :, 0]
    return np.concatenate([xi1, xi2[:, :, None], xi3, xi4[:, :, None]],
                          axis=2), dlam


def solve_bundle_system(state: TorusState, frame: AdaptedFrame, EW: np.ndarray,
                        cfg: NewtonConfig = NewtonConfig()):
    """Solve the linearized bundle equations for right-hand side EW.

    Finds Delta W_i = P_i xi_i and Delta lambda with

        Dphi DW_i - lam DW_{i+1}(.+w/m) - Dlam W_{i+1}(.+w/m) = -EW_i,

    iterating the blockwise pass on the true linearized residual as in
    :func:`solve_torus_system`.  Returns (dW, dlam, info).
    """
    m, N, n = state.m, state.N, state.n
    omega, lam = state.omega, state.lam

    xi_acc = np.zeros((m, N, 2 * n))
    dlam_acc = 0.0
    rho = EW
    best = None
    for inner in range(max(1, cfg.inner_rounds)):
        xi, dlam = _bundle_blockwise(frame, rho, omega, cfg, n, N)
        xi_acc = xi_acc + xi
        dlam_acc += dlam
        dW = np.einsum("mnij,mnj->mni", frame.P, xi_acc)
        lin = np.einsum("mnij,mnj->mni", frame.DphiP, xi_acc)
        lin -= lam * _rotate_next(dW, N, m, omega / m)
        lin -= dlam_acc * frame.W_shift
        rho = lin + EW
        res = float(np.max(np.abs(rho)))
        if best is None or res < best[0]:
            best = (res, xi_acc.copy(), dlam_acc)
        if res <= cfg.inner_tol:
            break
    res, xi_acc, dlam_acc = best
    dW = np.einsum("mnij,mnj->mni", frame.P, xi_acc)
    return dW, dlam_acc, {"linear_residual": res, "inner_rounds": inner + 1}


# -- Newton steps ----------------------------------------------------------------

def newton_torus_step(model, state: TorusState, frame: AdaptedFrame,
                      cfg: NewtonConfig = NewtonConfig()):
    """One Newton correction of the multiple torus in the adapted frame."""
    E, err, E_h = torus_error(model, state, cfg, frame=frame)
    dK, dtau, info = solve_torus_system(model, state, frame, E, E_h,
                                        cfg.mode, cfg)
    K_new = [CurveMap.from_samples(state.K[i].values + dK[i].T).clean_tail()
             for i in range(state.m)]
    T_new = state.T + (state.m * dtau if cfg.mode == "isoenergetic" else 0.0)
    new_state = state.with_curves(K_new, None, T=T_new)
    report = NewtonReport(
        kind="torus", err_before=err, energy_error=E_h, dtau=dtau,
        dh=E_h + frame.x_scale * info["xi300"][-1],
        eta3_avg=info["eta3_avg"], twist_matrix=info["twist_matrix"],
        twist_cond=info["twist_cond"],
        linear_residual=info["linear_residual"],
        inner_rounds=info["inner_rounds"],
        frame_residual=frame.reduction_residual,
        frame_sympl_defect=frame.sympl_defect)
    return new_state, report


def newton_bundle_step(model, state: TorusState, frame: AdaptedFrame,
                       cfg: NewtonConfig = NewtonConfig()):
    """One Newton correction of the multiple bundle and its eigenvalue."""
    EW, errw = bundle_error(model, state, frame)
    dW, dlam, info = solve_bundle_system(state, frame, EW, cfg)
    W_new = [CurveMap.from_samples(state.W[i].values + dW[i].T).clean_tail()
             for i in range(state.m)]
    new_state = state.with_curves(None, W_new, lam=state.lam + dlam)
    report = NewtonReport(
        kind="bundle", err_before=errw, dlam=dlam,
        linear_residual=info["linear_residual"],
        inner_rounds=info["inner_rounds"],
        frame_residual=frame.reduction_residual,
        frame_sympl_defect=frame.sympl_defect)
    return new_state, report


def refine(model, state: TorusState, cfg: NewtonConfig = NewtonConfig()):
    """Alternate torus and bundle Newton steps until both errors converge.

    The bundle step of each round rebuilds the frame so it sees the curves
    improved by the torus step (``reuse_frame`` skips that rebuild).
    Returns (state, reports); raises ConvergenceError with the error
    history when the budget is exhausted or the iteration diverges.
    """
    reports = []
    history = []
    frame = _frame_for(model, state, cfg)
    for it in range(cfg.max_iters + 1):
        E, err, E_h = torus_error(model, state, cfg, frame=frame)
        EW, errw = bundle_error(model, state, frame)
        history.append((err, errw))
        if reports:
            reports[-1].err_after = err
        if err < cfg.eps and errw < cfg.eps_w:
            state.check_hyperbolic(cfg.hyperbolic_delta)
            if cfg.mode == "isochronous":
                state = state.replace(
                    h=float(np.mean(model.hamiltonian(state.K[0].values.T))))
            return state, reports
        if it == cfg.max_iters:
            break
        if len(history) >= 3 and history[-1][0] > 100.0 * max(history[-3][0], cfg.eps):
            raise ConvergenceError(
                f"Newton iteration diverging (err {history[-3][0]:.3e} -> "
                f"{history[-1][0]:.3e})", history=history)

        # The bundle error feeds the frame the torus step depends on, so W
        # is caught up with the current curves first (it lags whenever the
        # previous round moved them; for fresh seeds it starts far off).
        for _ in range(3):
            if errw <= max(0.01 * err, 1e-13):
                break
            state, rep_b = newton_bundle_step(model, state, frame, cfg)
            reports.append(rep_b)
            if not cfg.reuse_frame:
                frame = _frame_for(model, state, cfg)
                EW, errw = bundle_error(model, state, frame)
                rep_b.err_after = errw
            else:
                errw = 0.0  # single catch-up step, no rebuild

        state, rep = newton_torus_step(model, state, frame, cfg)
        reports.append(rep)
        frame = _frame_for(model, state, cfg)
    raise ConvergenceError(
        f"no convergence after {cfg.max_iters} Newton rounds "
        f"(err = {history[-1][0]:.3e}, err_w = {history[-1][1]:.3e})",
        history=history)


# -- exact-symplecticity cancellation diagnostics ---------------------------------

def perturb_state(state: TorusState, delta: float, rng, k_max: int = 4):
    """Add delta times a unit band-limited random curve to every K leg."""
    N = state.N
    K_new = []
    for c in state.K:
        coeffs = np.zeros((c.dim, N // 2 + 1), dtype=complex)
        coeffs[:, 1: k_max + 1] = (rng.standard_normal((c.dim, k_max))
                                   + 1j * rng.standard_normal((c.dim, k_max)))
        curve = CurveMap.from_coeffs(coeffs, N)
        unit = curve.values / np.max(np.abs(curve.values))
        K_new.append(CurveMap.from_samples(c.values + delta * unit))
    return state.with_curves(K_new, None)


def action_average(model, state: TorusState,
                   cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """<eta^3>: the mean of the action-like right-hand side block.

    Exact symplecticity makes this average quadratically small in the
    invariance error, which is what licenses dropping it from the
    small-divisor solvability condition.
    """
    frame = _frame_for(model, state, cfg)
    E, err, _ = torus_error(model, state, cfg, frame=frame)
    eta = -np.einsum("mnij,mnj->mni", frame.Pinv_shift, E)
    n = state.n
    return np.mean(eta[:, :, n: 2 * n - 1], axis=(0, 1))


def action_average_slope(model, state: TorusState, deltas=(1e-3, 1e-4, 1e-5),
                         cfg: NewtonConfig = NewtonConfig(), seed: int = 7,
                         k_max: int = 4):
    """Log-log slope of |<eta^3>| against the perturbation size.

    Perturbs a converged state by band-limited random curves of the given
    sizes and fits the scaling exponent; quadratic smallness means a slope
    near 2.  Returns (slope, values).
    """
    values = []
    for d in deltas:
        rng = np.random.default_rng(seed)
        avg = action_average(model, perturb_state(state, d, rng, k_max), cfg)
        values.append(float(np.linalg.norm(avg)))
    logs = np.log(values)
    logd = np.log(deltas)
    slope = float(np.polyfit(logd, logs, 1)[0])
    return slope, values

"""Continuation of torus families: parameter tangents, one adaptive step,
and whole family runs.

Tangents with respect to the flying time T, the energy h, and the
rotation number omega solve the same cohomological systems as the Newton
corrections, with parameter-specific right-hand sides; their hyperbolic
components vanish by construction, and the bundle tangents need the
second variational of the flow acting on (W_i, dK_i) pairs.

One continuation step normalizes the compound tangent, applies the
predictor, refines with the Newton corrector, and adapts both the step
size (halving on failure, scaled by the desired/actual iteration ratio on
success) and the grid size (halved while over-resolved, doubled when the
error cannot reach the acceptance band).

Rotation-number targets are replaced by nearby noble numbers, whose
continued fractions end in ones, before the isoenergetic corrector runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .cohomology import multiple_small_divisor_coeffs
from .errors import ConvergenceError, NumericalError
from .flow import IntegratorConfig, flow_grid
from .fourier import CurveMap, derivative_coeffs, rotate_coeffs, to_samples
from .frame import AdaptedFrame, build_frame
from .newton import (NewtonConfig, bundle_error, refine, solve_bundle_system,
                     torus_error, _to_c, _to_g)
from .state import TorusState

__all__ = ["TangentData", "ContinuationConfig", "tangent_T", "tangent_h",
           "tangent_omega", "tangent", "continuation_step", "StepResult",
           "run_family", "FamilyLog", "nobilize", "compound_tangent_norm"]


@dataclass
class TangentData:
    """Derivative of the compound torus data with respect to one parameter."""

    tag: str                  # 'T', 'h' or 'omega'
    dK: np.ndarray            # (m, N, 2n)
    dW: np.ndarray            # (m, N, 2n)
    dT: float
    dlam: float
    domega: float = 0.0       # 1 for omega continuation, else 0
    dtau: float = 0.0         # per-leg time derivative (h, omega tags)
    linear_residual: float = np.nan


def compound_tangent_norm(t: TangentData) -> float:
    """Norm matching the compound state norm (T, lambda and leg averages)."""
    acc = t.dT ** 2 + t.dlam ** 2
    acc += float(np.sum(np.mean(np.sum(t.dK ** 2, axis=2), axis=1)))
    acc += float(np.sum(np.mean(np.sum(t.dW ** 2, axis=2), axis=1)))
    return float(np.sqrt(acc))


def _tangent_curve_part(state, frame, rhs1_const, twist_rhs, mode, cfg):
    """Shared torus-tangent solve: xi2 = xi4 = 0, constant xi3.

    ``rhs1_const`` is the theta-independent part of the xi1 equation that
    does not involve S^1 xi3_00; ``twist_rhs`` the mean system right-hand
    side.  Returns (dK grid, dtau, xi300).
    """
    from .newton import _solve_twist
    m, N, n = state.m, state.N, state.n
    omega = state.omega
    xi300, dtau, A, cond = _solve_twist(frame.S1_mean, twist_rhs[:-1],
                                        twist_rhs[-1], mode,
                                        cfg.cond_limit, frame.x_scale)
    e = np.zeros(n - 1)
    e[-1] = frame.x_scale
    rhs1 = (rhs1_const - e * dtau
            - np.einsum("mnab,b->mna", frame.S1, xi300))
    xi1_c, _ = multiple_small_divisor_coeffs(_to_c(rhs1, N), N, omega,
                                             cfg.divisor_floor)
    xi1 = _to_g(xi1_c, N)
    xi = np.zeros((m, N, 2 * n))
    xi[:, :, : n - 1] = xi1
    xi[:, :, n: 2 * n - 1] = xi300
    dK = np.einsum("mnij,mnj->mni", frame.P, xi)
    return dK, dtau, xi300


def _bundle_tangent(model, state, frame, dK, dT, extra=None, cfg=NewtonConfig()):
    """Bundle part shared by all parameter tangents.

    E^W_i = (lam/m) DX_H(K_{i+1}(.+w/m)) W_{i+1}(.+w/m) * dT
            + D^2 phi_{T/m}(K_i)[W_i, dK_i]  (+ extra_i),
    solved by the linearized bundle system.
    """
    m, N = state.m, state.N
    lam = state.lam
    EW = np.empty((m, N, 2 * state.n))
    for i in range(m):
        jac_w = model.jacobian_columns(frame.K_shift[i],
                                       frame.W_shift[i][:, None, :])[:, 0, :]
        res = flow_grid(model, state.K[i].values.T.copy(), state.T / m,
                        cfg.integrator, second=(state.W[i].values.T.copy(),
                                                dK[i]),
                        workers=cfg.workers, chunk=cfg.chunk)
        EW[i] = (lam / m) * jac_w * dT + res.second_action
    if extra is not None:
        EW += extra
    dW, dlam, info = solve_bundle_system(state, frame, EW, cfg)
    return dW, dlam, info


def tangent_T(model, state: TorusState, frame: AdaptedFrame,
              cfg: NewtonConfig = NewtonConfig()) -> TangentData:
    """Derivatives of (K, W, lambda) with respect to the flying time T."""
    m, n = state.m, state.n
    s2 = frame.x_scale
    e = np.zeros(n - 1)
    e[-1] = s2
    rhs1_const = np.broadcast_to(-e / m, frame.S1.shape[:2] + (n - 1,)).copy()
    twist_rhs = np.concatenate([-e / m, [0.0]])
    dK, _, _ = _tangent_curve_part(state, frame, rhs1_const, twist_rhs,
                                   "isochronous", cfg)
    dW, dlam, info = _bundle_tangent(model, state, frame, dK, 1.0, cfg=cfg)
    return TangentData(tag="T", dK=dK, dW=dW, dT=1.0, dlam=dlam,
                       linear_residual=info["linear_residual"])


def tangent_h(model, state: TorusState, frame: AdaptedFrame,
              cfg: NewtonConfig = NewtonConfig()) -> TangentData:
    """Derivatives with respect to the energy h (isoenergetic border)."""
    m, n = state.m, state.n
    rhs1_const = np.zeros(frame.S1.shape[:2] + (n - 1,))
    twist_rhs = np.concatenate([np.zeros(n - 1), [-1.0]])  # energy row = 1
    dK, dtau, _ = _tangent_curve_part(state, frame, rhs1_const, twist_rhs,
                                      "isoenergetic", cfg)
    dT = m * dtau
    dW, dlam, info = _bundle_tangent(model, state, frame, dK, dT, cfg=cfg)
    return TangentData(tag="h", dK=dK, dW=dW, dT=dT, dlam=dlam, dtau=dtau,
                       linear_residual=info["linear_residual"])


def tangent_omega(model, state: TorusState, frame: AdaptedFrame,
                  cfg: NewtonConfig = NewtonConfig()) -> TangentData:
    """Derivatives with respect to the rotation number, at fixed energy."""
    m, N, n = state.m, state.N, state.n
    s1 = float(frame.column_scales[0])
    rhs1_const = np.zeros((m, N, n - 1))
    rhs1_const[:, :, : n - 2] = s1 / m
    twist_rhs = np.zeros(n)
    twist_rhs[: n - 2] = s1 / m
    dK, dtau, _ = _tangent_curve_part(state, frame, rhs1_const, twist_rhs,
                                      "isoenergetic", cfg)
    dT = m * dtau
    # extra bundle forcing: -(lam/m) DW_{i+1}(theta + w/m)
    extra = np.empty((m, N, 2 * n))
    for i in range(m):
        c = rotate_coeffs(derivative_coeffs(state.W[(i + 1) % m].coeffs, N), N,
                          state.omega / m)
        extra[i] = -(state.lam / m) * to_samples(c, N).T
    dW, dlam, info = _bundle_tangent(model, state, frame, dK, dT, extra, cfg)
    return TangentData(tag="omega", dK=dK, dW=dW, dT=dT, dlam=dlam,
                       dtau=dtau, domega=1.0,
                       linear_residual=info["linear_residual"])


_TANGENTS = {"T": tangent_T, "h": tangent_h, "omega": tangent_omega}


def tangent(model, state, frame, tag, cfg=NewtonConfig()) -> TangentData:
    try:
        fn = _TANGENTS[tag]
    except KeyError:
        raise ValueError(f"unknown continuation tag {tag!r}") from None
    return fn(model, state, frame, cfg)


# -- noble rotation numbers ------------------------------------------------------

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def nobilize(x: float, tol: float = 1.6e-4, max_terms: int = 40) -> float:
    """Replace x by a nearby noble number within absolute tolerance.

    The continued fraction of x is truncated at the earliest position from
    which continuing with all ones stays within ``tol``; the all-ones tail
    evaluates through the golden ratio.
    """
    if not 0.0 < x < 1.0:
        raise ValueError("nobilize expects a number in (0, 1)")
    a = []
    y = x
    p_prev, q_prev = 1, 0
    p, q = 0, 1  # convergents of [0; a1, a2, ...]
    best = None
    for _ in range(max_terms):
        y = 1.0 / y
        digit = int(np.floor(y))
        if digit < 1:
            break
        a.append(digit)
        p, p_prev = digit * p + p_prev, p
        q, q_prev = digit * q + q_prev, q
        noble = (p * _GOLDEN + p_prev) / (q * _GOLDEN + q_prev)
        if abs(noble - x) <= tol:
            return float(noble)
        best = noble
        y -= digit
        if y <= 1e-15:
            break
    if best is None:
        raise NumericalError(f"could not nobilize {x} within {tol}")
    return float(best)


# -- one continuation step -------------------------------------------------------

@dataclass(frozen=True)
class ContinuationConfig:
    """Step-size, grid-size and stopping control for family runs."""

    alpha0: float = 1e-3
    alpha_min: float = 1e-5
    eps: float = 1e-7
    eps_w: float = 1e-5
    eps1: float = 1e-8
    eps2: float = 1e-12
    n_des: int = 4
    n_alpha: int = 5
    N_min: int = 32
    N_max: int = 8192
    max_tori: int = 100
    calabi_floor: float = 1e-3
    calabi_arm: float = 1e-2
    nobilize_tol: float = 1.6e-4
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        if not self.eps2 < self.eps1 < self.eps:
            raise ValueError("tolerances must satisfy eps2 < eps1 < eps")

    def corrector(self, tag: str, **kw) -> NewtonConfig:
        mode = "isochronous" if tag == "T" else "isoenergetic"
        return replace(self.newton, eps=self.eps, eps_w=self.eps_w,
                       mode=mode, **kw)


@dataclass
class StepResult:
    state: TorusState
    alpha_used: float
    alpha_next: float
    n_it: int
    n_halvings: int
    err: float
    err_w: float
    tangent: TangentData


def _predict(state: TorusState, tan: TangentData, step: float,
             omega_new: float | None = None) -> TorusState:
    pred = state.shifted(np.swapaxes(tan.dK, 1, 2), np.swapaxes(tan.dW, 1, 2),
                         tan.dT, tan.dlam, scale=step)
    if omega_new is not None:
        pred = pred.replace(omega=omega_new)
    return pred


def _predictor_for(model, state, tan, cfg, tag, alpha):
    norm = compound_tangent_norm(tan)
    step = alpha / norm
    omega_new = None
    if tag == "omega":
        omega_new = nobilize(state.omega + step, cfg.nobilize_tol)
        step = omega_new - state.omega
        if step == 0.0:
            raise NumericalError(
                "nobilized rotation step collapsed to zero; decrease "
                "nobilize_tol or increase alpha")
    pred = _predict(state, tan, step, omega_new)
    if tag == "h":
        pred = pred.replace(
            h=float(np.mean(model.hamiltonian(pred.K[0].values.T))))
    return pred


def continuation_step(model, state: TorusState, cfg: ContinuationConfig,
                      tag: str, alpha: float) -> StepResult:
    """One predictor/corrector step with step-size and grid-size control.

    On corrector failure the step size is halved up to ``n_alpha`` times,
    then the grid is doubled and the whole step restarts; if the corrected
    torus is over-resolved the grid is halved while the error stays within
    the acceptance band, and when it cannot reach the band the grid is
    doubled and re-refined (another step-size halving and restart if even
    that fails).  On acceptance alpha is rescaled by n_des/n_it.
    """
    ncfg = cfg.corrector(tag)
    n_halvings = 0
    failures: list = []
    for _ in range(40):  # bounded restarts (N doublings, alpha halvings)
        frame = build_frame(model, state, integrator=ncfg.integrator,
                            divisor_floor=ncfg.divisor_floor,
                            workers=ncfg.workers, chunk=ncfg.chunk)
        tan = tangent(model, state, frame, tag, ncfg)
        corrected = None
        while True:
            pred = _predictor_for(model, state, tan, cfg, tag, alpha)
            try:
                corrected, reports = refine(model, pred, ncfg)
                n_it = max(1, sum(1 for r in reports if r.kind == "torus"))
                break
            except NumericalError as exc:
                failures.append(str(exc))
                if n_halvings >= cfg.n_alpha:
                    break
                alpha *= 0.5
                n_halvings += 1
        if corrected is None:
            if 2 * state.N > cfg.N_max:
                raise ConvergenceError(
                    f"continuation step failed at alpha = {alpha:.3e} with "
                    f"the grid limit N = {cfg.N_max} reached "
                    f"(last: {failures[-1]})")
            state = state.resample(2 * state.N)
            continue

        E, err, _ = torus_error(model, corrected, ncfg)
        if err < cfg.eps2:
            while corrected.N > cfg.N_min:
                candidate = corrected.resample(corrected.N // 2)
                _, err_c, _ = torus_error(model, candidate, ncfg)
                if err_c <= cfg.eps1:
                    corrected, err = candidate, err_c
                else:
                    break
        elif err > cfg.eps1:
            doubled_ok = True
            while err > cfg.eps1:
                if 2 * corrected.N > cfg.N_max:
                    break
                corrected = corrected.resample(2 * corrected.N)
                try:
                    corrected, extra = refine(model, corrected,
                                              replace(ncfg, eps=cfg.eps1))
                    n_it += max(1, sum(1 for r in extra if r.kind == "torus"))
                except NumericalError as exc:
                    failures.append(str(exc))
                    doubled_ok = False
                    break
                _, err, _ = torus_error(model, corrected, ncfg)
            if not doubled_ok:
                if n_halvings >= cfg.n_alpha:
                    raise ConvergenceError(
                        "re-refinement after grid doubling failed and the "
                        f"step-size budget is exhausted (last: {failures[-1]})")
                alpha *= 0.5
                n_halvings += 1
                continue

        frame = build_frame(model, corrected, integrator=ncfg.integrator,
                            divisor_floor=ncfg.divisor_floor,
                            workers=ncfg.workers, chunk=ncfg.chunk)
        _, err_w = bundle_error(model, corrected, frame)
        alpha_next = alpha * cfg.n_des / n_it
        return StepResult(state=corrected, alpha_used=alpha,
                          alpha_next=alpha_next, n_it=n_it,
                          n_halvings=n_halvings, err=err, err_w=err_w,
                          tangent=tan)
    raise ConvergenceError("continuation step exhausted its restarts")


@dataclass
class FamilyLog:
    """Stopping reason and per-step summary of one family run."""

    stop_reason: str = "max_tori"
    steps: list = field(default_factory=list)


def run_family(model, seed_state: TorusState, cfg: ContinuationConfig,
               tag: str, sink: Callable[[TorusState, dict], None],
               alpha: float | None = None, start_seq: int = 0,
               parent_seq: int = -1) -> FamilyLog:
    """Run continuation steps until a stopping criterion fires.

    ``sink(state, info)`` persists each accepted torus; ``info`` carries
    seq, alpha bookkeeping and errors.  The Calabi floor only arms after
    |C1| first exceeds ``calabi_arm``, so families born at small amplitude
    are not stopped at birth.
    """
    from .observables import calabi_2d

    log = FamilyLog()
    state = seed_state
    armed = False
    seq = start_seq
    parent = parent_seq
    while seq - start_seq < cfg.max_tori:
        if alpha is not None and alpha < cfg.alpha_min:
            log.stop_reason = "alpha_floor"
            break
        try:
            res = continuation_step(model, state, cfg, tag,
                                    cfg.alpha0 if alpha is None else alpha)
        except NumericalError as exc:
            log.stop_reason = f"step_failure: {exc}"
            break
        state, alpha = res.state, res.alpha_next
        C1, C2 = calabi_2d(model, state, state.generator,
                           integrator=cfg.newton.integrator,
                           workers=cfg.newton.workers)
        info = dict(seq=seq, parent_seq=parent, tag=tag,
                    alpha_used=res.alpha_used, alpha_next=res.alpha_next,
                    n_it=res.n_it, err=res.err, err_w=res.err_w, C1=C1, C2=C2)
        sink(state, info)
        log.steps.append(info)
        parent = seq
        seq += 1
        if abs(C1) >= cfg.calabi_arm:
            armed = True
        if armed and abs(C1) < cfg.calabi_floor:
            log.stop_reason = "calabi_floor"
            break
    return log

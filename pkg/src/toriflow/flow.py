"""Adaptive Runge-Kutta-Fehlberg 7(8) integration of the Hamiltonian flow.

One stepper serves four kinds of systems, all autonomous:

  * the flow alone (dimension 2n),
  * the flow with its first variational applied to k column vectors
    (dimension 2n + 2n k), used for transported frames and bundles,
  * the flow with the full first variational (k = 2n columns),
  * the flow with the second variational applied bilinearly to a fixed
    pair (u, v): state (z, A, B, C) with Adot = DX A, Bdot = DX B,
    Cdot = DX C + D2X[A, B], dimension 8n.

Whole grids of initial conditions integrate as one batch: each trajectory
keeps its own time, step size and acceptance history, so the results are
exactly those of integrating each point alone, while every stage is
evaluated with vectorized elementwise arithmetic.  Because the model
derivative applies are elementwise too, per-point output is bitwise
independent of batch composition; worker pools only dispatch fixed-size
chunks and cannot change any result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError
from .fourier import CurveMap

__all__ = ["IntegratorConfig", "FlowResult", "flow_point", "flow_with_jacobian",
           "flow_columns", "flow_second_action", "flow_grid", "GridFlow"]

# Fehlberg 7(8), 13 stages.  The high-order solution propagates; the
# embedded difference 41/840 (k0 + k10 - k11 - k12) estimates the error.
_C = np.array([0.0, 2 / 27, 1 / 9, 1 / 6, 5 / 12, 1 / 2, 5 / 6, 1 / 6,
               2 / 3, 1 / 3, 1.0, 0.0, 1.0])

_A = [
    [],
    [2 / 27],
    [1 / 36, 1 / 12],
    [1 / 24, 0.0, 1 / 8],
    [5 / 12, 0.0, -25 / 16, 25 / 16],
    [1 / 20, 0.0, 0.0, 1 / 4, 1 / 5],
    [-25 / 108, 0.0, 0.0, 125 / 108, -65 / 27, 125 / 54],
    [31 / 300, 0.0, 0.0, 0.0, 61 / 225, -2 / 9, 13 / 900],
    [2.0, 0.0, 0.0, -53 / 6, 704 / 45, -107 / 9, 67 / 90, 3.0],
    [-91 / 108, 0.0, 0.0, 23 / 108, -976 / 135, 311 / 54, -19 / 60, 17 / 6, -1 / 12],
    [2383 / 4100, 0.0, 0.0, -341 / 164, 4496 / 1025, -301 / 82, 2133 / 4100,
     45 / 82, 45 / 164, 18 / 41],
    [3 / 205, 0.0, 0.0, 0.0, 0.0, -6 / 41, -3 / 205, -3 / 41, 3 / 41, 6 / 41, 0.0],
    [-1777 / 4100, 0.0, 0.0, -341 / 164, 4496 / 1025, -289 / 82, 2193 / 4100,
     51 / 82, 33 / 164, 12 / 41, 0.0, 1.0],
]

_B8 = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 34 / 105, 9 / 35, 9 / 35, 9 / 280,
                9 / 280, 0.0, 41 / 840, 41 / 840])

_ERR_COEF = 41 / 840
_N_STAGES = 13
_SAFETY = 0.9
_FAC_MIN = 0.1
_FAC_MAX = 5.0


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-control parameters of the RKF78 integrator."""

    abs_tol: float = 1e-13
    rel_tol: float = 1e-13
    initial_step: float = 1e-2
    max_steps: int = 100_000
    h_floor: float = 1e-14
    method: str = "rkf78"

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("integrator tolerances must be positive")
        if self.method != "rkf78":
            raise ValueError(f"unknown integration method {self.method!r}")


@dataclass
class FlowResult:
    """Endpoint of a flow evaluation with optional derivative data."""

    endpoint: np.ndarray
    jacobian: np.ndarray | None = None
    columns: np.ndarray | None = None
    second_action: np.ndarray | None = None
    steps: int = 0
    rejected: int = 0


def _rkf78_batch(rhs, y0: np.ndarray, t, cfg: IntegratorConfig):
    """Integrate dy/dt = rhs(y) from 0 to t for a batch of trajectories.

    y0 has shape (B, d); ``t`` is a scalar or a (B,) array of per-trajectory
    target times.  Returns (y, steps, rejected) with per-trajectory step
    counts.  Each trajectory follows its own adaptive step sequence, so the
    result for a point does not depend on what else is in the batch.
    """
    y0 = np.asarray(y0, dtype=float)
    B, d = y0.shape
    y = y0.copy()
    steps = np.zeros(B, dtype=int)
    rejected = np.zeros(B, dtype=int)
    t = np.broadcast_to(np.asarray(t, dtype=float), (B,)).copy()
    if B == 0 or np.all(t == 0.0):
        return y, steps, rejected

    sign = np.where(t >= 0, 1.0, -1.0)
    tau = np.zeros(B)
    h = sign * np.minimum(abs(cfg.initial_step), np.abs(t))
    done = t == 0.0
    total = 0

    while not np.all(done):
        total += 1
        if total > cfg.max_steps:
            raise IntegrationError(
                f"exceeded {cfg.max_steps} integration steps",
                indices=np.flatnonzero(~done))
        idx = np.flatnonzero(~done)
        ya = y[idx]
        ha = h[idx]
        rem = t[idx] - tau[idx]
        clipped = np.abs(ha) >= np.abs(rem)
        ha = np.where(clipped, rem, ha)
        hcol = ha[:, None]

        k = [rhs(ya)]
        for s in range(1, _N_STAGES):
            acc = _A[s][0] * k[0]
            for j in range(1, s):
                a = _A[s][j]
                if a != 0.0:
                    acc = acc + a * k[j]
            k.append(rhs(ya + hcol * acc))

        inc = _B8[5] * k[5]
        for s in (6, 7, 8, 9, 11, 12):
            inc = inc + _B8[s] * k[s]
        y_new = ya + hcol * inc
        err_vec = hcol * (_ERR_COEF * (k[0] + k[10] - k[11] - k[12]))
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(ya), np.abs(y_new))
        err = np.max(np.abs(err_vec) / scale, axis=1)
        err = np.where(np.isfinite(err), err, np.inf)

        accept = err <= 1.0
        with np.errstate(divide="ignore"):
            fac = _SAFETY * err ** (-0.125)
        fac = np.clip(np.where(np.isfinite(fac), fac, _FAC_MAX), _FAC_MIN, _FAC_MAX)
        h_next = ha * fac

        if np.any(np.abs(h_next[~accept]) < cfg.h_floor):
            bad = idx[np.flatnonzero((~accept) & (np.abs(h_next) < cfg.h_floor))]
            raise IntegrationError(
                "step size collapsed below floor (singularity approach?)",
                indices=bad)

        ia = idx[accept]
        y[ia] = y_new[accept]
        tau[ia] = tau[ia] + ha[accept]
        steps[ia] += 1
        finished = np.zeros(len(idx), dtype=bool)
        finished[accept] = clipped[accept]
        fin = idx[finished]
        done[fin] = True
        tau[fin] = t[fin]
        rejected[idx[~accept]] += 1
        h[idx] = h_next
    return y, steps, rejected


# -- right-hand sides ---------------------------------------------------------

def _rhs_point(model):
    def rhs(y):
        return model.vector_field(y)
    return rhs


def _rhs_columns(model, k):
    dim = 2 * model.n

    def rhs(y):
        B = y.shape[0]
        z = y[:, :dim]
        cols = y[:, dim:].reshape(B, k, dim)
        out = np.empty_like(y)
        out[:, :dim] = model.vector_field(z)
        out[:, dim:] = model.jacobian_columns(z, cols).reshape(B, k * dim)
        return out
    return rhs


def _rhs_second(model):
    dim = 2 * model.n

    def rhs(y):
        z = y[:, :dim]
        u = y[:, dim:2 * dim]
        v = y[:, 2 * dim:3 * dim]
        w = y[:, 3 * dim:]
        out = np.empty_like(y)
        out[:, :dim] = model.vector_field(z)
        cols = np.stack([u, v, w], axis=1)
        dcols = model.jacobian_columns(z, cols)
        out[:, dim:2 * dim] = dcols[:, 0]
        out[:, 2 * dim:3 * dim] = dcols[:, 1]
        out[:, 3 * dim:] = dcols[:, 2] + model.hessian_action(z, u, v)
        return out
    return rhs


# -- single-point wrappers -----------------------------------------------------

def flow_point(model, z0, t, cfg: IntegratorConfig = IntegratorConfig()) -> FlowResult:
    """phi_t(z0)."""
    z0 = np.asarray(z0, dtype=float)
    y, s, r = _rkf78_batch(_rhs_point(model), z0[None, :], t, cfg)
    return FlowResult(endpoint=y[0], steps=int(s[0]), rejected=int(r[0]))


def flow_columns(model, z0, t, columns, cfg: IntegratorConfig = IntegratorConfig()) -> FlowResult:
    """phi_t(z0) together with Dphi_t(z0) applied to the given columns.

    ``columns`` has shape (k, 2n); the result's ``columns`` matches.
    """
    dim = 2 * model.n
    z0 = np.asarray(z0, dtype=float)
    cols = np.atleast_2d(np.asarray(columns, dtype=float))
    k = cols.shape[0]
    y0 = np.concatenate([z0, cols.reshape(k * dim)])
    y, s, r = _rkf78_batch(_rhs_columns(model, k), y0[None, :], t, cfg)
    return FlowResult(endpoint=y[0, :dim],
                      columns=y[0, dim:].reshape(k, dim),
                      steps=int(s[0]), rejected=int(r[0]))


def flow_with_jacobian(model, z0, t, cfg: IntegratorConfig = IntegratorConfig()) -> FlowResult:
    """phi_t(z0) and the full Jacobian Dphi_t(z0)."""
    dim = 2 * model.n
    res = flow_columns(model, z0, t, np.eye(dim), cfg)
    # transported basis vectors are the Jacobian's columns
    res.jacobian = res.columns.T.copy()
    return res


def flow_second_action(model, z0, t, u, v, cfg: IntegratorConfig = IntegratorConfig()) -> FlowResult:
    """phi_t, Dphi_t u, Dphi_t v and D^2 phi_t(z0)[u, v]."""
    dim = 2 * model.n
    z0 = np.asarray(z0, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    y0 = np.concatenate([z0, u, v, np.zeros(dim)])
    y, s, r = _rkf78_batch(_rhs_second(model), y0[None, :], t, cfg)
    return FlowResult(endpoint=y[0, :dim],
                      columns=y[0, dim:3 * dim].reshape(2, dim),
                      second_action=y[0, 3 * dim:],
                      steps=int(s[0]), rejected=int(r[0]))


# -- grid evaluation -----------------------------------------------------------

@dataclass
class GridFlow:
    """Per-grid-point flow results in input grid order."""

    endpoints: np.ndarray                 # (N, 2n)
    columns: np.ndarray | None = None     # (N, k, 2n)
    second_action: np.ndarray | None = None  # (N, 2n)
    steps: np.ndarray | None = None
    rejected: np.ndarray | None = None


DEFAULT_CHUNK = 64


def _grid_points(curve) -> np.ndarray:
    if isinstance(curve, CurveMap):
        return curve.values.T.copy()
    pts = np.asarray(curve, dtype=float)
    if pts.ndim != 2:
        raise ValueError("curve must be a CurveMap or an (N, 2n) array")
    return pts


def flow_grid(model, curve, t, cfg: IntegratorConfig = IntegratorConfig(), *,
              columns=None, second=None, workers: int = 1,
              chunk: int = DEFAULT_CHUNK) -> GridFlow:
    """Map the flow over all grid points of a curve.

    ``curve`` is a CurveMap or an (N, 2n) array of points, and ``t`` a
    common flow time or an (N,) array of per-point times.  Optional
    ``columns`` (N, k, 2n) are transported by the first variational;
    ``second`` = (U, V) with U, V of shape (N, 2n) requests the second
    variational action D^2 phi[U_j, V_j] per point.  Work is split into
    fixed-size chunks regardless of ``workers``, so results are identical
    for any worker count.
    """
    if columns is not None and second is not None:
        raise ValueError("columns and second are mutually exclusive")
    pts = _grid_points(curve)
    N = pts.shape[0]
    dim = 2 * model.n
    times = np.broadcast_to(np.asarray(t, dtype=float), (N,))

    if columns is not None:
        cols = np.asarray(columns, dtype=float)
        k = cols.shape[1]
        y0 = np.concatenate([pts, cols.reshape(N, k * dim)], axis=1)
        rhs = _rhs_columns(model, k)
    elif second is not None:
        U, V = second
        y0 = np.concatenate([pts, np.asarray(U, float), np.asarray(V, float),
                             np.zeros((N, dim))], axis=1)
        rhs = _rhs_second(model)
    else:
        y0 = pts
        rhs = _rhs_point(model)

    bounds = [(i, min(i + chunk, N)) for i in range(0, N, chunk)]

    def run(b):
        lo, hi = b
        return _rkf78_batch(rhs, y0[lo:hi], times[lo:hi], cfg)

    try:
        if workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, bounds))
        else:
            parts = [run(b) for b in bounds]
    except IntegrationError as exc:
        raise IntegrationError(f"grid flow failed: {exc}", indices=exc.indices) from exc

    y = np.concatenate([p[0] for p in parts], axis=0)
    steps = np.concatenate([p[1] for p in parts])
    rejected = np.concatenate([p[2] for p in parts])

    out = GridFlow(endpoints=y[:, :dim], steps=steps, rejected=rejected)
    if columns is not None:
        out.columns = y[:, dim:].reshape(N, k, dim)
    elif second is not None:
        out.columns = y[:, dim:3 * dim].reshape(N, 2, dim)
        out.second_action = y[:, 3 * dim:]
    return out

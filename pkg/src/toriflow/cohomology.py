"""Spectral solvers for cohomological equations over an irrational rotation.

Two families of linear functional equations are diagonal in Fourier space:

  small divisors        xi(t) - xi(t + w)        = eta(t) - <eta>
  non-small divisors    lam xi(t) - mu xi(t + w) = eta(t),  |lam| != |mu|

together with their multiple-shooting versions coupling m unknowns through
the shift w/m.  The multiple versions are reduced to m independent single
equations by telescoping, which also limits roundoff propagation; each
telescoped equation is solved in the variable t + j w / m to keep the
number of translations down.

The solvers operate on coefficient arrays of shape (m, ..., N/2+1) so that
vector- or matrix-valued right-hand sides are handled componentwise in one
call.  Thin wrappers accept PeriodicFunction values.

Rational rotation numbers make exact non-resonance unenforceable, so a
configurable divisor floor stands in for the Diophantine condition; the
offending wavenumber is reported when the guard trips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDivisorError, ResonanceError
from .fourier import PeriodicFunction, rotate_coeffs, to_coeffs, to_samples, wavenumbers

__all__ = [
    "RotationNumber",
    "solve_small_divisor",
    "solve_multiple_small_divisor",
    "solve_non_small_divisor",
    "solve_multiple_non_small_divisor",
]

DEFAULT_DIVISOR_FLOOR = 1e-8


@dataclass(frozen=True)
class RotationNumber:
    """Rotation number in (0,1) with its resonance guard.

    The guard is the practical substitute for a Diophantine condition:
    the smallest |1 - e^{i 2 pi k omega}| over the active wavenumbers must
    stay above ``floor``.
    """

    omega: float
    floor: float = DEFAULT_DIVISOR_FLOOR

    def __post_init__(self):
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"rotation number must lie in (0,1), got {self.omega}")

    def min_divisor(self, N: int) -> tuple[float, int]:
        """Smallest small divisor modulus and its wavenumber for k <= N/2."""
        k = np.arange(1, N // 2 + 1)
        d = np.abs(1.0 - np.exp(2j * np.pi * k * self.omega))
        i = int(np.argmin(d))
        return float(d[i]), int(k[i])

    def check(self, N: int) -> None:
        d, k = self.min_divisor(N)
        if d < self.floor:
            raise ResonanceError(
                f"near-resonance at k={k}: |1 - e^(i2pi k omega)| = {d:.3e} "
                f"< floor {self.floor:.1e} (omega={self.omega!r})", k=k, divisor=d)


def _as_omega(omega) -> tuple[float, float]:
    if isinstance(omega, RotationNumber):
        return omega.omega, omega.floor
    return float(omega), DEFAULT_DIVISOR_FLOOR


def _small_divisors(omega: float, N: int, floor: float) -> np.ndarray:
    k = wavenumbers(N)
    d = 1.0 - np.exp(2j * np.pi * k * omega)
    bad = np.abs(d[1:]) < floor
    if np.any(bad):
        kb = int(np.argmax(bad)) + 1
        raise ResonanceError(
            f"near-resonance at k={kb}: |1 - e^(i2pi k omega)| = "
            f"{abs(d[kb]):.3e} < floor {floor:.1e}", k=kb, divisor=float(abs(d[kb])))
    return d


def r_op_coeffs(coeffs: np.ndarray, N: int, omega: float, floor: float) -> np.ndarray:
    """Zero-average solution of xi(t) - xi(t+w) = eta(t) - <eta> in coefficients."""
    d = _small_divisors(omega, N, floor)
    out = np.empty_like(coeffs, dtype=complex)
    out[..., 0] = 0.0
    out[..., 1:] = coeffs[..., 1:] / d[1:]
    return out


def small_divisor_coeffs(coeffs, N, omega, floor=DEFAULT_DIVISOR_FLOOR):
    """Single small-divisor solve; returns (xi_coeffs, <eta>)."""
    avg = coeffs[..., 0].real.copy()
    return r_op_coeffs(coeffs, N, omega, floor), avg


def multiple_small_divisor_coeffs(coeffs, N, omega, floor=DEFAULT_DIVISOR_FLOOR):
    """Multiple small-divisor solve on coefficients of shape (m, ..., K).

    Solves xi_i(t) - xi_{i+1}(t + w/m) = eta_i(t) - <eta> with
    <eta> = (1/m) sum_i <eta_i>, by telescoping each xi_j separately in the
    shifted variable t + j w / m.  Leg averages are chained from
    <xi_0> = 0.  Returns (xi_coeffs, <eta>).
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    m = coeffs.shape[0]
    avg = np.mean(coeffs[:, ..., 0].real, axis=0)
    eta = coeffs.copy()
    eta[..., 0] -= avg

    # g_l = eta_l translated by l w / m
    g = np.empty_like(eta)
    for l in range(m):
        g[l] = rotate_coeffs(eta[l], N, l * omega / m)

    d = _small_divisors(omega, N, floor)
    xi = np.empty_like(eta)
    leg_avg = np.zeros(eta.shape[1:-1])
    for j in range(m):
        s = np.zeros_like(eta[0])
        for l in range(j, j + m):
            wrap = l // m
            term = g[l % m]
            if wrap:
                term = rotate_coeffs(term, N, wrap * omega)
            s = s + term
        s[..., 0] = 0.0
        s[..., 1:] /= d[1:]
        s[..., 0] = leg_avg
        xi[j] = rotate_coeffs(s, N, -j * omega / m)
        leg_avg = leg_avg - eta[j, ..., 0].real
    return xi, avg


def _non_small_divisors(omega, N, lam, mu, floor):
    scale = max(abs(lam), abs(mu))
    if scale == 0.0 or abs(abs(lam) - abs(mu)) < floor * scale:
        raise DegenerateDivisorError(
            f"|lambda| = {abs(lam):.6e} too close to |mu| = {abs(mu):.6e}")
    k = wavenumbers(N)
    d = lam - mu * np.exp(2j * np.pi * k * omega)
    dmin = np.min(np.abs(d))
    if dmin < floor * scale:
        kb = int(np.argmin(np.abs(d)))
        raise DegenerateDivisorError(
            f"divisor |lambda - mu e^(i2pi k omega)| = {dmin:.3e} at k={kb}")
    return d


def non_small_divisor_coeffs(coeffs, N, omega, lam, mu, floor=DEFAULT_DIVISOR_FLOOR):
    """Single non-small-divisor solve lam xi - mu xi(.+w) = eta."""
    d = _non_small_divisors(omega, N, lam, mu, floor)
    return coeffs / d


def multiple_non_small_divisor_coeffs(coeffs, N, omega, lam, mu,
                                      floor=DEFAULT_DIVISOR_FLOOR):
    """Multiple non-small-divisor solve on coefficients of shape (m, ..., K).

    Solves lam xi_i(t) - mu xi_{i+1}(t + w/m) = eta_i(t).  Telescoping gives
    for each j the independent equation

        lam^m xi_j - mu^m xi_j(. + w) = sum_i mu^i lam^{m-1-i} eta_{j+i}(. + i w/m),

    evaluated at t + j w / m so the translated eta's are shared between legs.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    m = coeffs.shape[0]
    g = np.empty_like(coeffs)
    for l in range(m):
        g[l] = rotate_coeffs(coeffs[l], N, l * omega / m)

    d = _non_small_divisors(omega, N, lam ** m, mu ** m, floor)
    weights = [mu ** i * lam ** (m - 1 - i) for i in range(m)]
    xi = np.empty_like(coeffs)
    for j in range(m):
        s = np.zeros_like(coeffs[0])
        for i in range(m):
            l = j + i
            wrap = l // m
            term = g[l % m]
            if wrap:
                term = rotate_coeffs(term, N, wrap * omega)
            s = s + weights[i] * term
        xi[j] = rotate_coeffs(s / d, N, -j * omega / m)
    return xi


# -- PeriodicFunction wrappers ------------------------------------------------

def solve_small_divisor(eta: PeriodicFunction, omega):
    """Solve xi(t) - xi(t+w) = eta(t) - <eta> with <xi> = 0.

    Returns (xi, <eta>); the caller decides how to absorb the average.
    """
    w, floor = _as_omega(omega)
    xi_c, avg = small_divisor_coeffs(eta.coeffs, eta.N, w, floor)
    return PeriodicFunction.from_coeffs(xi_c, eta.N), float(avg)


def solve_multiple_small_divisor(etas, omega, m=None):
    """Multiple-shooting version of :func:`solve_small_divisor`.

    ``etas`` is a sequence of m PeriodicFunctions; returns (xis, <eta>) with
    <eta> the mean of the leg averages and <xi_0> = 0.
    """
    w, floor = _as_omega(omega)
    etas = list(etas)
    if m is not None and m != len(etas):
        raise ValueError(f"m={m} does not match {len(etas)} right-hand sides")
    N = etas[0].N
    coeffs = np.stack([e.coeffs for e in etas])
    xi_c, avg = multiple_small_divisor_coeffs(coeffs, N, w, floor)
    return [PeriodicFunction.from_coeffs(c, N) for c in xi_c], float(avg)


def solve_non_small_divisor(eta: PeriodicFunction, omega, lam, mu):
    """Solve lam xi(t) - mu xi(t+w) = eta(t), |lam| != |mu|."""
    w, floor = _as_omega(omega)
    xi_c = non_small_divisor_coeffs(eta.coeffs, eta.N, w, lam, mu, floor)
    return PeriodicFunction.from_coeffs(xi_c, eta.N)


def solve_multiple_non_small_divisor(etas, omega, m=None, lam=None, mu=None):
    """Multiple-shooting version of :func:`solve_non_small_divisor`."""
    w, floor = _as_omega(omega)
    etas = list(etas)
    if m is not None and m != len(etas):
        raise ValueError(f"m={m} does not match {len(etas)} right-hand sides")
    N = etas[0].N
    coeffs = np.stack([e.coeffs for e in etas])
    xi_c = multiple_non_small_divisor_coeffs(coeffs, N, w, lam, mu, floor)
    return [PeriodicFunction.from_coeffs(c, N) for c in xi_c]

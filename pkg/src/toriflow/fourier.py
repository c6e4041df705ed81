"""Dual grid/Fourier representation of real 1-periodic functions.

A function is held simultaneously as N samples on the uniform grid
theta_j = j/N and as the nonredundant half of its normalized DFT,

    c_k = (1/N) sum_j f(j/N) exp(-i 2 pi k j / N),   k = 0..N/2,

with c_0 real and c_{N/2} real (N is always even here).  Derivatives,
rotations f(theta + delta), averaging, tail cleaning and resampling are
all diagonal in coefficient space.

Grid sizes are restricted to powers of two so that halving/doubling the
grid during continuation is exact.  All arrays handed out are read-only;
every operation returns a new value.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PeriodicFunction", "CurveMap"]


def _check_grid_size(N: int) -> int:
    N = int(N)
    if N < 2 or (N & (N - 1)) != 0:
        raise ValueError(f"grid size must be a power of two >= 2, got {N}")
    return N


def to_coeffs(samples: np.ndarray) -> np.ndarray:
    """Normalized forward real DFT along the last axis."""
    return np.fft.rfft(samples, axis=-1) / samples.shape[-1]


def to_samples(coeffs: np.ndarray, N: int) -> np.ndarray:
    """Inverse of :func:`to_coeffs` on the N-point grid."""
    return np.fft.irfft(coeffs * N, n=N, axis=-1)


def wavenumbers(N: int) -> np.ndarray:
    return np.arange(N // 2 + 1)


def derivative_coeffs(coeffs: np.ndarray, N: int) -> np.ndarray:
    return coeffs * (2j * np.pi * wavenumbers(N))


def rotate_coeffs(coeffs: np.ndarray, N: int, delta: float) -> np.ndarray:
    return coeffs * np.exp(2j * np.pi * wavenumbers(N) * delta)


def clean_coeffs(coeffs: np.ndarray, keep: int) -> np.ndarray:
    """Zero every coefficient with wavenumber above ``keep``."""
    out = coeffs.copy()
    out[..., keep + 1:] = 0.0
    return out


def resample_coeffs(coeffs: np.ndarray, N: int, N_new: int) -> np.ndarray:
    """Spectral zero padding (up) or truncation (down).

    The Nyquist bin is halved on the way up and doubled (real part) on the
    way down, so that up-then-down is an exact identity and function values
    of band-limited inputs are preserved.
    """
    if N_new == N:
        return coeffs.copy()
    shape = coeffs.shape[:-1] + (N_new // 2 + 1,)
    out = np.zeros(shape, dtype=complex)
    if N_new > N:
        out[..., : N // 2] = coeffs[..., : N // 2]
        out[..., N // 2] = coeffs[..., N // 2] * 0.5
    else:
        out[...] = coeffs[..., : N_new // 2 + 1]
        out[..., N_new // 2] = 2.0 * coeffs[..., N_new // 2].real
    return out


def eval_coeffs(coeffs: np.ndarray, N: int, theta) -> np.ndarray:
    """Evaluate the trigonometric interpolant at arbitrary points.

    ``coeffs`` has shape (..., N/2+1); the result has shape (..., len(theta)).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    k = np.arange(1, N // 2)
    phases = np.exp(2j * np.pi * np.outer(k, theta))  # (N/2-1, P)
    out = 2.0 * np.real(coeffs[..., 1: N // 2] @ phases)
    out += coeffs[..., :1].real
    out += coeffs[..., N // 2:].real * np.cos(np.pi * N * theta)
    return out


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _hermitian_storage(coeffs: np.ndarray) -> np.ndarray:
    out = coeffs.astype(complex, copy=True)
    out[..., 0] = out[..., 0].real
    out[..., -1] = out[..., -1].real
    return out


class PeriodicFunction:
    """A real 1-periodic scalar function on a power-of-two grid.

    Construct from samples or coefficients; the other representation is
    synchronized lazily on first access.
    """

    def __init__(self, samples=None, coeffs=None, N=None):
        if samples is not None:
            samples = np.asarray(samples, dtype=float)
            self.N = _check_grid_size(samples.shape[-1])
            self._samples = _freeze(samples.copy())
            self._coeffs = None
        elif coeffs is not None:
            self.N = _check_grid_size(N)
            coeffs = np.asarray(coeffs)
            if coeffs.shape != (self.N // 2 + 1,):
                raise ValueError("coefficient array has wrong shape")
            self._coeffs = _freeze(_hermitian_storage(coeffs))
            self._samples = None
        else:
            raise ValueError("need samples or coeffs")

    @classmethod
    def from_samples(cls, values) -> "PeriodicFunction":
        return cls(samples=values)

    @classmethod
    def from_coeffs(cls, coeffs, N) -> "PeriodicFunction":
        return cls(coeffs=coeffs, N=N)

    @classmethod
    def zeros(cls, N) -> "PeriodicFunction":
        return cls(samples=np.zeros(N))

    @property
    def samples(self) -> np.ndarray:
        if self._samples is None:
            self._samples = _freeze(to_samples(self._coeffs, self.N))
        return self._samples

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = _freeze(to_coeffs(self._samples))
        return self._coeffs

    def derivative(self) -> "PeriodicFunction":
        return PeriodicFunction.from_coeffs(derivative_coeffs(self.coeffs, self.N), self.N)

    def rotate(self, delta: float) -> "PeriodicFunction":
        """Return theta -> f(theta + delta)."""
        return PeriodicFunction.from_coeffs(rotate_coeffs(self.coeffs, self.N, delta), self.N)

    def average(self) -> float:
        if self._samples is not None:
            return float(np.mean(self._samples))
        return float(self._coeffs[0].real)

    def clean_tail(self, keep: int | None = None) -> "PeriodicFunction":
        """Zero all wavenumbers above ``keep`` (default N/4)."""
        keep = self.N // 4 if keep is None else int(keep)
        return PeriodicFunction.from_coeffs(clean_coeffs(self.coeffs, keep), self.N)

    def resample(self, N_new: int) -> "PeriodicFunction":
        N_new = _check_grid_size(N_new)
        return PeriodicFunction.from_coeffs(resample_coeffs(self.coeffs, self.N, N_new), N_new)

    def eval(self, theta) -> np.ndarray:
        return eval_coeffs(self.coeffs, self.N, theta)

    def __repr__(self):
        return f"PeriodicFunction(N={self.N})"


class CurveMap:
    """A map T^1 -> R^{2n}, componentwise a :class:`PeriodicFunction`.

    Samples are a (2n, N) array with the FFT running along the grid axis
    for all components at once.
    """

    def __init__(self, values=None, coeffs=None, N=None):
        if values is not None:
            values = np.atleast_2d(np.asarray(values, dtype=float))
            self.dim = values.shape[0]
            self.N = _check_grid_size(values.shape[1])
            self.values = _freeze(values.copy())
            self._coeffs = None
        elif coeffs is not None:
            coeffs = np.atleast_2d(np.asarray(coeffs))
            self.dim = coeffs.shape[0]
            self.N = _check_grid_size(N)
            if coeffs.shape[1] != self.N // 2 + 1:
                raise ValueError("coefficient array has wrong shape")
            self._coeffs = _freeze(_hermitian_storage(coeffs))
            self.values = _freeze(to_samples(self._coeffs, self.N))
        else:
            raise ValueError("need values or coeffs")

    @classmethod
    def from_samples(cls, values) -> "CurveMap":
        return cls(values=values)

    @classmethod
    def from_coeffs(cls, coeffs, N) -> "CurveMap":
        return cls(coeffs=coeffs, N=N)

    @property
    def n(self) -> int:
        return self.dim // 2

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = _freeze(to_coeffs(self.values))
        return self._coeffs

    def component(self, i: int) -> PeriodicFunction:
        return PeriodicFunction.from_samples(self.values[i])

    def derivative(self) -> "CurveMap":
        return CurveMap.from_coeffs(derivative_coeffs(self.coeffs, self.N), self.N)

    def rotate(self, delta: float) -> "CurveMap":
        return CurveMap.from_coeffs(rotate_coeffs(self.coeffs, self.N, delta), self.N)

    def average(self) -> np.ndarray:
        return np.mean(self.values, axis=1)

    def clean_tail(self, keep: int | None = None) -> "CurveMap":
        keep = self.N // 4 if keep is None else int(keep)
        return CurveMap.from_coeffs(clean_coeffs(self.coeffs, keep), self.N)

    def resample(self, N_new: int) -> "CurveMap":
        N_new = _check_grid_size(N_new)
        return CurveMap.from_coeffs(resample_coeffs(self.coeffs, self.N, N_new), N_new)

    def eval(self, theta) -> np.ndarray:
        return eval_coeffs(self.coeffs, self.N, theta)

    def __repr__(self):
        return f"CurveMap(dim={self.dim}, N={self.N})"

"""Compound unknown of the multiple-shooting torus computation.

A state bundles the m invariant-curve legs K_i, the rank-1 bundle legs
W_i, the flying time T, the per-leg Floquet factor lambda (lambda^m is the
full-period multiplier of W) and the fixed rotation number omega.  States
are value objects: corrections build new instances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import NumericalError
from .fourier import CurveMap

__all__ = ["TorusState"]


@dataclass(frozen=True)
class TorusState:
    K: tuple  # m CurveMaps
    W: tuple  # m CurveMaps
    T: float
    lam: float
    omega: float
    h: float
    generator: str = "vertical"  # which family of generators seeded this state

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(self.K))
        object.__setattr__(self, "W", tuple(self.W))
        if len(self.K) != len(self.W) or not self.K:
            raise ValueError("K and W must hold the same positive number of legs")
        Ns = {c.N for c in self.K} | {c.N for c in self.W}
        if len(Ns) != 1:
            raise ValueError("all legs must share one grid size")

    @property
    def m(self) -> int:
        return len(self.K)

    @property
    def N(self) -> int:
        return self.K[0].N

    @property
    def n(self) -> int:
        return self.K[0].n

    def replace(self, **kw) -> "TorusState":
        return replace(self, **kw)

    def with_curves(self, K=None, W=None, **kw) -> "TorusState":
        return replace(self, K=tuple(K if K is not None else self.K),
                       W=tuple(W if W is not None else self.W), **kw)

    def resample(self, N_new: int) -> "TorusState":
        """Change the grid size spectrally; tails are cleaned before halving."""
        K, W = self.K, self.W
        if N_new < self.N:
            K = [c.clean_tail() for c in K]
            W = [c.clean_tail() for c in W]
        return self.with_curves([c.resample(N_new) for c in K],
                                [c.resample(N_new) for c in W])

    def clean_tails(self) -> "TorusState":
        return self.with_curves([c.clean_tail() for c in self.K],
                                [c.clean_tail() for c in self.W])

    def rotate_phase(self, alpha: float) -> "TorusState":
        """Shift the angle origin; parameterizes the same torus."""
        return self.with_curves([c.rotate(alpha) for c in self.K],
                                [c.rotate(alpha) for c in self.W])

    def compound_norm(self) -> float:
        """sqrt(T^2 + lambda^2 + sum_i(<|K_i|^2> + <|W_i|^2>))."""
        acc = self.T ** 2 + self.lam ** 2
        for c in self.K + self.W:
            acc += float(np.mean(np.sum(c.values ** 2, axis=0)))
        return float(np.sqrt(acc))

    def shifted(self, dK: Sequence[np.ndarray], dW: Sequence[np.ndarray],
                dT: float, dlam: float, scale: float = 1.0) -> "TorusState":
        """State + scale * (dK, dW, dT, dlam) with grid-sample increments."""
        K = [CurveMap.from_samples(c.values + scale * d) for c, d in zip(self.K, dK)]
        W = [CurveMap.from_samples(c.values + scale * d) for c, d in zip(self.W, dW)]
        return self.with_curves(K, W, T=self.T + scale * dT,
                                lam=self.lam + scale * dlam)

    def check_hyperbolic(self, delta: float = 0.5) -> None:
        if 1.0 - delta <= abs(self.lam) <= 1.0 + delta:
            raise NumericalError(
                f"per-leg Floquet factor |lambda| = {abs(self.lam):.6f} inside "
                f"the hyperbolicity guard band [{1-delta}, {1+delta}]")

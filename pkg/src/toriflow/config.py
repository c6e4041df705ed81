"""Run configuration: one plain-text key=value file plus flag overrides.

Every tunable of a run lives in a single flat namespace so that a config
file captures the whole computation reproducibly.  Unknown keys are
rejected.  Command line flags override file values; the file path itself
defaults to the TORIFLOW_CONFIG environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .continuation import ContinuationConfig
from .errors import ConfigError
from .flow import IntegratorConfig
from .newton import NewtonConfig
from .rtbp import MU_EARTH_MOON, RtbpModel, RtbpParams

ENV_CONFIG = "TORIFLOW_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    """Flat bag of model, integrator, Newton and continuation settings."""

    # model
    mu: float = MU_EARTH_MOON
    singularity_guard: float = 1e-12
    # integrator
    abs_tol: float = 1e-13
    rel_tol: float = 1e-13
    initial_step: float = 1e-2
    max_steps: int = 100_000
    # parallelism
    workers: int = 1
    chunk: int = 64
    # torus discretization and seeding
    m: int = 4
    N: int = 64
    amplitude: float = 1e-3
    family: str = "vertical"
    rho: float = 0.031865
    # Newton
    epsilon: float = 1e-7
    epsilon_w: float = 1e-5
    max_newton: int = 12
    inner_rounds: int = 4
    divisor_floor: float = 1e-8
    cond_limit: float = 1e12
    hyperbolic_delta: float = 0.5
    constant_torsion: bool = False
    reuse_frame: bool = False
    # continuation
    alpha0: float = 1e-3
    alpha_min: float = 1e-5
    epsilon1: float = 1e-8
    epsilon2: float = 1e-12
    n_des: int = 4
    n_alpha: int = 5
    N_min: int = 32
    N_max: int = 8192
    max_tori: int = 100
    calabi_floor: float = 1e-3
    calabi_arm: float = 1e-2
    nobilize_tol: float = 1.6e-4
    # output
    out_dir: str = "."
    figures: bool = True

    def validate(self) -> "RunConfig":
        if not 0.0 < self.mu < 0.5:
            raise ConfigError(f"mu must lie in (0, 1/2), got {self.mu}")
        for key in ("abs_tol", "rel_tol", "epsilon", "epsilon_w", "epsilon1",
                    "epsilon2", "amplitude", "alpha0", "divisor_floor"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if not self.epsilon2 < self.epsilon1 < self.epsilon:
            raise ConfigError("need epsilon2 < epsilon1 < epsilon")
        for key in ("N", "N_min", "N_max"):
            v = getattr(self, key)
            if v < 2 or v & (v - 1):
                raise ConfigError(f"{key} must be a power of two, got {v}")
        if self.family not in ("vertical", "planar"):
            raise ConfigError(f"family must be vertical or planar, got {self.family}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        return self

    # -- derived objects ---------------------------------------------------

    def model(self) -> RtbpModel:
        return RtbpModel(RtbpParams(self.mu, self.singularity_guard))

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(abs_tol=self.abs_tol, rel_tol=self.rel_tol,
                                initial_step=self.initial_step,
                                max_steps=self.max_steps)

    def newton(self, mode: str = "isochronous") -> NewtonConfig:
        return NewtonConfig(eps=self.epsilon, eps_w=self.epsilon_w,
                            max_iters=self.max_newton, mode=mode,
                            constant_torsion=self.constant_torsion,
                            reuse_frame=self.reuse_frame,
                            integrator=self.integrator(),
                            divisor_floor=self.divisor_floor,
                            cond_limit=self.cond_limit,
                            hyperbolic_delta=self.hyperbolic_delta,
                            inner_rounds=self.inner_rounds,
                            workers=self.workers, chunk=self.chunk)

    def continuation(self) -> ContinuationConfig:
        return ContinuationConfig(alpha0=self.alpha0, alpha_min=self.alpha_min,
                                  eps=self.epsilon, eps_w=self.epsilon_w,
                                  eps1=self.epsilon1, eps2=self.epsilon2,
                                  n_des=self.n_des, n_alpha=self.n_alpha,
                                  N_min=self.N_min, N_max=self.N_max,
                                  max_tori=self.max_tori,
                                  calabi_floor=self.calabi_floor,
                                  calabi_arm=self.calabi_arm,
                                  nobilize_tol=self.nobilize_tol,
                                  newton=self.newton())


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, raw: str):
    kind = _FIELDS[key]
    if kind == "bool":
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def parse_config_file(path) -> dict:
    """Read key = value lines; '#' starts a comment; unknown keys reject."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _convert(key, value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from file + overrides (flags win)."""
    values: dict = {}
    path = path or os.environ.get(ENV_CONFIG)
    if path:
        values.update(parse_config_file(path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = val
    return RunConfig(**values).validate()

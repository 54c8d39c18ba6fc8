"""Scenario files: a flat ``key = value`` format.

Grammar: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored; list values are comma separated; keys may appear once.
Every key has a default (see :data:`DEFAULTS`), and the manifest written by
the CLI echoes the resolved value of every key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .engine import ObservationModel
from .errors import ConfigError
from .kernels import TimeGrid, VolterraKernel
from .spectral import SignalModel, basis_values, truncation_tail

__all__ = ["ScenarioConfig", "EXPERIMENTS", "parse_config", "load_config"]

EXPERIMENTS = ("solve", "filter", "mc-error", "riccati-compare", "oracle-compare", "uniqueness", "innovation-qv")


@dataclass(frozen=True)
class ScenarioConfig:
    experiment: str = "solve"
    horizon: float = 1.0
    steps: int = 256
    modes: int = 8
    kernel: str = "fbm"
    hurst: float = 0.75
    noise: str = "decay"  # decay | gains | kernel
    noise_decay: float = 1.0
    noise_scale: float = 1.0
    noise_gains: tuple = ()
    noise_kernel_length: float = 0.1
    spatial_grid: int = 64
    observation: str = "pointwise"  # pointwise | zero
    obs_points: tuple = (0.3, 0.7)
    seed: int = 20240601
    mc_paths: int = 2000
    workers: int = 1
    output_dir: str = "out"
    refinements: int = 1
    covariance_backend: str = "discrete"
    picard_max_iter: int = 100
    picard_tol: float = 1e-10
    export_table: bool = False
    tol_gap: float = 0.05
    tol_ratio_low: float = 1.6
    tol_ratio_high: float = 2.4
    tol_sigmas: float = 3.0
    tol_uniqueness: float = 3.0
    tol_picard_ratio: float = 0.9
    tol_qv: float = 0.05

    def grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps)

    def volterra_kernel(self) -> VolterraKernel:
        if self.kernel == "brownian":
            return VolterraKernel.brownian()
        return VolterraKernel.fbm(self.hurst)

    def signal_model(self) -> SignalModel:
        kern = self.volterra_kernel()
        if self.noise == "decay":
            return SignalModel.from_decay(self.modes, self.noise_decay, kern, self.noise_scale)
        if self.noise == "gains":
            return SignalModel.from_gains(self.noise_gains, kern)
        return SignalModel.from_kernel_samples(self.modes, *self._kernel_samples(), kern)

    def _kernel_samples(self):
        x = (np.arange(self.spatial_grid) + 0.5) / self.spatial_grid
        ell = self.noise_kernel_length
        samples = self.noise_scale * np.exp(-((x[:, None] - x[None, :]) ** 2) / (2 * ell * ell))
        return x, samples

    def observation_model(self) -> ObservationModel:
        if self.observation == "zero":
            return ObservationModel.zero(len(self.obs_points), self.modes)
        return ObservationModel(self.obs_points, self.modes)

    def truncation_tails(self) -> list:
        """Discarded stationary variance at each observation point (nan if not computable)."""
        if self.noise == "decay":
            rule = lambda k: self.noise_scale * k ** (-self.noise_decay)  # noqa: E731
            return [truncation_tail(rule, self.modes, z) for z in self.obs_points]
        if self.noise == "kernel":
            ext = min(8 * self.modes, 256)
            big = SignalModel.from_kernel_samples(ext, *self._kernel_samples(), self.volterra_kernel())
            q = np.diag(big.noise_covariance)[self.modes :]
            lam = big.eigenvalues[self.modes :]
            out = []
            for z in self.obs_points:
                e = basis_values(ext, z)[self.modes :]
                out.append(float(np.sum(q * e * e / (2 * lam))))
            return out
        return [math.nan for _ in self.obs_points]

    def items(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            yield f.name, str(v)


DEFAULTS = ScenarioConfig()
_FIELD_TYPES = {f.name: type(getattr(DEFAULTS, f.name)) for f in fields(ScenarioConfig)}
_LIST_ITEM = {"noise_gains": float, "obs_points": float}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return tuple(_LIST_ITEM[key](s) for s in items)
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            val = float(raw)
            if val != int(val):
                raise ValueError(raw)
            return int(val)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> ScenarioConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    if "noise_gains" in values and "noise" not in values:
        values["noise"] = "gains"
    if "noise_gains" in values and "modes" not in values:
        values["modes"] = len(values["noise_gains"])
    cfg = ScenarioConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def validate_config(cfg: ScenarioConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.experiment in EXPERIMENTS, f"experiment: must be one of {', '.join(EXPERIMENTS)}")
    need(math.isfinite(cfg.horizon) and cfg.horizon > 0, "horizon: must be > 0")
    need(cfg.steps >= 2, "steps: must be >= 2")
    need(cfg.modes >= 1, "modes: must be >= 1")
    need(cfg.kernel in ("fbm", "brownian"), "kernel: must be 'fbm' or 'brownian'")
    if cfg.kernel == "fbm":
        need(0.5 < cfg.hurst < 1.0, f"hurst: {cfg.hurst} is outside the admissible interval (1/2, 1)")
    need(cfg.noise in ("decay", "gains", "kernel"), "noise: must be 'decay', 'gains' or 'kernel'")
    if cfg.noise == "gains":
        need(len(cfg.noise_gains) == cfg.modes, "noise_gains: need exactly one gain per mode")
        need(all(g >= 0 and math.isfinite(g) for g in cfg.noise_gains), "noise_gains: gains must be finite and >= 0")
    if cfg.noise == "kernel":
        need(cfg.noise_kernel_length > 0, "noise_kernel_length: must be > 0")
        need(cfg.spatial_grid >= 2 * cfg.modes, "spatial_grid: must be at least twice the number of modes")
    need(cfg.noise_scale >= 0 and math.isfinite(cfg.noise_scale), "noise_scale: must be finite and >= 0")
    need(cfg.observation in ("pointwise", "zero"), "observation: must be 'pointwise' or 'zero'")
    need(len(cfg.obs_points) >= 1, "obs_points: at least one point is required")
    need(all(0.0 < z < 1.0 for z in cfg.obs_points), "obs_points: every z_j must lie in the open interval (0, 1)")
    need(cfg.seed >= 0, "seed: must be a nonnegative integer")
    need(cfg.mc_paths >= 2, "mc_paths: must be >= 2")
    need(cfg.workers >= 1, "workers: must be >= 1")
    need(cfg.refinements >= 1, "refinements: must be >= 1")
    need(cfg.covariance_backend in ("discrete", "continuous"), "covariance_backend: must be 'discrete' or 'continuous'")
    need(cfg.picard_max_iter >= 1, "picard_max_iter: must be >= 1")
    need(cfg.picard_tol > 0, "picard_tol: must be > 0")
    if cfg.experiment == "riccati-compare":
        need(cfg.kernel == "brownian", "kernel: riccati-compare requires kernel = brownian")
    if cfg.experiment == "oracle-compare":
        top = cfg.steps * 2**cfg.refinements
        need(top * (cfg.modes + len(cfg.obs_points)) <= 4096, "steps: oracle-compare grid too large for the exact oracle")

"""Volterra kernels, the fBm covariance density and scalar covariance quadrature.

A scalar Gauss-Volterra process has covariance

    R(s, t) = int_0^{s ^ t} K(s, r) K(t, r) dr

for a triangular kernel K.  Two kernels are provided: the Brownian kernel
(K = 1, so R(s, t) = min(s, t)) and the Molchan-Golosov type kernel of
fractional Brownian motion with Hurst index h in (1/2, 1),

    K_h(t, s) = c_h int_s^t (u / s)^(h - 1/2) (u - s)^(h - 3/2) du.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import DomainError

__all__ = [
    "KernelKind",
    "VolterraKernel",
    "TimeGrid",
    "fbm_constant",
    "kernel_evaluate",
    "kernel_matrix",
    "phi_h",
    "scalar_covariance",
    "fbm_covariance",
]


class KernelKind(str, enum.Enum):
    BROWNIAN = "brownian"
    FBM = "fbm"


@dataclass(frozen=True)
class VolterraKernel:
    """Triangular kernel K(t, s), 0 < s <= t.

    Use the :meth:`brownian` and :meth:`fbm` constructors.
    """

    kind: KernelKind
    hurst: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.FBM:
            if self.hurst is None or not 0.5 < float(self.hurst) < 1.0:
                raise DomainError(
                    f"hurst must lie in the open interval (1/2, 1), got {self.hurst}"
                )
            object.__setattr__(self, "hurst", float(self.hurst))
        elif self.hurst is not None:
            raise DomainError("the Brownian kernel takes no Hurst parameter")

    @classmethod
    def brownian(cls) -> "VolterraKernel":
        return cls(KernelKind.BROWNIAN)

    @classmethod
    def fbm(cls, hurst: float) -> "VolterraKernel":
        return cls(KernelKind.FBM, hurst)

    @property
    def alpha(self) -> float:
        """Regularity exponent; h - 1/2 for fBm and 1/2 by convention for Brownian."""
        if self.kind is KernelKind.FBM:
            return self.hurst - 0.5
        return 0.5

    @property
    def is_brownian(self) -> bool:
        return self.kind is KernelKind.BROWNIAN

    def describe(self) -> str:
        if self.is_brownian:
            return "brownian"
        return f"fbm(h={self.hurst!r})"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i T / n_t on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.steps) + 0.5) * self.dt

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)

    def node_index(self, t: float) -> int:
        """Index of the node closest to ``t``."""
        i = int(round(t / self.dt))
        if not 0 <= i <= self.steps:
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        return i


def fbm_constant(hurst: float) -> float:
    """Normalisation c_h making R(t, t) = t^(2h)."""
    h = hurst
    return float(np.sqrt(h * (2 * h - 1) / special.beta(2 - 2 * h, h - 0.5)))


def kernel_evaluate(kernel: VolterraKernel, t: float, s: float) -> float:
    """K(t, s) for a single pair by adaptive quadrature.

    The (u - s)^(h - 3/2) endpoint singularity is removed with the
    substitution u = s + v^(1/alpha), after which the integrand
    (1 + v^(1/alpha) / s)^alpha is bounded.
    """
    if t < s:
        raise DomainError(f"kernel requires s <= t, got t={t}, s={s}")
    if kernel.is_brownian:
        if s < 0:
            raise DomainError(f"kernel requires s >= 0, got s={s}")
        return 0.0 if t == 0.0 else 1.0
    if s <= 0:
        raise DomainError(f"fBm kernel is singular at s=0 (got s={s})")
    if t == s:
        return 0.0
    a = kernel.alpha
    upper = (t - s) ** a
    knee = min(upper, s**a)

    def integrand(v):
        return (1.0 + v ** (1.0 / a) / s) ** a

    points = [knee] if 0 < knee < upper else None
    val, _ = integrate.quad(integrand, 0.0, upper, points=points, epsabs=0.0, epsrel=1e-12, limit=200)
    return fbm_constant(kernel.hurst) * val / a


def kernel_matrix(kernel: VolterraKernel, t, s) -> np.ndarray:
    """Vectorised K(t, s) via the closed form

        K_h(t, s) = (c_h / alpha) (t - s)^alpha 2F1(-alpha, alpha; alpha + 1; 1 - t/s).

    Entries with s > t are returned as 0 (the kernel is triangular).
    """
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    out = np.zeros(t.shape)
    inside = s < t
    if kernel.is_brownian:
        out[inside] = 1.0
        return out
    if np.any(s[inside] <= 0):
        raise DomainError("fBm kernel is singular at s=0")
    a = kernel.alpha
    ti, si = t[inside], s[inside]
    out[inside] = (
        fbm_constant(kernel.hurst) / a * (ti - si) ** a * special.hyp2f1(-a, a, a + 1.0, 1.0 - ti / si)
    )
    return out


def phi_h(h: float, lam, r):
    """fBm covariance density h(2h - 1)|lam - r|^(2h - 2)."""
    if not 0.5 < h < 1.0:
        raise DomainError(f"h must lie in (1/2, 1), got {h}")
    diff = np.abs(np.asarray(lam, dtype=float) - np.asarray(r, dtype=float))
    if np.any(diff == 0):
        raise DomainError("phi_h is singular on the diagonal lam == r")
    val = h * (2 * h - 1) * diff ** (2 * h - 2)
    return float(val) if np.ndim(val) == 0 else val


def fbm_covariance(h: float, s, t):
    """Closed-form fBm covariance (s^2h + t^2h - |t - s|^2h) / 2."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (s ** (2 * h) + t ** (2 * h) - np.abs(t - s) ** (2 * h))


@lru_cache(maxsize=32)
def _graded_rule(alpha: float, cells: int):
    """Product rule on the graded mesh r_m = (m / M)^2 of [0, 1] for weight r^(-2 alpha).

    Returns the per-cell weights int r^(-2a) dr and the weighted centroids.
    """
    x = (np.arange(cells + 1) / cells) ** 2
    p = 1.0 - 2.0 * alpha
    w = (x[1:] ** p - x[:-1] ** p) / p
    c = (x[1:] ** (p + 1) - x[:-1] ** (p + 1)) / (p + 1) / w
    return w, c


def scalar_covariance(kernel: VolterraKernel, s: float, t: float, cells: int = 512) -> float:
    """R(s, t) = int_0^{s ^ t} K(s, r) K(t, r) dr.

    Brownian: exactly min(s, t).  fBm: K(s, r) K(t, r) behaves like r^(-2 alpha)
    at r = 0, so each cell of the graded mesh integrates that weight exactly
    and samples the bounded remainder K K r^(2 alpha) at the weighted centroid.
    """
    if s < 0 or t < 0:
        raise DomainError(f"times must be nonnegative, got s={s}, t={t}")
    m = min(s, t)
    if kernel.is_brownian:
        return float(m)
    if m == 0:
        return 0.0
    a = kernel.alpha
    w, c = _graded_rule(a, cells)
    r = m * c
    g = kernel_matrix(kernel, s, r) * kernel_matrix(kernel, t, r) * r ** (2 * a)
    return float(m ** (1 - 2 * a) * np.dot(w, g))

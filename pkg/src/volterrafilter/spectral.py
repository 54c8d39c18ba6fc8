"""Stochastic heat equation on (0, 1) in the Dirichlet sine basis.

The signal d(theta) = Laplacian(theta) dt + G dB_t with theta_0 = 0 is
truncated to the eigenfunctions e_k(x) = sqrt(2) sin(k pi x), k = 1..N, with
eigenvalues -(k pi)^2.  Mode k then obeys an Ornstein-Uhlenbeck type
equation driven by independent scalar Volterra processes mixed by G.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .errors import DomainError
from .kernels import TimeGrid, VolterraKernel, kernel_matrix

__all__ = [
    "SpectralField",
    "SignalModel",
    "RegularityReport",
    "basis_values",
    "evaluate_at",
    "validate_regularity",
    "volterra_increment_matrix",
    "mode_response_matrices",
    "signal_covariance",
    "continuous_mode_covariance",
    "pointwise_covariance",
    "truncation_tail",
]


def basis_values(modes: int, z) -> np.ndarray:
    """e_k(z) for k = 1..modes; shape z.shape + (modes,)."""
    z = np.asarray(z, dtype=float)
    if np.any((z <= 0) | (z >= 1)):
        raise DomainError(f"evaluation points must lie in (0, 1), got {z}")
    k = np.arange(1, modes + 1)
    return np.sqrt(2.0) * np.sin(np.pi * z[..., None] * k)


@dataclass(frozen=True)
class SpectralField:
    """Truncated field sum_k coeffs[k] e_{k+1}(x)."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    @property
    def modes(self) -> int:
        return self.coeffs.shape[-1]

    def __call__(self, z):
        return evaluate_at(self, z)


def evaluate_at(field, z):
    """Point value of a spectral field.

    ``field`` is a SpectralField or an array of coefficients (..., N); for an
    array of points the result has shape (..., len(z)).
    """
    coeffs = field.coeffs if isinstance(field, SpectralField) else np.asarray(field, dtype=float)
    e = basis_values(coeffs.shape[-1], z)
    val = coeffs @ e.T if np.ndim(z) else coeffs @ e
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class SignalModel:
    """Truncated heat-equation signal.

    ``coupling`` is the N x N matrix G_kl = <e_k, G e_l>; a diagonal matrix
    means the modes are independent with gains g_k = G_kk.
    """

    coupling: np.ndarray
    kernel: VolterraKernel
    description: str = ""
    _diag: bool = field(init=False, repr=False)

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.coupling, dtype=float))
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise DomainError(f"coupling must be square, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DomainError("coupling contains non-finite entries")
        g.setflags(write=False)
        object.__setattr__(self, "coupling", g)
        object.__setattr__(self, "_diag", bool(np.all(g == np.diag(np.diag(g)))))

    @classmethod
    def from_gains(cls, gains, kernel: VolterraKernel, description: str = "") -> "SignalModel":
        gains = np.asarray(gains, dtype=float)
        if gains.ndim != 1 or gains.size == 0:
            raise DomainError("gains must be a non-empty sequence")
        if np.any(gains < 0):
            raise DomainError("noise gains must be nonnegative")
        return cls(np.diag(gains), kernel, description or "diagonal")

    @classmethod
    def from_decay(cls, modes: int, power: float, kernel: VolterraKernel, scale: float = 1.0) -> "SignalModel":
        """Diagonal G with g_k = scale * k^(-power)."""
        gains = scale * np.arange(1, modes + 1, dtype=float) ** (-power)
        return cls.from_gains(gains, kernel, f"decay(power={power!r}, scale={scale!r})")

    @classmethod
    def from_kernel_samples(cls, modes: int, x, samples, kernel: VolterraKernel) -> "SignalModel":
        """Integral operator (Gf)(x) = int k(x, y) f(y) dy from samples k(x_a, x_b).

        ``x`` must be the midpoints of a uniform partition of (0, 1); the
        reduction G_kl = <e_k, G e_l> uses the midpoint rule.
        """
        x = np.asarray(x, dtype=float)
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (x.size, x.size):
            raise DomainError("kernel samples must be a square table over the grid x")
        h = 1.0 / x.size
        e = basis_values(modes, x)  # (M, N)
        g = h * h * e.T @ samples @ e
        return cls(g, kernel, f"kernel-samples(grid={x.size})")

    @property
    def modes(self) -> int:
        return self.coupling.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        """lambda_k = (k pi)^2; the generator acts as -lambda_k on mode k."""
        return (np.pi * np.arange(1, self.modes + 1)) ** 2

    @property
    def is_diagonal(self) -> bool:
        return self._diag

    @property
    def gains(self) -> np.ndarray:
        if not self._diag:
            raise DomainError("gains are only defined for a diagonal noise operator")
        return np.diag(self.coupling).copy()

    @property
    def noise_covariance(self) -> np.ndarray:
        """Q = G G^T in spectral coordinates."""
        return self.coupling @ self.coupling.T

    def hs_norm(self, u) -> np.ndarray:
        """Hilbert-Schmidt norm |S(u) G| of the truncated operator."""
        u = np.asarray(u, dtype=float)
        rows = np.sum(self.coupling**2, axis=1)
        return np.sqrt(np.exp(-2.0 * u[..., None] * self.eigenvalues) @ rows)


@dataclass(frozen=True)
class RegularityReport:
    alpha: float
    gamma: float
    delta_range: tuple
    pointwise_ok: bool
    hilbert_schmidt: bool
    gain_exponent: float
    window_gamma: float

    @property
    def margin(self) -> float:
        """alpha + 1/2 - gamma - d/4 with d = 1; positive iff pointwise evaluation is admissible."""
        return self.alpha + 0.5 - self.gamma - 0.25


def validate_regularity(model: SignalModel, grid: TimeGrid) -> RegularityReport:
    """Estimate the decay exponent gamma of |S(u) G| and test the embedding criterion.

    For row norms r_k of G growing like k^p the sum
    sum_k r_k^2 exp(-2 (k pi)^2 u) behaves like u^(-(2p + 1)/2) as u -> 0, so
    gamma = (2p + 1)/4; when p < -1/2 the operator is Hilbert-Schmidt and
    gamma = 0.  The exponent p is a least-squares fit of log r_k on log k.
    The direct log-log fit of |S(u) G| on [dt, T] is reported as
    ``window_gamma`` for reference; on a truncated basis it mixes in the
    exponential decay of the slowest mode and is not used for the decision.
    """
    rows = np.sqrt(np.sum(model.coupling**2, axis=1))
    k = np.arange(1, model.modes + 1)
    nz = rows > 0
    if nz.sum() >= 2:
        p = float(np.polyfit(np.log(k[nz]), np.log(rows[nz]), 1)[0])
    else:
        p = -np.inf
    hilbert_schmidt = p < -0.5
    gamma = 0.0 if hilbert_schmidt else (2.0 * p + 1.0) / 4.0

    u = np.geomspace(grid.dt, grid.horizon, 200)
    hs = model.hs_norm(u)
    if np.all(hs > 0):
        window_gamma = float(-np.polyfit(np.log(u), np.log(hs), 1)[0])
    else:
        window_gamma = 0.0

    alpha = model.kernel.alpha
    upper = alpha + 0.5 - gamma
    return RegularityReport(
        alpha=alpha,
        gamma=gamma,
        delta_range=(0.0, upper),
        pointwise_ok=bool(upper > 0.25),
        hilbert_schmidt=bool(hilbert_schmidt),
        gain_exponent=p,
        window_gamma=window_gamma,
    )


@lru_cache(maxsize=16)
def _increment_matrix(kernel: VolterraKernel, horizon: float, steps: int) -> np.ndarray:
    grid = TimeGrid(horizon, steps)
    t = grid.nodes[1:]
    s = grid.midpoints
    lower = kernel_matrix(kernel, t[:, None], s[None, :])  # b_{t_i} = sum_l lower[i-1, l] dW_l
    inc = lower.copy()
    inc[1:] -= lower[:-1]
    inc.setflags(write=False)
    return inc


def volterra_increment_matrix(kernel: VolterraKernel, grid: TimeGrid) -> np.ndarray:
    """Matrix B with (db_0, .., db_{n-1}) = B (dW_0, .., dW_{n-1}).

    b_{t_i} = sum_{l < i} K(t_i, s_l) dW_l with s_l the midpoint of step l.
    """
    return _increment_matrix(kernel, grid.horizon, grid.steps)


def _propagate(lam_dt_decay: float, inputs: np.ndarray) -> np.ndarray:
    """x_{i+1} = decay x_i + inputs_i with x_0 = 0, along axis 0; returns n+1 rows."""
    padded = np.concatenate([inputs, np.zeros((1,) + inputs.shape[1:])], axis=0)
    return sps.lfilter([0.0, 1.0], [1.0, -lam_dt_decay], padded, axis=0)


def mode_response_matrices(model: SignalModel, grid: TimeGrid) -> np.ndarray:
    """M with theta^k_{t_i} = sum_c G_kc sum_l M[k, i, l] dW^c_l (unit-gain response).

    Shape (N, n_t + 1, n_t); row 0 is zero because theta_0 = 0.
    """
    inc = volterra_increment_matrix(model.kernel, grid)
    decay = np.exp(-model.eigenvalues * grid.dt)
    return np.stack([_propagate(d, inc) for d in decay])


def signal_covariance(model: SignalModel, grid: TimeGrid, backend: str = "discrete", cells: int = 16) -> np.ndarray:
    """Node covariance tables of the mode processes.

    Diagonal G: array C of shape (N, n_t+1, n_t+1), C[k, i, l] = E[theta^k_i theta^k_l].
    Mode-coupled G (discrete backend only): shape (N, N, n_t+1, n_t+1) with
    C[k, k', i, l] = E[theta^k_i theta^k'_l].

    ``backend="discrete"`` is the exact covariance of the simulated recursion;
    ``backend="continuous"`` integrates the continuous-time model (diagonal G only).
    """
    if backend == "continuous":
        if not model.is_diagonal:
            raise DomainError("the continuous backend supports diagonal noise operators only")
        return np.stack(
            [
                g * g * continuous_mode_covariance(model.kernel, lam, grid, cells)
                for g, lam in zip(model.gains, model.eigenvalues)
            ]
        )
    if backend != "discrete":
        raise ValueError(f"unknown backend {backend!r}")
    resp = mode_response_matrices(model, grid)
    dt = grid.dt
    if model.is_diagonal:
        g2 = model.gains**2
        return np.stack([g2[k] * dt * resp[k] @ resp[k].T for k in range(model.modes)])
    q = model.noise_covariance
    n = model.modes
    out = np.empty((n, n, grid.steps + 1, grid.steps + 1))
    for k in range(n):
        for kk in range(k, n):
            block = q[k, kk] * dt * resp[k] @ resp[kk].T
            out[k, kk] = block
            out[kk, k] = block.T
    return out


def continuous_mode_covariance(kernel: VolterraKernel, lam: float, grid: TimeGrid, cells: int = 16) -> np.ndarray:
    """Unit-gain covariance int int e^{-lam(s-r)} e^{-lam(t-u)} d<b>(r, u) on grid nodes.

    Brownian: the one-dimensional OU integral in closed form.
    fBm: the square is cut into a fine mesh with ``cells`` cells per time
    step; each cell pair carries the exact integral of
    h(2h-1)|u - r|^(2h-2), from the antiderivative -|u - r|^(2h) / 2, so the
    diagonal singularity is integrated analytically.  The exponential factors
    are sampled at cell midpoints.
    """
    t = grid.nodes
    if kernel.is_brownian:
        ti, tl = t[:, None], t[None, :]
        return (np.exp(-lam * np.abs(ti - tl)) - np.exp(-lam * (ti + tl))) / (2.0 * lam)
    if cells < 16:
        raise DomainError("the continuous backend needs at least 16 quadrature cells per time step")
    h = kernel.hurst
    m = grid.steps * cells
    delta = grid.dt / cells
    d = np.arange(m, dtype=float)
    # exact integral of the density over two cells whose offsets differ by d
    w = 0.5 * delta ** (2 * h) * (np.abs(d + 1) ** (2 * h) + np.abs(d - 1) ** (2 * h) - 2 * d ** (2 * h))
    mid = (np.arange(m) + 0.5) * delta
    v = np.exp(-lam * (t[:, None] - mid[None, :]))
    v[mid[None, :] > t[:, None]] = 0.0
    wf = np.concatenate([w[::-1], w[1:]])
    vw = sps.fftconvolve(v, wf[None, :], mode="full", axes=1)[:, m - 1 : 2 * m - 1]
    cov = vw @ v.T
    return 0.5 * (cov + cov.T)


def pointwise_covariance(tables: np.ndarray, model: SignalModel, z_rows, z_cols=None) -> np.ndarray:
    """E[theta_{t_i}(z_p) theta_{t_l}(z_q)] assembled from mode tables; shape (n_t+1, n_t+1, P, Q)."""
    z_cols = z_rows if z_cols is None else z_cols
    er = basis_values(model.modes, np.atleast_1d(z_rows))
    ec = basis_values(model.modes, np.atleast_1d(z_cols))
    if tables.ndim == 3:
        return np.einsum("pk,kil,qk->ilpq", er, tables, ec)
    return np.einsum("pk,kmil,qm->ilpq", er, tables, ec)


def truncation_tail(gain_rule, modes: int, z, kmax: int = 100_000) -> float:
    """Stationary variance discarded by truncation, sum_{k>N} g_k^2 e_k(z)^2 / (2 lambda_k).

    ``gain_rule`` maps an integer array k to gains g_k.
    """
    k = np.arange(modes + 1, kmax + 1, dtype=float)
    g = np.asarray(gain_rule(k), dtype=float)
    e2 = 2.0 * np.sin(np.pi * k * z) ** 2
    return float(np.sum(g * g * e2 / (2.0 * (np.pi * k) ** 2)))

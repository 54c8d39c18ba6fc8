"""Kalman-Bucy baseline for Wiener-driven signals.

With a Brownian driver the error covariance P(t) (spectral coordinates)
solves dP/dt = Lambda P + P Lambda + Q - P a^T a P, Lambda = diag(-lambda_k),
and the filter is d hat theta = Lambda hat theta dt + P a^T (d xi - a hat theta dt).
Both are stepped with the semigroup applied exactly to the linear part.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ObservationModel
from .errors import DomainError, GridMismatchError
from .kernels import TimeGrid
from .spectral import SignalModel

__all__ = ["RiccatiState", "riccati_integrate", "kb_filter", "scalar_riccati", "lyapunov_variance", "write_riccati_csv"]


@dataclass(frozen=True)
class RiccatiState:
    t: float
    P: np.ndarray


def riccati_integrate(model: SignalModel, obs: ObservationModel, grid: TimeGrid, scheme: str = "lawson") -> list:
    """Error covariance at every node, P(0) = 0.

    ``scheme="lawson"``:  P+ = E P E + dt (Q - P a^T a P), E = diag(exp(-lambda_k dt)).
    This matches the covariance of the simulated discrete model exactly when a = 0.
    ``scheme="etd"``: the source term is weighted by int_0^dt E(s) . E(s) ds
    instead of dt, which keeps the stationary point of the continuous
    equation and is more accurate for the continuous-time P(t).
    """
    if not model.kernel.is_brownian:
        raise DomainError("the Riccati baseline applies to Brownian drivers only")
    if obs.modes != model.modes:
        raise GridMismatchError("observation and model disagree on the number of modes")
    dt = grid.dt
    lam = model.eigenvalues
    e = np.exp(-lam * dt)
    q = model.noise_covariance
    a = obs.coeffs
    ata = a.T @ a
    if scheme == "lawson":
        weight = np.full((lam.size, lam.size), dt)
    elif scheme == "etd":
        s = lam[:, None] + lam[None, :]
        weight = -np.expm1(-s * dt) / s
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    p = np.zeros_like(q)
    states = [RiccatiState(0.0, p)]
    for i in range(grid.steps):
        p = e[:, None] * p * e[None, :] + weight * (q - p @ ata @ p)
        p = 0.5 * (p + p.T)
        states.append(RiccatiState(float(grid.nodes[i + 1]), p))
    return states


def kb_filter(states, obs: ObservationModel, xi: np.ndarray, grid: TimeGrid, model: SignalModel) -> np.ndarray:
    """hat theta_{i+1} = E hat theta_i + E P_i a^T (d xi_i - a hat theta_i dt); shape (..., n_t + 1, N)."""
    xi = np.asarray(xi, dtype=float)
    if len(states) != grid.steps + 1 or xi.shape[-2:] != (grid.steps + 1, obs.size):
        raise GridMismatchError("Riccati states, observation path and grid disagree")
    dt = grid.dt
    e = np.exp(-model.eigenvalues * dt)
    a = obs.coeffs
    dxi = np.diff(xi, axis=-2)
    theta = np.zeros(xi.shape[:-2] + (grid.steps + 1, obs.modes))
    for i in range(grid.steps):
        gain = e[:, None] * (states[i].P @ a.T)
        innov = dxi[..., i, :] - dt * theta[..., i, :] @ a.T
        theta[..., i + 1, :] = e * theta[..., i, :] + innov @ gain.T
    return theta


def scalar_riccati(t, lam: float, c: float, g: float):
    """Closed-form solution of P' = -2 lam P - c^2 P^2 + g^2, P(0) = 0."""
    t = np.asarray(t, dtype=float)
    mu = np.sqrt(lam * lam + c * c * g * g)
    x = np.exp(-2.0 * mu * t)
    return g * g * (1.0 - x) / ((mu + lam) + (mu - lam) * x)


def lyapunov_variance(t, lam, g):
    """Unobserved mode variance g^2 (1 - exp(-2 lam t)) / (2 lam)."""
    t = np.asarray(t, dtype=float)
    return g * g * -np.expm1(-2.0 * lam * t) / (2.0 * lam)


def write_riccati_csv(path, states, obs: ObservationModel) -> None:
    """Columns t, P_k_k for each mode, then the observed-coordinate covariance entries."""
    a = obs.evaluation
    n_modes = states[0].P.shape[0]
    n = obs.size
    cols = ["t"] + [f"P_{k + 1}_{k + 1}" for k in range(n_modes)] + [f"obs_{p + 1}_{q + 1}" for p in range(n) for q in range(n)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for s in states:
            obs_cov = a @ s.P @ a.T
            vals = [s.t] + list(np.diag(s.P)) + list(obs_cov.ravel())
            fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")

"""Reproducible sample paths of the discrete signal/observation model.

Random streams
--------------
Every scalar noise sequence gets its own Philox (counter-based) generator
keyed by ``SeedSequence(seed, spawn_key=(purpose, path_index, channel))``.
``purpose`` is :data:`SIGNAL_STREAM` for the Volterra drivers (one channel
per mode) and :data:`OBSERVATION_STREAM` for the observation Wiener process
(channel j for component j).  Adding modes, observation points or paths
therefore never changes the draws of any other stream.

Discrete model on the grid t_i = i dt:

    b_{t_i}             = sum_{l < i} K(t_i, s_l) dW_l,     s_l = (l + 1/2) dt
    theta_{i+1}         = exp(-lambda dt) theta_i + G db_i,  theta_0 = 0
    xi_{i+1} - xi_i     = A theta_i dt + dW^obs_i,           xi_0 = 0
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .engine import ObservationModel
from .kernels import TimeGrid, VolterraKernel
from .spectral import SignalModel, _propagate, volterra_increment_matrix

__all__ = [
    "SIGNAL_STREAM",
    "OBSERVATION_STREAM",
    "stream",
    "signal_streams",
    "observation_streams",
    "simulate_volterra_increments",
    "simulate_signal",
    "simulate_observation",
    "PathBundle",
    "simulate_path",
    "simulate_batch",
    "write_paths_csv",
]

SIGNAL_STREAM = 0
OBSERVATION_STREAM = 1


def stream(seed: int, purpose: int, path_index: int, channel: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(path_index), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


def signal_streams(seed: int, path_index: int, modes: int) -> list:
    return [stream(seed, SIGNAL_STREAM, path_index, c) for c in range(modes)]


def observation_streams(seed: int, path_index: int, n_obs: int) -> list:
    return [stream(seed, OBSERVATION_STREAM, path_index, j) for j in range(n_obs)]


def _wiener_increments(rngs, grid: TimeGrid) -> np.ndarray:
    sd = np.sqrt(grid.dt)
    return np.stack([rng.normal(0.0, sd, grid.steps) for rng in rngs], axis=-1)


def simulate_volterra_increments(kernel: VolterraKernel, grid: TimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Increments db_0..db_{n-1} of one scalar Volterra path."""
    dw = rng.normal(0.0, np.sqrt(grid.dt), grid.steps)
    return volterra_increment_matrix(kernel, grid) @ dw


def _signal_from_increments(model: SignalModel, grid: TimeGrid, db: np.ndarray) -> np.ndarray:
    # db: (..., n_t, N) channel increments -> theta (..., n_t + 1, N)
    forcing = db @ model.coupling.T
    decay = np.exp(-model.eigenvalues * grid.dt)
    out = np.empty(forcing.shape[:-2] + (grid.steps + 1, model.modes))
    for k, d in enumerate(decay):
        out[..., k] = np.moveaxis(_propagate(d, np.moveaxis(forcing[..., k], -1, 0)), 0, -1)
    return out


def simulate_signal(model: SignalModel, grid: TimeGrid, rngs) -> np.ndarray:
    """Mode coefficients theta_{t_0..t_n}, shape (n_t + 1, N).

    ``rngs`` holds one generator per noise channel (see :func:`signal_streams`).
    """
    if len(rngs) != model.modes:
        raise ValueError(f"need {model.modes} signal streams, got {len(rngs)}")
    db = np.stack([simulate_volterra_increments(model.kernel, grid, r) for r in rngs], axis=-1)
    return _signal_from_increments(model, grid, db)


def simulate_observation(signal: np.ndarray, obs: ObservationModel, grid: TimeGrid, rngs):
    """Observation path xi (n_t + 1, n) and its noise increments dW (n_t, n)."""
    if len(rngs) != obs.size:
        raise ValueError(f"need {obs.size} observation streams, got {len(rngs)}")
    dw = _wiener_increments(rngs, grid)
    return _channel(signal, obs, grid, dw), dw


def _channel(signal: np.ndarray, obs: ObservationModel, grid: TimeGrid, dw: np.ndarray) -> np.ndarray:
    dxi = signal[..., :-1, :] @ obs.coeffs.T * grid.dt + dw
    xi = np.zeros(dxi.shape[:-2] + (grid.steps + 1, obs.size))
    xi[..., 1:, :] = np.cumsum(dxi, axis=-2)
    return xi


@dataclass(frozen=True)
class PathBundle:
    """One joint sample: ``signal`` (n_t+1, N), ``observation`` (n_t+1, n), ``obs_noise_increments`` (n_t, n)."""

    signal: np.ndarray
    observation: np.ndarray
    obs_noise_increments: np.ndarray
    seed: int
    path_index: int

    @property
    def observation_increments(self) -> np.ndarray:
        return np.diff(self.observation, axis=0)


def simulate_path(model: SignalModel, obs: ObservationModel, grid: TimeGrid, seed: int, path_index: int) -> PathBundle:
    theta, xi, dw = simulate_batch(model, obs, grid, seed, [path_index])
    return PathBundle(theta[0], xi[0], dw[0], int(seed), int(path_index))


def simulate_batch(model: SignalModel, obs: ObservationModel, grid: TimeGrid, seed: int, path_indices):
    """Vectorised :func:`simulate_path` over many paths.

    Returns (theta, xi, dw_obs) with a leading path axis.  Each path depends
    only on its own streams, so path p is bit-identical however the indices
    are batched.
    """
    path_indices = list(path_indices)
    inc = volterra_increment_matrix(model.kernel, grid)
    dw_sig = np.stack([_wiener_increments(signal_streams(seed, p, model.modes), grid) for p in path_indices])
    db = np.stack([inc @ d for d in dw_sig])
    theta = _signal_from_increments(model, grid, db)
    dw_obs = np.stack([_wiener_increments(observation_streams(seed, p, obs.size), grid) for p in path_indices])
    return theta, _channel(theta, obs, grid, dw_obs), dw_obs


def write_paths_csv(path, bundles, grid: TimeGrid) -> None:
    """Dump paths with columns path_index, t, mode_1..mode_N, xi_1..xi_n."""
    bundles = list(bundles)
    n_modes = bundles[0].signal.shape[1]
    n_obs = bundles[0].observation.shape[1]
    header = ["path_index", "t"] + [f"mode_{k + 1}" for k in range(n_modes)] + [f"xi_{j + 1}" for j in range(n_obs)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for b in bundles:
            for i, t in enumerate(grid.nodes):
                w.writerow([b.path_index, f"{t:.17g}"] + [f"{v:.17g}" for v in b.signal[i]] + [f"{v:.17g}" for v in b.observation[i]])

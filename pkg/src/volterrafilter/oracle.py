"""Exact Gaussian conditioning for the discrete model (small grids only).

The stacked vector [theta at nodes 1..i (all modes); d xi_0..d xi_{i-1}] is a
linear image of the underlying white noise, so its covariance is assembled
exactly and the filter is read off by Schur complements.  The assembly uses
dense matrix powers of the one-step propagator rather than the recursions of
the simulator, so it checks them as well as the engine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .engine import ObservationModel
from .errors import DomainError
from .kernels import TimeGrid
from .spectral import SignalModel, volterra_increment_matrix

__all__ = ["JointGaussian", "assemble_joint", "condition", "FilteredLaw", "filtered_law", "MAX_DIMENSION"]

MAX_DIMENSION = 4096


@dataclass(frozen=True)
class JointGaussian:
    """Covariance of [signal block; observation-increment block].

    Signal coordinate (node i, mode k) for i = 1..nodes sits at
    (i - 1) * N + k; observation increment (step l, component j) at
    nodes * N + l * n + j.
    """

    cov: np.ndarray
    nodes: int
    modes: int
    n_obs: int

    @property
    def dimension(self) -> int:
        return self.cov.shape[0]

    @property
    def signal_index(self) -> np.ndarray:
        return np.arange(self.nodes * self.modes)

    @property
    def obs_index(self) -> np.ndarray:
        return self.nodes * self.modes + np.arange(self.nodes * self.n_obs)

    def signal_at(self, node: int) -> np.ndarray:
        if not 1 <= node <= self.nodes:
            raise DomainError(f"node {node} outside 1..{self.nodes}")
        return (node - 1) * self.modes + np.arange(self.modes)

    def restrict(self, nodes: int) -> "JointGaussian":
        """Marginal joint of the first ``nodes`` nodes and increments."""
        keep = np.concatenate([np.arange(nodes * self.modes), self.nodes * self.modes + np.arange(nodes * self.n_obs)])
        return JointGaussian(self.cov[np.ix_(keep, keep)], nodes, self.modes, self.n_obs)


def _noise_map(model: SignalModel, obs: ObservationModel, grid: TimeGrid, nodes: int) -> np.ndarray:
    n_modes, n = model.modes, obs.size
    steps = nodes
    inc = volterra_increment_matrix(model.kernel, grid)[:steps, :steps]  # db = inc dW
    prop = np.diag(np.exp(-model.eigenvalues * grid.dt))
    powers = [np.eye(n_modes)]
    for _ in range(steps):
        powers.append(prop @ powers[-1])
    # theta_i = sum_{m < i} prop^(i-1-m) G db_m ; db^c_m = sum_l inc[m, l] dW^c_l
    signal_of_db = np.zeros((steps * n_modes, steps * n_modes))
    for i in range(1, steps + 1):
        for m in range(i):
            signal_of_db[(i - 1) * n_modes : i * n_modes, m * n_modes : (m + 1) * n_modes] = powers[i - 1 - m] @ model.coupling
    # db ordered (step, channel) from dW ordered (step, channel)
    db_of_dw = np.kron(inc, np.eye(n_modes))
    sig = signal_of_db @ db_of_dw
    a = obs.coeffs
    obs_rows = np.zeros((steps * n, steps * n_modes))
    for l in range(1, steps):  # d xi_l = a theta_l dt + dW^obs_l ; theta_0 = 0
        obs_rows[l * n : (l + 1) * n] = grid.dt * a @ sig[(l - 1) * n_modes : l * n_modes]
    top = np.hstack([sig, np.zeros((steps * n_modes, steps * n))])
    bottom = np.hstack([obs_rows, np.eye(steps * n)])
    return np.vstack([top, bottom])


def assemble_joint(model: SignalModel, obs: ObservationModel, grid: TimeGrid, nodes: int | None = None) -> JointGaussian:
    """Exact joint covariance up to node ``nodes`` (default: the whole grid)."""
    nodes = grid.steps if nodes is None else int(nodes)
    if not 1 <= nodes <= grid.steps:
        raise DomainError(f"nodes must be in 1..{grid.steps}")
    dim = nodes * (model.modes + obs.size)
    if dim > MAX_DIMENSION:
        raise DomainError(f"joint dimension {dim} exceeds the oracle limit {MAX_DIMENSION}")
    m = _noise_map(model, obs, grid, nodes)
    cov = grid.dt * m @ m.T
    return JointGaussian(0.5 * (cov + cov.T), nodes, model.modes, obs.size)


def condition(joint: JointGaussian, observed, signal_index=None, obs_index=None):
    """Conditional mean and covariance of the signal block given observed increments.

    Returns ``(mean, cov)``; ``observed`` may carry leading batch axes.
    """
    s = joint.signal_index if signal_index is None else np.asarray(signal_index)
    o = joint.obs_index if obs_index is None else np.asarray(obs_index)
    c = joint.cov
    c_oo = c[np.ix_(o, o)]
    c_so = c[np.ix_(s, o)]
    try:
        factor = linalg.cho_factor(c_oo, lower=True)
    except linalg.LinAlgError as exc:
        raise DomainError("observation block is not positive definite") from exc
    gain = linalg.cho_solve(factor, c_so.T).T
    y = np.asarray(observed, dtype=float)
    mean = y @ gain.T
    cov = c[np.ix_(s, s)] - gain @ c_so.T
    return mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class FilteredLaw:
    """Law of theta_{t_i} given d xi_0..d xi_{i-1} for every node.

    ``gains[i]`` maps the flattened increments (n_t * n,) to the conditional
    mean of the N modes at node i (columns of later increments are zero);
    ``cov[i]`` is the conditional covariance.  Node 0 is deterministic.
    """

    gains: np.ndarray
    cov: np.ndarray
    obs: ObservationModel

    def mean(self, xi: np.ndarray) -> np.ndarray:
        dxi = np.diff(np.asarray(xi, dtype=float), axis=-2)
        flat = dxi.reshape(dxi.shape[:-2] + (-1,))
        return np.einsum("ikm,...m->...ik", self.gains, flat)

    def observed_cov(self) -> np.ndarray:
        a = self.obs.evaluation
        return np.einsum("pk,ikl,ql->ipq", a, self.cov, a)


def filtered_law(model: SignalModel, obs: ObservationModel, grid: TimeGrid, joint: JointGaussian | None = None) -> FilteredLaw:
    """Conditioning on every prefix of increments from one Cholesky factorisation.

    With C_oo = L L^T and U = C_so L^{-T}, the prefix of length m satisfies
    C_{s,o[:m]} C_{o[:m]}^{-1} = U[:, :m] L[:m, :m]^{-1}.
    """
    joint = assemble_joint(model, obs, grid) if joint is None else joint
    c = joint.cov
    o = joint.obs_index
    s = joint.signal_index
    low = linalg.cholesky(c[np.ix_(o, o)], lower=True)
    u = linalg.solve_triangular(low, c[np.ix_(s, o)].T, lower=True).T
    n_modes, n = joint.modes, joint.n_obs
    size = joint.nodes + 1
    dim_o = o.size
    gains = np.zeros((size, n_modes, dim_o))
    cov = np.zeros((size, n_modes, n_modes))
    for i in range(1, size):
        rows = joint.signal_at(i)
        m = i * n
        ui = u[rows, :m]
        gains[i, :, :m] = linalg.solve_triangular(low[:m, :m], ui.T, lower=True, trans="T").T
        cov[i] = c[np.ix_(rows, rows)] - ui @ ui.T
    return FilteredLaw(gains, 0.5 * (cov + cov.transpose(0, 2, 1)), obs)

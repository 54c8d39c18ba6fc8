"""Error-covariance kernel on the triangle and the optimal linear filter.

For pointwise observation at z_1..z_n the kernel
Phi_{z_j}(t, s) = E[(theta_s - hat theta_s)(z_j) theta_t], t >= s, is a
field in space for every (t, s) and solves

    Phi_{z_j}(t, s) = E[theta_s(z_j) theta_t]
                      - sum_j' int_0^s Phi_{z_j'}(s, r)(z_j) Phi_{z_j'}(t, r) dr,

while the filter solves

    hat theta_t = sum_j int_0^t Phi_{z_j}(t, s) (d xi^j_s - hat theta_s(z_j) ds).

Both are discretised with the left rectangle rule on the time grid, which
makes the recursions explicit.

Storage layout: ``values[i, k, l, j]`` is coefficient k of Phi_{z_j}(t_i, t_l).
Keeping the s-index next to the observation index lets one matrix product
per column update every row at once.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, GridMismatchError
from .kernels import TimeGrid
from .spectral import SignalModel, SpectralField, basis_values, signal_covariance

__all__ = [
    "ObservationModel",
    "PriorCovariance",
    "KernelTable",
    "StreamingTable",
    "solve_covariance_equation",
    "solve_covariance_picard",
    "stream_table",
    "run_filter",
    "innovation_path",
    "load_table",
]

TABLE_MAGIC = b"PHIT"
TABLE_VERSION = 1
_HEADER = struct.Struct("<4s4i")


@dataclass(frozen=True)
class ObservationModel:
    """Point evaluations at z_1..z_n of an N-mode field.

    ``evaluation[j, k] = sqrt(2) sin((k + 1) pi z_j)`` reads the field at
    z_j; ``coeffs`` is the functional the channel actually observes,
    A theta = coeffs @ theta.  The two agree except for :meth:`zero`, whose
    channels observe nothing while the kernel is still indexed by the points.
    """

    points: tuple
    modes: int

    def __post_init__(self):
        pts = tuple(float(z) for z in np.atleast_1d(self.points))
        if not pts:
            raise DomainError("at least one observation point is required")
        if any(not 0.0 < z < 1.0 for z in pts):
            raise DomainError(f"observation points must lie in (0, 1), got {pts}")
        if len(set(pts)) < len(pts):
            warnings.warn("coincident observation points: the channel is redundant", stacklevel=2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "modes", int(self.modes))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def evaluation(self) -> np.ndarray:
        return basis_values(self.modes, np.array(self.points))

    @property
    def coeffs(self) -> np.ndarray:
        return self.evaluation

    @property
    def informative(self) -> bool:
        return True

    @classmethod
    def zero(cls, n: int, modes: int) -> "_ZeroObservation":
        """n observation channels carrying no information about the signal."""
        return _ZeroObservation(tuple(np.linspace(0.0, 1.0, n + 2)[1:-1]), modes)


class _ZeroObservation(ObservationModel):
    @property
    def coeffs(self) -> np.ndarray:
        return np.zeros((self.size, self.modes))

    @property
    def informative(self) -> bool:
        return False


def _check_dims(model: SignalModel, obs: ObservationModel):
    if obs.modes != model.modes:
        raise GridMismatchError(f"observation built for {obs.modes} modes, model has {model.modes}")


class PriorCovariance:
    """Prior slices E[theta_{t_i} theta_{t_l}(z_j)] in the table layout (i, k, l, j)."""

    def __init__(self, model: SignalModel, obs: ObservationModel, grid: TimeGrid, tables=None, backend="discrete"):
        _check_dims(model, obs)
        self.model = model
        self.obs = obs
        self.grid = grid
        self.a = obs.evaluation
        self.tables = signal_covariance(model, grid, backend=backend) if tables is None else tables

    def block(self, rows=slice(None), cols=slice(None)) -> np.ndarray:
        t = self.tables
        if t.ndim == 3:
            return np.einsum("krc,jk->rkcj", t[:, rows, cols], self.a)
        return np.einsum("kmrc,jm->rkcj", t[:, :, rows, cols], self.a)

    def column(self, l: int, start: int = 0) -> np.ndarray:
        """Slices for rows start..n_t of column l, shape (rows, N, n)."""
        return self.block(slice(start, None), slice(l, l + 1))[:, :, 0, :]

    def node_covariance(self) -> np.ndarray:
        """E[theta_{t_i}(z_p) theta_{t_i}(z_q)], shape (n_t+1, n, n).

        Same operation order as :meth:`KernelTable.error_covariance`, so an
        uninformative channel reproduces it bit for bit.
        """
        t = self.tables
        idx = np.arange(self.grid.steps + 1)
        if t.ndim == 3:
            diag = np.einsum("kr,jk->rkj", t[:, idx, idx], self.a)
        else:
            diag = np.einsum("kmr,jm->rkj", t[:, :, idx, idx], self.a)
        return _read_points(self.a, diag)

    def observed(self) -> np.ndarray:
        """E[theta_{t_i}(z_p) theta_{t_l}(z_q)], shape (n_t+1, n_t+1, n, n)."""
        t = self.tables
        if t.ndim == 3:
            return np.einsum("pk,kil,qk->ilpq", self.a, t, self.a)
        return np.einsum("pk,kmil,qm->ilpq", self.a, t, self.a)


def _read_points(e: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """out[i, p, q] = sum_k e[p, k] diag[i, k, q], with a fixed memory layout so results are reproducible."""
    return np.einsum("pk,ikq->ipq", e, np.ascontiguousarray(diag))


def _weights(size: int, rule: str) -> np.ndarray:
    """W[l, r]: quadrature weight of node r in int_0^{t_l} (in units of dt)."""
    r = np.arange(size)
    w = (r[None, :] < r[:, None]).astype(float)
    if rule == "left":
        return w
    if rule == "trapezoid":
        w[:, 0] = np.where(r > 0, 0.5, 0.0)
        w[r[1:], r[1:]] = 0.5
        return w
    raise ValueError(f"unknown rule {rule!r}")


def _quadratic_term(values: np.ndarray, a: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_r w[l, r] Phi(t_i, t_r) (a Phi(t_l, t_r))^T for every (i, l), in table layout."""
    size, n_modes, _, n = values.shape
    proj = np.einsum("jk,lkrm->ljrm", a, values) * weights[:, None, :, None]
    rhs = proj.transpose(2, 3, 0, 1).reshape(size * n, size * n)
    return (values.reshape(size * n_modes, size * n) @ rhs).reshape(size, n_modes, size, n)


def _triangle_mask(size: int) -> np.ndarray:
    return np.tril(np.ones((size, size)))[:, None, :, None]


@dataclass
class KernelTable:
    """Discretised Phi_{z_j}(t_i, t_l) on the triangle 0 <= l <= i <= n_t."""

    values: np.ndarray
    obs: ObservationModel
    grid: TimeGrid
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def phi(self, j: int, i: int, l: int) -> SpectralField:
        """Phi_{z_j}(t_i, t_l) with 0-based observation index j; rejects l > i."""
        if not 0 <= l <= i <= self.grid.steps:
            raise DomainError(f"Phi is defined on the triangle l <= i only, got i={i}, l={l}")
        return SpectralField(self.values[i, :, l, j].copy())

    def diagonal(self) -> np.ndarray:
        """Phi_{z_j}(t_i, t_i) for all i; shape (n_t + 1, N, n)."""
        idx = np.arange(self.grid.steps + 1)
        return self.values[idx, :, idx, :]

    def error_covariance(self, i: int | None = None) -> np.ndarray:
        """P(i)_{pq} = Phi_{z_q}(t_i, t_i)(z_p); one node or all nodes (n_t+1, n, n)."""
        a = self.obs.evaluation
        if i is not None:
            return _read_points(a, self.values[i, :, i, :][None])[0]
        return _read_points(a, self.diagonal())

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> None:
        """Columns j, i, l, k, value (j and k 1-based, node indices 0-based)."""
        v = self.values
        size, n_modes, _, n = v.shape
        with open(path, "w") as fh:
            fh.write("j,i,l,k,value\n")
            for j in range(n):
                for i in range(size):
                    for l in range(i + 1):
                        fh.writelines(f"{j + 1},{i},{l},{k + 1},{v[i, k, l, j]:.17g}\n" for k in range(n_modes))

    def save(self, path) -> None:
        """Binary: header (magic, version, n, n_t, N as little-endian int32) then float64 triangle values."""
        size, n_modes, _, n = self.values.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(TABLE_MAGIC, TABLE_VERSION, n, size - 1, n_modes))
            tri_i, tri_l = np.tril_indices(size)
            for j in range(n):
                fh.write(np.ascontiguousarray(self.values[tri_i, :, tri_l, j], dtype="<f8").tobytes())


def load_table(path, obs: ObservationModel, grid: TimeGrid) -> KernelTable:
    with open(path, "rb") as fh:
        magic, version, n, steps, n_modes = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != TABLE_MAGIC or version != TABLE_VERSION:
            raise ValueError(f"not a version-{TABLE_VERSION} kernel table: {path}")
        if (n, steps, n_modes) != (obs.size, grid.steps, obs.modes):
            raise GridMismatchError("stored table does not match the observation model or grid")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    size = steps + 1
    tri_i, tri_l = np.tril_indices(size)
    values = np.zeros((size, n_modes, size, n))
    blocks = payload.reshape(n, tri_i.size, n_modes)
    for j in range(n):
        values[tri_i, :, tri_l, j] = blocks[j]
    return KernelTable(values, obs, grid)


def _forward(column, a_eff: np.ndarray, dt: float, size: int, width: int, block: int = 64) -> np.ndarray:
    """Left-rectangle forward recursion in the s-index.

    ``column(l)`` gives the prior slice for rows l..n_t of column l,
    shape (size - l, width, n).  ``a_eff`` (n x width) maps stored values to
    point values.  Columns are processed in blocks: the contribution of all
    earlier blocks is one matrix product, the rest is swept column by column.
    """
    n = a_eff.shape[0]
    values = np.zeros((size, width, size, n))
    flat = values.reshape(size * width, size * n)
    for lo in range(0, size, block):
        hi = min(size, lo + block)
        for l in range(lo, hi):
            values[l:, :, l, :] = column(l)
        if lo:
            proj = np.einsum("pk,lkrj->rjlp", a_eff, values[lo:hi, :, :lo, :])
            corr = flat[lo * width :, : lo * n] @ proj.reshape(lo * n, (hi - lo) * n)
            values[lo:, :, lo:hi, :] -= dt * corr.reshape(size - lo, width, hi - lo, n)
            for l in range(lo + 1, hi):
                values[lo:l, :, l, :] = 0.0
        for l in range(lo + 1, hi):
            m = l - lo
            proj = (a_eff @ values[l, :, lo:l, :].reshape(width, m * n)).reshape(n, m, n)
            rhs = proj.transpose(1, 2, 0).reshape(m * n, n)
            corr = values[l:, :, lo:l, :].reshape((size - l) * width, m * n) @ rhs
            values[l:, :, l, :] -= dt * corr.reshape(size - l, width, n)
    return values


def _node_matrices_report(p: np.ndarray) -> dict:
    sym = 0.5 * (p + p.transpose(0, 2, 1))
    eig = np.linalg.eigvalsh(sym)
    trace = np.trace(p, axis1=1, axis2=2)
    return {
        "max_asymmetry": float(np.max(np.abs(p - p.transpose(0, 2, 1)))),
        "min_eigenvalue": float(eig.min()),
        "min_relative_eigenvalue": float(np.min(eig[:, 0] / np.where(trace > 0, trace, 1.0))),
        "negative_nodes": [int(i) for i in np.nonzero(eig[:, 0] < -1e-6)[0]],
    }


def solve_covariance_equation(
    model: SignalModel,
    obs: ObservationModel,
    grid: TimeGrid,
    prior: PriorCovariance | None = None,
    residual: bool | None = None,
) -> KernelTable:
    """Fill the kernel table by forward recursion in the s-index.

    The residual of the trapezoid-rule equation is measured when ``residual``
    is true (default for n_t <= 512) and stored in ``diagnostics``.
    """
    _check_dims(model, obs)
    prior = PriorCovariance(model, obs, grid) if prior is None else prior
    size = grid.steps + 1
    values = _forward(lambda l: prior.column(l, l), obs.coeffs, grid.dt, size, model.modes)
    table = KernelTable(values, obs, grid)
    report = _node_matrices_report(table.error_covariance())
    if report["negative_nodes"]:
        warnings.warn(f"error covariance has eigenvalues below -1e-6 at nodes {report['negative_nodes'][:5]}", stacklevel=2)
    table.diagnostics.update(report)
    table.diagnostics["continuity"] = float(np.max(np.abs(np.diff(table.diagonal(), axis=0)))) if size > 1 else 0.0
    if residual is None:
        residual = grid.steps <= 512
    if residual:
        table.diagnostics["trapezoid_residual"] = equation_residual(table, prior)
    return table


def equation_residual(table: KernelTable, prior: PriorCovariance, rule: str = "trapezoid") -> float:
    """Sup-norm of table - (prior - quadratic term) over the triangle, relative to the table sup-norm."""
    size = table.grid.steps + 1
    quad = _quadratic_term(table.values, table.obs.coeffs, _weights(size, rule))
    res = (table.values - (prior.block() - table.grid.dt * quad)) * _triangle_mask(size)
    return float(np.max(np.abs(res)) / max(table.sup_norm(), np.finfo(float).tiny))


def solve_covariance_picard(
    model: SignalModel,
    obs: ObservationModel,
    grid: TimeGrid,
    max_iter: int = 100,
    tol: float = 1e-10,
    prior: PriorCovariance | None = None,
) -> KernelTable:
    """Fixed-point iteration Phi <- K - Quad(Phi, Phi) with trapezoid weights, from Phi = K.

    ``diagnostics["gaps"]`` holds the sup-norm change of every iteration.
    """
    _check_dims(model, obs)
    prior = PriorCovariance(model, obs, grid) if prior is None else prior
    size = grid.steps + 1
    mask = _triangle_mask(size)
    weights = _weights(size, "trapezoid")
    base = prior.block() * mask
    current = base
    gaps = []
    for it in range(1, max_iter + 1):
        nxt = (base - grid.dt * _quadratic_term(current, obs.coeffs, weights)) * mask
        gap = float(np.max(np.abs(nxt - current)))
        gaps.append(gap)
        current = nxt
        if gap < tol:
            table = KernelTable(current, obs, grid, {"gaps": gaps, "iterations": it})
            table.diagnostics.update(_node_matrices_report(table.error_covariance()))
            return table
    raise ConvergenceError(f"Picard iteration did not reach tol={tol} in {max_iter} iterations", gaps[-1], max_iter)


class StreamingTable:
    """Row-by-row access to the kernel table without storing it whole.

    Only the point-projected table a Phi (n x n per node pair) is kept; full
    rows are rebuilt in blocks of ``block`` rows on demand, in ascending order.
    """

    def __init__(self, model: SignalModel, obs: ObservationModel, grid: TimeGrid, block: int = 128, prior=None):
        _check_dims(model, obs)
        self.obs = obs
        self.grid = grid
        self.block = int(block)
        self.prior = PriorCovariance(model, obs, grid) if prior is None else prior
        size = grid.steps + 1
        observed = self.prior.observed()  # (i, l, p, q)
        weight = 1.0 if obs.informative else 0.0
        self.projected = _forward(lambda l: observed[l:, l], weight * np.eye(obs.size), grid.dt, size, obs.size)
        self.modes = model.modes

    def error_covariance(self, i: int | None = None) -> np.ndarray:
        idx = np.arange(self.grid.steps + 1)
        diag = self.projected[idx, :, idx, :]
        return diag if i is None else diag[i]

    def rows(self):
        """Yield (i, row) with row[k, l, j] = coefficient k of Phi_{z_j}(t_i, t_l), l <= i."""
        size = self.grid.steps + 1
        n = self.obs.size
        dt = self.grid.dt
        for i0 in range(0, size, self.block):
            i1 = min(size, i0 + self.block)
            vals = np.zeros((i1 - i0, self.modes, i1, n))
            prior_rows = self.prior.block(slice(i0, i1), slice(0, i1))
            for l in range(i1):
                r0 = max(0, l - i0)
                col = prior_rows[r0:, :, l, :]
                if l and self.obs.informative:
                    rhs = self.projected[l, :, :l, :].transpose(1, 2, 0).reshape(l * n, n)
                    corr = vals[r0:, :, :l, :].reshape(-1, l * n) @ rhs
                    col = col - dt * corr.reshape(i1 - i0 - r0, self.modes, n)
                vals[r0:, :, l, :] = col
            for r in range(i1 - i0):
                yield i0 + r, vals[r, :, : i0 + r + 1, :]


def stream_table(model, obs, grid, block: int = 128) -> StreamingTable:
    return StreamingTable(model, obs, grid, block)


def _iter_rows(table):
    if isinstance(table, StreamingTable):
        yield from table.rows()
    else:
        for i in range(table.grid.steps + 1):
            yield i, table.values[i, :, : i + 1, :]


def run_filter(table, obs: ObservationModel, xi: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Filter coefficients hat theta_{t_0..t_n}, shape (..., n_t + 1, N).

    ``xi`` is an observation path (n_t + 1, n) or a batch (..., n_t + 1, n).
    """
    if table.grid != grid or table.obs != obs:
        raise GridMismatchError("kernel table was built for a different grid or observation model")
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-2:] != (grid.steps + 1, obs.size):
        raise GridMismatchError(f"observation path has shape {xi.shape[-2:]}, expected {(grid.steps + 1, obs.size)}")
    a = table.obs.coeffs
    dt = grid.dt
    n = obs.size
    batch = xi.shape[:-2]
    dxi = np.diff(xi, axis=-2)
    theta = np.zeros(batch + (grid.steps + 1, obs.modes))
    if not obs.informative:
        return theta  # the table holds Phi at the points; the gain itself is zero
    innov = np.zeros(batch + (grid.steps, n))
    for i, row in _iter_rows(table):
        if i == 0:
            continue
        innov[..., i - 1, :] = dxi[..., i - 1, :] - dt * theta[..., i - 1, :] @ a.T
        theta[..., i, :] = innov[..., :i, :].reshape(batch + (i * n,)) @ row[:, :i, :].reshape(obs.modes, i * n).T
    return theta


def innovation_path(xi: np.ndarray, theta_hat: np.ndarray, obs: ObservationModel, grid: TimeGrid) -> np.ndarray:
    """W~_{t_i} = xi_{t_i} - sum_{l < i} A hat theta_{t_l} dt."""
    drift = theta_hat[..., :-1, :] @ obs.coeffs.T * grid.dt
    out = np.array(xi, dtype=float, copy=True)
    out[..., 1:, :] -= np.cumsum(drift, axis=-2)
    return out

"""Monte-Carlo statistics of the filter over simulated paths.

Paths are processed in chunks; each chunk returns plain sums, and the
totals are order independent up to floating-point addition.  With
``workers > 1`` chunks run in a process pool.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .engine import KernelTable, ObservationModel, innovation_path, run_filter
from .kernels import TimeGrid
from .simulate import simulate_batch
from .spectral import SignalModel

__all__ = ["error_moments", "innovation_statistics", "chunked"]


def chunked(n_paths: int, size: int):
    return [range(s, min(n_paths, s + size)) for s in range(0, n_paths, size)]


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _error_chunk(table, model, obs, grid, seed, paths, nodes):
    theta, xi, _ = simulate_batch(model, obs, grid, seed, paths)
    hat = run_filter(table, obs, xi, grid)
    err = (theta[:, nodes, :] - hat[:, nodes, :]) @ obs.evaluation.T  # (P, nodes, n)
    prod = err[..., :, None] * err[..., None, :]
    return prod.sum(0), (prod * prod).sum(0), len(paths)


def error_moments(
    table: KernelTable,
    model: SignalModel,
    obs: ObservationModel,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    nodes,
    workers: int = 1,
    chunk: int = 250,
):
    """Empirical E[(theta - hat theta)(z_p)(theta - hat theta)(z_q)] at ``nodes`` and its standard error.

    Returns (mean, se), each of shape (len(nodes), n, n).
    """
    nodes = list(nodes)
    jobs = [(table, model, obs, grid, seed, c, nodes) for c in chunked(n_paths, chunk)]
    parts = _map(_error_chunk, jobs, workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    m = sum(p[2] for p in parts)
    mean = s1 / m
    var = (s2 - m * mean * mean) / (m - 1)
    return mean, np.sqrt(np.maximum(var, 0.0) / m)


def _innovation_chunk(table, model, obs, grid, seed, paths, pieces):
    _, xi, _ = simulate_batch(model, obs, grid, seed, paths)
    hat = run_filter(table, obs, xi, grid)
    w = innovation_path(xi, hat, obs, grid)
    qv = np.sum(np.diff(w, axis=-2) ** 2, axis=-2)  # (P, n)
    cut = np.linspace(0, grid.steps, pieces + 1).astype(int)
    inc = w[:, cut[1:], :] - w[:, cut[:-1], :]  # (P, pieces, n)
    return {
        "qv": qv.sum(0),
        "qv2": (qv * qv).sum(0),
        "x": inc.sum(0),
        "xx": np.einsum("pan,pbn->abn", inc, inc),
        "m": len(paths),
    }


def innovation_statistics(
    table: KernelTable,
    model: SignalModel,
    obs: ObservationModel,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    pieces: int = 4,
    workers: int = 1,
    chunk: int = 50,
) -> dict:
    """Quadratic variation of every innovation component and correlations of its increments on disjoint pieces.

    Returns ``qv_mean`` (n,), ``qv_se`` (n,) and ``corr`` (pieces, pieces, n).
    """
    jobs = [(table, model, obs, grid, seed, c, pieces) for c in chunked(n_paths, chunk)]
    parts = _map(_innovation_chunk, jobs, workers)
    tot = {k: sum(p[k] for p in parts) for k in parts[0]}
    m = tot["m"]
    qv_mean = tot["qv"] / m
    qv_se = np.sqrt(np.maximum(tot["qv2"] / m - qv_mean**2, 0.0) * m / (m - 1) / m)
    mean = tot["x"] / m  # (pieces, n)
    cov = tot["xx"] / m - mean[:, None, :] * mean[None, :, :]
    sd = np.sqrt(np.einsum("aan->an", cov))
    corr = cov / (sd[:, None, :] * sd[None, :, :])
    return {"qv_mean": qv_mean, "qv_se": qv_se, "corr": corr, "paths": m}

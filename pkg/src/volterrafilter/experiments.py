"""Experiments run from scenario files, plus the gap metrics they report."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .engine import KernelTable, ObservationModel, PriorCovariance, run_filter, solve_covariance_equation, solve_covariance_picard
from .kernels import TimeGrid
from .montecarlo import error_moments, innovation_statistics
from .oracle import assemble_joint, filtered_law
from .riccati import riccati_integrate
from .simulate import simulate_path
from .spectral import SignalModel

__all__ = [
    "Check",
    "Report",
    "riccati_gap",
    "oracle_gaps",
    "filter_linear_map",
    "run_experiment",
]


@dataclass
class Check:
    name: str
    value: float
    limit: str
    passed: bool


@dataclass
class Report:
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    checks: list = field(default_factory=list)

    def check(self, name, value, passed, limit):
        self.checks.append(Check(name, float(value), limit, bool(passed)))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def riccati_gap(table: KernelTable, states, obs: ObservationModel) -> np.ndarray:
    """Per-node relative Frobenius gap between engine and Riccati observed covariances (node 0 excluded)."""
    a = obs.evaluation
    kb = np.array([a @ s.P @ a.T for s in states])
    eng = table.error_covariance()
    num = np.linalg.norm(eng - kb, axis=(1, 2))[1:]
    den = np.linalg.norm(kb, axis=(1, 2))[1:]
    return num / den


def filter_linear_map(table: KernelTable, obs: ObservationModel, grid: TimeGrid) -> np.ndarray:
    """Matrix H with hat theta_{t_i} = H[i] @ (flattened increments), from unit-increment runs."""
    n = obs.size
    dim = grid.steps * n
    unit = np.zeros((dim, grid.steps + 1, n))
    for m in range(dim):
        l, j = divmod(m, n)
        unit[m, l + 1 :, j] = 1.0
    hat = run_filter(table, obs, unit, grid)  # (dim, I, N)
    return hat.transpose(1, 2, 0)


def oracle_gaps(model: SignalModel, obs: ObservationModel, grid: TimeGrid, table: KernelTable | None = None) -> dict:
    """Engine vs exact conditioning on one grid.

    ``cov_gap``: max over nodes and observation points of the relative gap
    in conditional variance.  ``mean_gap``: max over nodes of the root-mean-
    square difference of the two conditional means at the observation
    points (exact, from the linear maps and the law of the increments),
    divided by the largest standard deviation of the exact conditional mean.
    """
    table = solve_covariance_equation(model, obs, grid) if table is None else table
    joint = assemble_joint(model, obs, grid)
    law = filtered_law(model, obs, grid, joint)
    p_eng = np.einsum("ipp->ip", table.error_covariance())[1:]
    p_or = np.einsum("ipp->ip", law.observed_cov())[1:]
    rel = np.abs(p_eng - p_or) / p_or
    a = obs.evaluation
    h_eng = np.einsum("pk,ikm->ipm", a, filter_linear_map(table, obs, grid))
    h_or = np.einsum("pk,ikm->ipm", a, law.gains)
    s_oo = joint.cov[np.ix_(joint.obs_index, joint.obs_index)]
    d = h_eng - h_or
    rms = np.sqrt(np.einsum("ipm,mq,ipq->ip", d, s_oo, d))
    sd = np.sqrt(np.einsum("ipm,mq,ipq->ip", h_or, s_oo, h_or))
    return {
        "cov_gap": float(rel.max()),
        "mean_gap": float(rms.max() / sd.max()),
        "cov_engine": p_eng,
        "cov_oracle": p_or,
        "mean_rms": rms,
        "law": law,
        "table": table,
    }


def _prior(cfg: ScenarioConfig, model, obs, grid):
    return PriorCovariance(model, obs, grid, backend=cfg.covariance_backend)


def _covariance_checks(report: Report, p: np.ndarray, prior_obs: np.ndarray):
    asym = np.max(np.abs(p - p.transpose(0, 2, 1)))
    report.check("error_covariance_symmetric", asym, asym <= 1e-8, "<= 1e-8")
    eig = np.linalg.eigvalsh(0.5 * (p + p.transpose(0, 2, 1)))[:, 0]
    tr = np.trace(p, axis1=1, axis2=2)
    worst = float(np.min(eig + 1e-8 * tr))
    report.check("error_covariance_psd", worst, worst >= 0, "min eig >= -1e-8 trace")
    excess = float(np.max(tr - np.trace(prior_obs, axis1=1, axis2=2)))
    report.check("variance_reduction", excess, excess <= 1e-12, "trace P - trace prior <= 1e-12")


def _fmt_rows(rows):
    return [[v if isinstance(v, (int, np.integer)) else float(v) for v in r] for r in rows]


def _error_cov_table(grid, p, prior_obs):
    n = p.shape[1]
    header = ["i", "t"] + [f"P_{a + 1}_{b + 1}" for a in range(n) for b in range(n)] + [
        f"prior_{a + 1}_{b + 1}" for a in range(n) for b in range(n)
    ]
    rows = [[i, grid.nodes[i], *p[i].ravel(), *prior_obs[i].ravel()] for i in range(grid.steps + 1)]
    return header, _fmt_rows(rows)


def experiment_solve(cfg, model, obs, grid, outputs):
    report = Report()
    prior = _prior(cfg, model, obs, grid)
    table = solve_covariance_equation(model, obs, grid, prior)
    p = table.error_covariance()
    prior_obs = prior.node_covariance()
    report.tables["error_covariance"] = _error_cov_table(grid, p, prior_obs)
    _covariance_checks(report, p, prior_obs)
    if "trapezoid_residual" in table.diagnostics:
        report.tables["diagnostics"] = (
            ["quantity", "value"],
            [["trapezoid_residual", table.diagnostics["trapezoid_residual"]], ["continuity", table.diagnostics["continuity"]]],
        )
    if cfg.export_table:
        table.to_csv(outputs / "phi_table.csv")
        table.save(outputs / "phi_table.bin")
    return report


def experiment_filter(cfg, model, obs, grid, outputs):
    from .engine import innovation_path
    from .simulate import write_paths_csv

    report = Report()
    prior = _prior(cfg, model, obs, grid)
    table = solve_covariance_equation(model, obs, grid, prior)
    bundle = simulate_path(model, obs, grid, cfg.seed, 0)
    hat = run_filter(table, obs, bundle.observation, grid)
    inn = innovation_path(bundle.observation, hat, obs, grid)
    a = obs.evaluation
    true_z, hat_z = bundle.signal @ a.T, hat @ a.T
    p = table.error_covariance()
    n = obs.size
    header = ["i", "t"]
    for j in range(n):
        header += [f"theta_{j + 1}", f"hat_{j + 1}", f"sd_{j + 1}", f"xi_{j + 1}", f"innovation_{j + 1}"]
    rows = []
    for i in range(grid.steps + 1):
        r = [i, grid.nodes[i]]
        for j in range(n):
            r += [true_z[i, j], hat_z[i, j], np.sqrt(max(p[i, j, j], 0.0)), bundle.observation[i, j], inn[i, j]]
        rows.append(r)
    report.tables["filter"] = (header, _fmt_rows(rows))
    write_paths_csv(outputs / "paths.csv", [bundle], grid)
    _covariance_checks(report, p, prior.node_covariance())
    return report


def _check_nodes(grid):
    return [grid.steps // 4, grid.steps // 2, grid.steps]


def experiment_mc_error(cfg, model, obs, grid, outputs):
    report = Report()
    table = solve_covariance_equation(model, obs, grid, _prior(cfg, model, obs, grid), residual=False)
    nodes = _check_nodes(grid)
    mean, se = error_moments(table, model, obs, grid, cfg.seed, cfg.mc_paths, nodes, cfg.workers)
    p = table.error_covariance()[nodes]
    n = obs.size
    rows = []
    worst = 0.0
    for a_, i in enumerate(nodes):
        for pp in range(n):
            for q in range(n):
                z = (mean[a_, pp, q] - p[a_, pp, q]) / se[a_, pp, q]
                worst = max(worst, abs(z))
                rows.append([i, grid.nodes[i], pp + 1, q + 1, p[a_, pp, q], mean[a_, pp, q], se[a_, pp, q], z])
    report.tables["mc_error"] = (["i", "t", "p", "q", "P", "empirical", "std_error", "z_score"], _fmt_rows(rows))
    report.check("mc_error_within_sigmas", worst, worst <= cfg.tol_sigmas, f"|z| <= {cfg.tol_sigmas}")
    return report


def _levels(cfg):
    return [TimeGrid(cfg.horizon, cfg.steps * 2**r) for r in range(cfg.refinements + 1)]


def experiment_riccati(cfg, model, obs, grid, outputs):
    report = Report()
    rows = []
    gaps = []
    for g in _levels(cfg):
        table = solve_covariance_equation(model, obs, g, _prior(cfg, model, obs, g), residual=False)
        gap = float(riccati_gap(table, riccati_integrate(model, obs, g), obs).max())
        ratio = gaps[-1] / gap if gaps else float("nan")
        gaps.append(gap)
        rows.append([g.steps, g.dt, gap, ratio])
        report.check(f"riccati_gap_n{g.steps}", gap, gap <= cfg.tol_gap, f"<= {cfg.tol_gap}")
        if len(gaps) > 1:
            ok = cfg.tol_ratio_low <= ratio <= cfg.tol_ratio_high
            report.check(f"riccati_ratio_n{g.steps}", ratio, ok, f"in [{cfg.tol_ratio_low}, {cfg.tol_ratio_high}]")
    report.tables["riccati_compare"] = (["steps", "dt", "max_relative_gap", "ratio"], _fmt_rows(rows))
    return report


def experiment_oracle(cfg, model, obs, grid, outputs):
    report = Report()
    rows, node_rows = [], []
    prev = None
    for g in _levels(cfg):
        table = solve_covariance_equation(model, obs, g, _prior(cfg, model, obs, g))
        res = oracle_gaps(model, obs, g, table)
        cov_ratio = prev[0] / res["cov_gap"] if prev else float("nan")
        mean_ratio = prev[1] / res["mean_gap"] if prev else float("nan")
        rows.append([g.steps, g.dt, res["cov_gap"], cov_ratio, res["mean_gap"], mean_ratio])
        for i in range(g.steps):
            for j in range(obs.size):
                node_rows.append(
                    [g.steps, i + 1, g.nodes[i + 1], j + 1, res["cov_engine"][i, j], res["cov_oracle"][i, j], res["mean_rms"][i + 1, j]]
                )
        report.check(f"oracle_cov_gap_n{g.steps}", res["cov_gap"], res["cov_gap"] <= cfg.tol_gap, f"<= {cfg.tol_gap}")
        report.check(f"oracle_mean_gap_n{g.steps}", res["mean_gap"], res["mean_gap"] <= cfg.tol_gap, f"<= {cfg.tol_gap}")
        if prev:
            report.check(f"oracle_cov_ratio_n{g.steps}", cov_ratio, cov_ratio >= cfg.tol_ratio_low, f">= {cfg.tol_ratio_low}")
            report.check(f"oracle_mean_ratio_n{g.steps}", mean_ratio, mean_ratio >= cfg.tol_ratio_low, f">= {cfg.tol_ratio_low}")
        prev = (res["cov_gap"], res["mean_gap"])
    report.tables["oracle_compare"] = (["steps", "dt", "cov_gap", "cov_ratio", "mean_gap", "mean_ratio"], _fmt_rows(rows))
    report.tables["oracle_nodes"] = (["steps", "i", "t", "j", "P_engine", "P_oracle", "mean_rms_gap"], _fmt_rows(node_rows))
    return report


def experiment_uniqueness(cfg, model, obs, grid, outputs):
    report = Report()
    prior = _prior(cfg, model, obs, grid)
    fwd = solve_covariance_equation(model, obs, grid, prior, residual=False)
    pic = solve_covariance_picard(model, obs, grid, cfg.picard_max_iter, cfg.picard_tol, prior)
    gaps = np.array(pic.diagnostics["gaps"])
    gap = float(np.max(np.abs(fwd.values - pic.values)))
    scaled = gap / (grid.dt * fwd.sup_norm())
    ratios = gaps[1:] / gaps[:-1]
    rows = [[m + 1, gaps[m], ratios[m - 1] if m else float("nan")] for m in range(gaps.size)]
    report.tables["picard"] = (["iteration", "gap", "ratio"], _fmt_rows(rows))
    report.tables["uniqueness"] = (["quantity", "value"], [["forward_picard_gap", gap], ["gap_over_dt_sup", scaled]])
    report.check("forward_picard_gap", scaled, scaled <= cfg.tol_uniqueness, f"gap / (dt sup) <= {cfg.tol_uniqueness}")
    late = ratios[2:] if ratios.size > 2 else ratios
    worst = float(late.max()) if late.size else 0.0
    report.check("picard_geometric_decay", worst, worst < cfg.tol_picard_ratio, f"< {cfg.tol_picard_ratio} after iteration 3")
    return report


def experiment_innovation(cfg, model, obs, grid, outputs):
    report = Report()
    table = solve_covariance_equation(model, obs, grid, _prior(cfg, model, obs, grid), residual=False)
    stats = innovation_statistics(table, model, obs, grid, cfg.seed, cfg.mc_paths, workers=cfg.workers)
    rows = []
    for j in range(obs.size):
        rel = abs(stats["qv_mean"][j] / grid.horizon - 1.0)
        rows.append([j + 1, stats["qv_mean"][j], stats["qv_se"][j], rel])
        report.check(f"innovation_qv_{j + 1}", rel, rel <= cfg.tol_qv, f"|QV/T - 1| <= {cfg.tol_qv}")
    report.tables["innovation_qv"] = (["component", "qv_mean", "qv_std_error", "relative_deviation"], _fmt_rows(rows))
    corr = stats["corr"]
    se = 1.0 / np.sqrt(stats["paths"])
    crow = []
    worst = 0.0
    pieces = corr.shape[0]
    for j in range(obs.size):
        for x in range(pieces):
            for y in range(x + 1, pieces):
                crow.append([j + 1, x + 1, y + 1, corr[x, y, j], corr[x, y, j] / se])
                worst = max(worst, abs(corr[x, y, j]) / se)
    report.tables["innovation_correlation"] = (["component", "piece_a", "piece_b", "correlation", "z_score"], _fmt_rows(crow))
    report.check("innovation_increment_correlation", worst, worst <= cfg.tol_sigmas, f"|z| <= {cfg.tol_sigmas}")
    return report


_RUNNERS = {
    "solve": experiment_solve,
    "filter": experiment_filter,
    "mc-error": experiment_mc_error,
    "riccati-compare": experiment_riccati,
    "oracle-compare": experiment_oracle,
    "uniqueness": experiment_uniqueness,
    "innovation-qv": experiment_innovation,
}


def run_experiment(cfg: ScenarioConfig, outputs) -> Report:
    model = cfg.signal_model()
    obs = cfg.observation_model()
    return _RUNNERS[cfg.experiment](cfg, model, obs, cfg.grid(), outputs)

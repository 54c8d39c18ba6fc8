"""Command-line front end: ``volterrafilter run|validate|version``.

Exit codes: 0 all checks pass, 1 some check failed, 2 invalid config,
3 the observation is pointwise but the signal is too rough for it.
The output directory is ``output_dir`` from the config unless the
``VOLTERRAFILTER_OUTPUT_DIR`` environment variable is set.
"""
from __future__ import annotations

import argparse
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ScenarioConfig, load_config
from .errors import ConfigError
from .spectral import validate_regularity

OUTPUT_ENV = "VOLTERRAFILTER_OUTPUT_DIR"

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_REGULARITY = 0, 1, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def _derived(cfg: ScenarioConfig):
    grid = cfg.grid()
    model = cfg.signal_model()
    reg = validate_regularity(model, grid)
    lo, hi = reg.delta_range
    out = [
        ("dt", grid.dt),
        ("alpha", reg.alpha),
        ("gamma", reg.gamma),
        ("gain_exponent", reg.gain_exponent),
        ("window_gamma", reg.window_gamma),
        ("delta_range", f"({_fmt(lo)}, {_fmt(hi)})"),
        ("pointwise_ok", reg.pointwise_ok),
        ("hilbert_schmidt", reg.hilbert_schmidt),
    ]
    for j, tail in enumerate(cfg.truncation_tails()):
        out.append((f"truncation_tail_{j + 1}", tail))
    return reg, out


def _manifest(cfg: ScenarioConfig, derived, out_dir: Path) -> list:
    lines = ["# run manifest", "[config]"]
    lines += [f"{k} = {v}" for k, v in cfg.items()]
    lines += ["[derived]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in derived]
    lines += [
        "[environment]",
        f"volterrafilter = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"execution = {'parallel' if cfg.workers > 1 else 'serial'}",
        f"workers = {cfg.workers}",
        f"seed = {cfg.seed}",
        f"output_dir = {out_dir}",
    ]
    return lines


def _load(path):
    try:
        return load_config(path), None
    except ConfigError as exc:
        return None, str(exc)


def _gate(cfg: ScenarioConfig, reg) -> str | None:
    if cfg.observation == "pointwise" and not reg.pointwise_ok:
        lo, hi = reg.delta_range
        return (
            f"regularity: pointwise observation needs alpha + 1/2 - gamma > 1/4, "
            f"got alpha = {reg.alpha:g}, gamma = {reg.gamma:g} (margin {reg.margin:.3g})"
        )
    return None


def cmd_validate(args) -> int:
    cfg, err = _load(args.config)
    if err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    reg, derived = _derived(cfg)
    for k, v in derived:
        print(f"{k} = {_fmt(v)}")
    msg = _gate(cfg, reg)
    if msg:
        print(msg, file=sys.stderr)
        return EXIT_REGULARITY
    print("config ok")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg, err = _load(args.config)
    if err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    reg, derived = _derived(cfg)
    msg = _gate(cfg, reg)
    if msg:
        print(msg, file=sys.stderr)
        return EXIT_REGULARITY
    out_dir = Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.txt").write_text("\n".join(_manifest(cfg, derived, out_dir)) + "\n")

    report = run_experiment(cfg, out_dir)
    for name, (header, rows) in report.tables.items():
        write_csv(out_dir / f"{name}.csv", header, rows)
    lines = [f"experiment = {cfg.experiment}"]
    for c in report.checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={_fmt(c.value)} limit: {c.limit}")
    lines.append(f"result = {'PASS' if report.passed else 'FAIL'}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if report.passed else EXIT_CHECKS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="volterrafilter", description="Filtering for Volterra-driven stochastic heat equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment named in a scenario file")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("validate", help="check a scenario file and print derived quantities")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=lambda args: print(__version__) or EXIT_OK)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

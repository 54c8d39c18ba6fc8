import subprocess
import sys

import pytest

from volterrafilter import __version__
from volterrafilter.cli import OUTPUT_ENV, main


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, text, out="out", name="s.cfg"):
    cfg = write(tmp_path, name, text + f"\noutput_dir = {tmp_path / out}\n")
    return main(["run", str(cfg)]), tmp_path / out


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "volterrafilter", "version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == __version__


def test_invalid_hurst_exits_2(tmp_path, capsys):
    code, out = run(tmp_path, "hurst = 0.4")
    assert code == 2
    err = capsys.readouterr().err
    assert "hurst" in err and "(1/2, 1)" in err
    assert not out.exists()


def test_rough_noise_exits_3(tmp_path, capsys):
    code, out = run(tmp_path, "noise_decay = -1")
    assert code == 3
    assert "alpha + 1/2 - gamma > 1/4" in capsys.readouterr().err
    cfg = write(tmp_path, "v.cfg", "noise_decay = -1")
    assert main(["validate", str(cfg)]) == 3


def test_rough_noise_allowed_without_pointwise_observation(tmp_path):
    code, _ = run(tmp_path, "noise_decay = -1\nobservation = zero\nsteps = 16\nmodes = 3")
    assert code == 0


def test_validate_prints_derived_quantities(tmp_path, capsys):
    cfg = write(tmp_path, "v.cfg", "steps = 64\n")
    assert main(["validate", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "gamma = 0" in out and "alpha = 0.25" in out and "dt = 0.015625" in out


def test_solve_zero_functionals_reproduces_prior_and_is_deterministic(tmp_path):
    text = "experiment = solve\nobservation = zero\nsteps = 32\nmodes = 4\nexport_table = true"
    code, out = run(tmp_path, text, out="a")
    assert code == 0
    header, rows = read_csv(out / "error_covariance.csv")
    n = (len(header) - 2) // 2
    assert all(r[2 : 2 + n] == r[2 + n :] for r in rows)
    assert float(rows[-1][2]) > 0
    code, again = run(tmp_path, text, out="b")
    for name in ("error_covariance.csv", "phi_table.csv", "phi_table.bin", "summary.txt"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_manifest_records_everything(tmp_path):
    code, out = run(tmp_path, "experiment = solve\nsteps = 16\nmodes = 3")
    text = (out / "manifest.txt").read_text()
    for key in ("hurst = 0.75", "steps = 16", "seed = 20240601", "alpha = 0.25", "gamma = 0", "delta_range = (0, 0.75)",
                "pointwise_ok = true", "execution = serial", "numpy = ", "truncation_tail_1 = ", "tol_gap = 0.05"):
        assert key in text
    assert "time" not in text.lower().replace("timegrid", "")


def test_env_var_overrides_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    code, out = run(tmp_path, "experiment = solve\nsteps = 8\nmodes = 2")
    assert code == 0
    assert (tmp_path / "env" / "summary.txt").exists() and not out.exists()


def test_riccati_compare_report(tmp_path):
    code, out = run(tmp_path, "experiment = riccati-compare\nkernel = brownian\nsteps = 64\nrefinements = 2")
    assert code == 0
    header, rows = read_csv(out / "riccati_compare.csv")
    assert header == ["steps", "dt", "max_relative_gap", "ratio"]
    assert [r[0] for r in rows] == ["64", "128", "256"]
    assert "PASS riccati_gap_n64" in (out / "summary.txt").read_text()


def test_failed_check_exits_1(tmp_path):
    code, out = run(tmp_path, "experiment = riccati-compare\nkernel = brownian\nsteps = 32\ntol_gap = 1e-9")
    assert code == 1
    assert "result = FAIL" in (out / "summary.txt").read_text()


@pytest.mark.parametrize(
    "experiment,steps,files",
    [
        ("filter", 16, ["filter.csv", "paths.csv"]),
        ("mc-error", 16, ["mc_error.csv"]),
        ("uniqueness", 16, ["picard.csv", "uniqueness.csv"]),
        # the QV of one path has standard deviation sqrt(2 / steps)
        ("innovation-qv", 256, ["innovation_qv.csv", "innovation_correlation.csv"]),
        ("oracle-compare", 16, ["oracle_compare.csv", "oracle_nodes.csv"]),
    ],
)
def test_experiments_run_and_rerun_identically(tmp_path, experiment, steps, files):
    text = f"experiment = {experiment}\nsteps = {steps}\nmodes = 3\nmc_paths = 100"
    code, a = run(tmp_path, text, out="a")
    assert code == 0, (a / "summary.txt").read_text()
    _, b = run(tmp_path, text, out="b")
    for name in files + ["summary.txt"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_parallel_mode_is_recorded(tmp_path):
    code, out = run(tmp_path, "experiment = mc-error\nsteps = 16\nmodes = 3\nmc_paths = 100\nworkers = 2")
    assert code == 0
    assert "execution = parallel" in (out / "manifest.txt").read_text()


def test_csv_numbers_have_17_digits(tmp_path):
    _, out = run(tmp_path, "experiment = solve\nsteps = 8\nmodes = 2")
    _, rows = read_csv(out / "error_covariance.csv")
    assert float(rows[3][1]) == 3 / 8
    assert len(rows[5][2].replace("0.", "").lstrip("0").split("e")[0]) >= 15

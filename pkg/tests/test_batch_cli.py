import filecmp
from pathlib import Path

import pytest

from funnelfb.batch import emit_plot_script, run_batch
from funnelfb.cli import main
from funnelfb.config import load_config, parse_config
from funnelfb.core import FunnelFunction
from funnelfb.engine import ScenarioSpec, integrate, write_trajectory_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_zero_config(tmp_path):
    rep = run_batch(load_config(CONFIGS / "zero.yaml"), out_dir=tmp_path)
    assert rep.counts == {"runs": 1, "contained": 1, "converged": 1, "control_bounded": 1, "escaped": 0}
    assert rep.ok
    assert (tmp_path / "trajectories" / "zero.csv").is_file()
    assert (tmp_path / "trajectories" / "zero.gp").is_file()
    assert "result: PASS" in (tmp_path / "summary.txt").read_text()


def test_dichotomy_sweep(tmp_path):
    rep = run_batch(load_config(CONFIGS / "dichotomy.yaml"), out_dir=tmp_path)
    c = rep.counts
    assert c["runs"] == 8 and c["contained"] == 8 and c["escaped"] == 0
    # eta = +1 runs decay well below the threshold; eta = -1 runs ride at
    # w ~ 1 - e^-pi and sit near 0.96/t on the tail window
    by_sign = {}
    for r in rep.runs:
        by_sign.setdefault("eta=+1" in r.report.name, []).append(r.report.converged)
    assert all(by_sign[True])


def test_chi_job_certificate(tmp_path):
    cfg = parse_config("chi_jobs:\n  - name: plus\n    eta: 1\n    n_max: 4\n")
    rep = run_batch(cfg, out_dir=tmp_path)
    cert = rep.certificates[0].certificate
    assert cert.indices == (0, 2, 4)
    assert all(m > 0 for m in cert.margins)
    assert (tmp_path / "certificates" / "plus.csv").read_text().startswith("n,s_n,chi,bound,margin\n")
    assert rep.ok


def test_escape_fails_exit_code(tmp_path):
    text = ("scenarios:\n  - name: pinned\n    eta: -1\n    x0: 0.5\n    guard_margin: 0.9\n"
            "    t_end: 20\n")
    cfg_path = tmp_path / "esc.yaml"
    cfg_path.write_text(text)
    assert main(["simulate", str(cfg_path), "--out", str(tmp_path / "o")]) == 1
    gp = (tmp_path / "o" / "trajectories" / "pinned.gp").read_text()
    assert "t_fail" in gp and "set arrow" in gp
    assert "BoundaryEscape" in (tmp_path / "o" / "summary.txt").read_text()


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("scenarios:\n  - name: a\n    x0: hello\n")
    assert main(["verify", str(p)]) == 2
    assert "scenarios[0].x0 (line 3)" in capsys.readouterr().err


def test_cli_chi_scan(tmp_path, capsys):
    assert main(["chi-scan", str(CONFIGS / "verify.yaml"), "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in (tmp_path / "certificates").iterdir()) == [
        "negative-feedback.csv", "positive-feedback.csv"]
    assert not (tmp_path / "trajectories").exists()
    assert "PASS" in capsys.readouterr().out


def test_workers_match_serial(tmp_path):
    cfg = load_config(CONFIGS / "dichotomy.yaml")
    run_batch(cfg, out_dir=tmp_path / "a", workers=1)
    run_batch(cfg, out_dir=tmp_path / "b", workers=2)
    cmp = filecmp.dircmp(tmp_path / "a" / "trajectories", tmp_path / "b" / "trajectories")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert (tmp_path / "a" / "summary.txt").read_bytes() == (tmp_path / "b" / "summary.txt").read_bytes()


def test_tolerance_flags(tmp_path):
    assert main(["simulate", str(CONFIGS / "zero.yaml"), "--out", str(tmp_path),
                 "--tol-rel", "1e-8", "--tol-abs", "1e-12", "--seed", "3"]) == 0


def test_plot_script_zero(tmp_path):
    tr = integrate(ScenarioSpec(x0=0.0, t_end=10.0))
    csv = tmp_path / "zero.csv"
    write_trajectory_csv(tr, csv)
    gp = emit_plot_script(csv, FunnelFunction.identity()).read_text()
    assert "phi(t) = t\n" in gp
    assert "t < 1e-3 ? NaN" in gp
    assert "'zero.csv' using 1:2" in gp
    assert "set arrow" not in gp


def test_plot_cli(tmp_path, capsys):
    tr = integrate(ScenarioSpec(x0=1.0, eta=-1, t_end=5.0, funnel=FunnelFunction.exp_minus_one(0.5)))
    csv = tmp_path / "run.csv"
    write_trajectory_csv(tr, csv)
    assert main(["plot", str(csv), "--funnel", "expm1:0.5", "--out", str(tmp_path / "p")]) == 0
    gp = (tmp_path / "p" / "run.gp").read_text()
    assert "phi(t) = exp(0.5*t) - 1" in gp


def test_plot_rejects_missing_or_malformed(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plot_script(tmp_path / "none.csv", FunnelFunction.identity())
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n")
    with pytest.raises(ValueError):
        emit_plot_script(bad, FunnelFunction.identity())
    assert main(["plot", str(bad)]) == 2

"""Batch runs, summaries and plot-script emission."""
from __future__ import annotations

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chi import certify_unboundedness
from .config import ExperimentConfig
from .core import FunnelFunction, FunnelKind
from .engine import (
    InvariantReport,
    check_invariants,
    integrate,
    read_trajectory_csv,
    trajectory_csv,
)

log = logging.getLogger(__name__)

MATRIX_NOTE = "scenario matrix: chosen by this tool as a finite sample of plants, perturbations and initial states"


def safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=+-]+", "_", name).strip("_") or "run"


@dataclass
class RunRecord:
    report: InvariantReport
    t_fail: float | None
    csv_path: str
    counters: dict


@dataclass
class CertRecord:
    name: str
    certificate: object
    path: str

    @property
    def min_margin(self) -> float:
        return min(self.certificate.margins)


@dataclass
class BatchReport:
    runs: list = field(default_factory=list)
    certificates: list = field(default_factory=list)

    @property
    def counts(self) -> dict:
        rows = [r.report for r in self.runs]
        return {
            "runs": len(rows),
            "contained": sum(r.funnel_contained for r in rows),
            "converged": sum(r.converged for r in rows),
            "control_bounded": sum(r.control_bounded for r in rows),
            "escaped": sum(r.escaped for r in rows),
        }

    @property
    def ok(self) -> bool:
        """Exit contract: every run contained and every certificate margin >= 0."""
        return (all(r.report.funnel_contained for r in self.runs)
                and all(c.min_margin >= 0 for c in self.certificates))

    def summary_text(self, config: ExperimentConfig) -> str:
        c = self.counts
        lines = [f"experiment: {config.name}", MATRIX_NOTE, ""]
        if self.runs:
            lines.append("runs: {runs}  contained: {contained}  converged: {converged}  "
                         "control_bounded: {control_bounded}  escaped: {escaped}".format(**c))
            for rec in self.runs:
                r = rec.report
                lines.append(
                    f"  {r.name}: {r.status.value} max_w={r.max_w:.6f} eps={r.margin:.6f} "
                    f"converged={r.converged} sup|u|={r.sup_abs_u:.6g} "
                    f"limit={r.control_limit:.6g} |x(T)|={r.final_abs_x:.6g}")
        for cert in self.certificates:
            ce = cert.certificate
            lines.append(f"certificate {cert.name}: eta={int(ce.eta):+d} c1={ce.c1:.17g} "
                         f"min_margin={cert.min_margin:.17g}")
            for n, s, m in zip(ce.indices, ce.s_values, ce.margins):
                lines.append(f"  n={n} s_n={s:.17g} margin={m:.17g}")
        lines.append(f"result: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        head = ("name,status,max_w,margin,contained,converged,control_bounded,"
                "sup_abs_u,control_limit,final_abs_x")
        out = [head]
        for rec in self.runs:
            r = rec.report
            out.append(",".join([
                r.name, r.status.value, f"{r.max_w:.17g}", f"{r.margin:.17g}",
                str(r.funnel_contained).lower(), str(r.converged).lower(),
                str(r.control_bounded).lower(), f"{r.sup_abs_u:.17g}",
                f"{r.control_limit:.17g}", f"{r.final_abs_x:.17g}"]))
        return "\n".join(out) + "\n"

    def chi_summary_csv(self) -> str:
        out = ["job,eta,n,s_n,chi,bound,margin"]
        for cert in self.certificates:
            ce = cert.certificate
            for row in zip(ce.indices, ce.s_values, ce.chi_values, ce.lower_bounds, ce.margins):
                out.append(f"{cert.name},{int(ce.eta)},{row[0]}," + ",".join(f"{v:.17g}" for v in row[1:]))
        return "\n".join(out) + "\n"


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _run_one(args):
    scenario, csv_path, conv_threshold, conv_window = args
    traj = integrate(scenario)
    report = check_invariants(traj, conv_threshold, conv_window)
    _write(csv_path, trajectory_csv(traj))
    emit_plot_script(csv_path, scenario.funnel, t_fail=traj.t_fail, t_end=scenario.t_end)
    return RunRecord(report, traj.t_fail, str(csv_path), traj.counters)


def run_batch(config: ExperimentConfig, out_dir=None, workers: int = 1,
              simulate: bool = True, chi: bool = True) -> BatchReport:
    """Run every scenario and chi job of ``config`` and write the artifacts."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    report = BatchReport()
    d = config.defaults
    if simulate:
        tdir = out / "trajectories"
        tdir.mkdir(parents=True, exist_ok=True)
        jobs = [(s, tdir / f"{safe_name(s.name)}.csv", d.conv_threshold, d.conv_window)
                for s in config.all_scenarios()]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                report.runs = list(pool.map(_run_one, jobs, chunksize=4))
        else:
            report.runs = [_run_one(j) for j in jobs]
        for rec in report.runs:
            if not rec.report.funnel_contained:
                log.warning("%s: %s at t=%s", rec.report.name, rec.report.status.value, rec.t_fail)
    if chi and config.chi_jobs:
        cdir = out / "certificates"
        cdir.mkdir(parents=True, exist_ok=True)
        for job in config.chi_jobs:
            cert = certify_unboundedness(job.box, job.drift, job.eta, job.n_max, job.grid, strict=False)
            path = cdir / f"{safe_name(job.name)}.csv"
            _write(path, cert.to_csv())
            report.certificates.append(CertRecord(job.name, cert, str(path)))
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "summary.txt", report.summary_text(config))
    if config.report_format == "csv":
        if report.runs:
            _write(out / "summary.csv", report.summary_csv())
        if report.certificates:
            _write(out / "chi_summary.csv", report.chi_summary_csv())
    return report


def _gnuplot_phi(funnel: FunnelFunction) -> str:
    if funnel.kind is FunnelKind.IDENTITY:
        return "phi(t) = t"
    return f"phi(t) = exp({funnel.rate!r}*t) - 1"


def emit_plot_script(traj_csv, funnel: FunnelFunction, out_path=None,
                     t_fail: float | None = None, t_end: float | None = None) -> Path:
    """Write a gnuplot script drawing ``x(t)`` between the envelopes ``+-1/phi(t)``.

    The envelope starts at ``t = 1e-3`` since ``1/phi`` is unbounded at 0.
    The script refers to the CSV by file name; run it from the CSV's folder.
    """
    traj_csv = Path(traj_csv)
    if not traj_csv.is_file():
        raise FileNotFoundError(f"trajectory CSV not found: {traj_csv}")
    data = read_trajectory_csv(traj_csv)
    out_path = Path(out_path) if out_path is not None else traj_csv.with_suffix(".gp")
    t_hi = float(t_end if t_end is not None else data.t[-1])
    y_hi = 1.2 * max(float(np.max(np.abs(data.x))), 1e-12)
    stem = traj_csv.stem
    lines = [
        f"# x(t) inside the funnel +-1/phi(t); data: {traj_csv.name}",
        "set datafile separator ','",
        "set terminal pngcairo size 900,600",
        f"set output '{stem}.png'",
        "set xlabel 't'",
        "set ylabel 'x'",
        "set key top right",
        "set samples 2000",
        _gnuplot_phi(funnel),
        f"set xrange [0:{t_hi!r}]",
        f"set yrange [{-y_hi!r}:{y_hi!r}]",
    ]
    if t_fail is not None:
        lines += [
            f"set arrow from {t_fail!r}, graph 0 to {t_fail!r}, graph 1 nohead lc rgb 'red' dt 3",
            f"set label 't_fail' at {t_fail!r}, graph 0.95 tc rgb 'red'",
        ]
    lines += [
        "env(t) = t < 1e-3 ? NaN : 1/phi(t)",
        "plot env(x) with lines dt 2 lc rgb 'gray' title '+1/phi(t)', \\",
        "     -env(x) with lines dt 2 lc rgb 'gray' title '-1/phi(t)', \\",
        f"     '{traj_csv.name}' using 1:2 skip 1 with lines lw 2 lc rgb 'blue' title 'x(t)'",
    ]
    with open(out_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path

"""Closed-loop integration with funnel-boundary guarding."""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels as K
from .core import (
    DriftFunction,
    FeedbackSign,
    FunnelFunction,
    PerturbationSignal,
)

H_MIN = 1e-12
MAX_ATTEMPTS = 50_000_000
CSV_HEADER = "t,x,u,w,k"


class Status(enum.Enum):
    COMPLETED = "CompletedHorizon"
    BOUNDARY_ESCAPE = "BoundaryEscape"
    STEP_UNDERFLOW = "StepUnderflow"


_STATUS_CODES = {
    K.STATUS_COMPLETED: Status.COMPLETED,
    K.STATUS_BOUNDARY: Status.BOUNDARY_ESCAPE,
    K.STATUS_UNDERFLOW: Status.STEP_UNDERFLOW,
}


@dataclass(frozen=True)
class Tolerances:
    rel: float = 1e-6
    abs: float = 1e-9

    def __post_init__(self):
        if not (self.rel > 0 and self.abs > 0):
            raise ValueError("tolerances must be positive")

    def halved(self) -> "Tolerances":
        return Tolerances(self.rel / 2, self.abs / 2)


@dataclass(frozen=True)
class ScenarioSpec:
    drift: DriftFunction = field(default_factory=DriftFunction.zero)
    perturbation: PerturbationSignal = field(default_factory=PerturbationSignal.constant)
    funnel: FunnelFunction = field(default_factory=FunnelFunction.identity)
    eta: FeedbackSign = FeedbackSign.NEGATIVE
    x0: float = 0.0
    t_end: float = 50.0
    tolerances: Tolerances = field(default_factory=Tolerances)
    guard_margin: float = 1e-3
    n_report: int = 2000
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "eta", FeedbackSign.coerce(self.eta))
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "t_end", float(self.t_end))
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end!r}")
        if not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        if not 0.0 < self.guard_margin < 1.0:
            raise ValueError(f"guard_margin must lie in (0, 1), got {self.guard_margin!r}")
        if self.n_report < 2:
            raise ValueError("n_report must be at least 2")

    def with_tolerances(self, rel=None, abs=None) -> "ScenarioSpec":
        tol = Tolerances(rel if rel is not None else self.tolerances.rel,
                         abs if abs is not None else self.tolerances.abs)
        return replace(self, tolerances=tol)

    def encode(self):
        fk, rate = self.funnel.encode()
        dk, a, b, rg, xg, tab = self.drift.encode()
        pk, pp, br, coef = self.perturbation.encode(self.t_end)
        mi = np.array([int(self.eta), fk, dk, pk], dtype=np.int64)
        mf = np.array([rate, a, b, pp[0], pp[1], pp[2]], dtype=np.float64)
        return mi, mf, rg, xg, tab, br, coef


@dataclass(frozen=True)
class Samples:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    k: np.ndarray

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class TrajectoryStats:
    max_w: float
    sup_abs_u: float
    final_abs_x: float
    max_k: float


@dataclass(frozen=True)
class Trajectory:
    """One numerical solution.

    ``samples`` merges accepted integrator steps with the reporting grid;
    ``report`` holds the reporting grid alone (what goes to CSV).
    """

    scenario: ScenarioSpec
    samples: Samples
    report: Samples
    status: Status
    t_fail: float | None
    stats: TrajectoryStats
    steps: np.ndarray  # accepted step times
    counters: dict

    @property
    def t_end(self) -> float:
        return self.scenario.t_end


def _derive(scenario: ScenarioSpec, t, x) -> Samples:
    ph = scenario.funnel(t)
    w = ph * np.abs(x)
    alpha = 1.0 / (1.0 - w)
    u = -int(scenario.eta) * alpha * ph * x
    return Samples(t, x, u, w, alpha)


def _hermite(ts, xs, fs, tq):
    i = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, ts.size - 2)
    t0, t1 = ts[i], ts[i + 1]
    x0, x1 = xs[i], xs[i + 1]
    dt = t1 - t0
    s = (tq - t0) / dt
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    out = h00 * x0 + h10 * dt * fs[i] + h01 * x1 + h11 * dt * fs[i + 1]
    # near-boundary slopes can be huge and unreliable; drop to the chord
    # wherever the cubic leaves the hull of its endpoint values
    lo = np.minimum(x0, x1)
    hi = np.maximum(x0, x1)
    bad = (out < lo) | (out > hi)
    if np.any(bad):
        out = np.where(bad, x0 + s * (x1 - x0), out)
    exact = tq == ts[np.clip(np.searchsorted(ts, tq), 0, ts.size - 1)]
    if np.any(exact):
        idx = np.clip(np.searchsorted(ts, tq), 0, ts.size - 1)
        out = np.where(exact, xs[idx], out)
    return out


def integrate(scenario: ScenarioSpec, h_init: float = 1e-4) -> Trajectory:
    """Integrate the closed loop from ``x0`` at ``t = 0`` up to ``t_end``.

    Embedded Dormand-Prince 5(4) steps with PI control; while the local
    Jacobian makes explicit steps stability-limited (``-J h > 3``) a
    linearly implicit Rosenbrock 2(3) step is used instead. Any step with a
    stage or endpoint at ``phi(t)|x| >= 1 - guard_margin`` is halved and
    retried. Underflow below ``1e-12`` is reported as ``BoundaryEscape``
    when the guard caused it and ``StepUnderflow`` otherwise.
    """
    enc = scenario.encode()
    ts, xs, fs, code, t_fail, counters = K.integrate_kernel(
        *enc, scenario.x0, scenario.t_end, scenario.tolerances.rel,
        scenario.tolerances.abs, scenario.guard_margin, h_init, H_MIN, MAX_ATTEMPTS)
    status = _STATUS_CODES[int(code)]
    t_last = ts[-1]
    grid = np.linspace(0.0, scenario.t_end, scenario.n_report)
    grid = grid[grid <= t_last]
    if ts.size >= 2:
        xg = _hermite(ts, xs, fs, grid)
    else:
        xg = np.full(grid.shape, xs[0])
    report = _derive(scenario, grid, xg)
    t_all = np.concatenate([ts, grid])
    x_all = np.concatenate([xs, xg])
    # steps win over grid points at identical times
    order = np.argsort(t_all, kind="stable")
    t_all, x_all = t_all[order], x_all[order]
    keep = np.ones(t_all.size, dtype=bool)
    keep[1:] = t_all[1:] != t_all[:-1]
    samples = _derive(scenario, t_all[keep], x_all[keep])
    stats = TrajectoryStats(
        max_w=float(np.max(samples.w)),
        sup_abs_u=float(np.max(np.abs(samples.u))),
        final_abs_x=float(abs(xs[-1])),
        max_k=float(np.max(samples.k)),
    )
    cnt = {
        "accepted": int(counters[0]),
        "rejected": int(counters[1]),
        "guard_rejected": int(counters[2]),
        "stiff_steps": int(counters[3]),
    }
    return Trajectory(
        scenario=scenario,
        samples=samples,
        report=report,
        status=status,
        t_fail=None if status is Status.COMPLETED else float(t_fail),
        stats=stats,
        steps=ts,
        counters=cnt,
    )


def gain_timeseries(traj: Trajectory):
    """``(t, k)`` with ``k = alpha(phi(t)|x(t)|)``."""
    if len(traj.samples) == 0:
        raise ValueError("empty trajectory")
    return traj.samples.t.copy(), traj.samples.k.copy()


def control_bound(max_w: float) -> float:
    """``(1 - eps) alpha(1 - eps)`` with ``eps = 1 - max_w``."""
    if max_w >= 1.0:
        return math.inf
    return max_w / (1.0 - max_w)


@dataclass(frozen=True)
class InvariantReport:
    name: str
    status: Status
    funnel_contained: bool
    margin: float
    converged: bool
    control_bounded: bool
    sup_abs_u: float
    control_limit: float
    global_: bool
    max_w: float
    final_abs_x: float

    @property
    def escaped(self) -> bool:
        return self.status is not Status.COMPLETED


def check_invariants(traj: Trajectory, conv_threshold: float = 1e-2,
                     conv_window: float = 0.2) -> InvariantReport:
    """Containment, convergence and control-bound report for one run."""
    completed = traj.status is Status.COMPLETED
    max_w = traj.stats.max_w
    contained = completed and max_w < 1.0
    eps = 1.0 - max_w
    t0 = (1.0 - conv_window) * traj.t_end
    tail = traj.samples.t >= t0
    converged = completed and bool(np.all(np.abs(traj.samples.x[tail]) <= conv_threshold))
    limit = control_bound(max_w)
    bounded = traj.stats.sup_abs_u <= limit + 1e-9
    return InvariantReport(
        name=traj.scenario.name,
        status=traj.status,
        funnel_contained=contained,
        margin=eps,
        converged=converged,
        control_bounded=bounded,
        sup_abs_u=traj.stats.sup_abs_u,
        control_limit=limit,
        global_=completed,
        max_w=max_w,
        final_abs_x=traj.stats.final_abs_x,
    )


def trajectory_csv(traj: Trajectory) -> str:
    r = traj.report
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for row in zip(r.t, r.x, r.u, r.w, r.k):
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(trajectory_csv(traj))


def read_trajectory_csv(path) -> Samples:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
        rows = [line for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in line.split(",")] for line in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    if data.ndim != 2 or data.shape[1] != 5:
        raise ValueError(f"{path}: expected 5 columns")
    return Samples(*(data[:, i] for i in range(5)))

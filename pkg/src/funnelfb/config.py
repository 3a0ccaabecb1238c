"""Experiment configuration: YAML documents <-> typed objects."""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field, replace

import yaml

from .chi import CompactBox, GridResolution, InvalidBoxError
from .core import DriftFunction, FeedbackSign, FunnelFunction, PerturbationSignal
from .engine import ScenarioSpec, Tolerances

REPORT_FORMATS = ("csv", "text-summary")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Defaults:
    t_end: float = 50.0
    tolerances: Tolerances = field(default_factory=Tolerances)
    guard_margin: float = 1e-3
    n_report: int = 2000
    conv_threshold: float = 1e-2
    conv_window: float = 0.2

    def to_dict(self):
        return {
            "t_end": self.t_end,
            "tolerances": {"rel": self.tolerances.rel, "abs": self.tolerances.abs},
            "guard_margin": self.guard_margin,
            "n_report": self.n_report,
            "conv_threshold": self.conv_threshold,
            "conv_window": self.conv_window,
        }


@dataclass(frozen=True)
class Sweep:
    """Cross product, iterated drift > perturbation > x0 > eta > funnel."""

    drift: tuple
    perturbation: tuple
    x0: tuple
    eta: tuple
    funnel: tuple
    prefix: str = "sweep"

    def expand(self, defaults: Defaults):
        out = []
        combos = itertools.product(self.drift, self.perturbation, self.x0, self.eta, self.funnel)
        for idx, (f, p, x0, eta, phi) in enumerate(combos):
            name = (f"{self.prefix}-{idx:03d}_{f.label}_{p.label}_x0={x0:g}"
                    f"_eta={int(eta):+d}_{phi.label}")
            out.append(_scenario(name, f, p, phi, eta, x0, defaults))
        return out

    def to_dict(self):
        return {
            "prefix": self.prefix,
            "drift": [d.to_dict() for d in self.drift],
            "perturbation": [p.to_dict() for p in self.perturbation],
            "x0": list(self.x0),
            "eta": [int(e) for e in self.eta],
            "funnel": [f.to_dict() for f in self.funnel],
        }


@dataclass(frozen=True)
class ChiJob:
    name: str
    box: CompactBox
    drift: DriftFunction
    eta: FeedbackSign
    n_max: int
    grid: GridResolution = field(default_factory=GridResolution)

    def to_dict(self):
        return {
            "name": self.name,
            "box": self.box.to_dict(),
            "drift": self.drift.to_dict(),
            "eta": int(self.eta),
            "n_max": self.n_max,
            "grid": self.grid.to_dict(),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    output_dir: str = "results"
    report_format: str = "csv"
    defaults: Defaults = field(default_factory=Defaults)
    scenarios: tuple = ()
    sweep: Sweep | None = None
    chi_jobs: tuple = ()

    def all_scenarios(self):
        runs = list(self.scenarios)
        if self.sweep is not None:
            runs.extend(self.sweep.expand(self.defaults))
        return runs

    def to_dict(self):
        doc = {
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "report_format": self.report_format,
            "defaults": self.defaults.to_dict(),
            "scenarios": [_scenario_dict(s, self.defaults) for s in self.scenarios],
        }
        if self.sweep is not None:
            doc["sweep"] = self.sweep.to_dict()
        doc["chi_jobs"] = [j.to_dict() for j in self.chi_jobs]
        return doc

    def with_overrides(self, rel=None, abs=None, output_dir=None) -> "ExperimentConfig":
        d = self.defaults
        if rel is not None or abs is not None:
            tol = Tolerances(rel if rel is not None else d.tolerances.rel,
                             abs if abs is not None else d.tolerances.abs)
            d = replace(d, tolerances=tol)
        scen = tuple(s.with_tolerances(rel, abs) for s in self.scenarios)
        return replace(self, defaults=d, scenarios=scen,
                       output_dir=output_dir if output_dir is not None else self.output_dir)


def _scenario(name, f, p, phi, eta, x0, d: Defaults, **over):
    return ScenarioSpec(
        drift=f, perturbation=p, funnel=phi, eta=eta, x0=x0,
        t_end=over.get("t_end", d.t_end),
        tolerances=over.get("tolerances", d.tolerances),
        guard_margin=over.get("guard_margin", d.guard_margin),
        n_report=over.get("n_report", d.n_report),
        name=name,
    )


def _scenario_dict(s: ScenarioSpec, d: Defaults):
    doc = {
        "name": s.name,
        "drift": s.drift.to_dict(),
        "perturbation": s.perturbation.to_dict(),
        "funnel": s.funnel.to_dict(),
        "eta": int(s.eta),
        "x0": s.x0,
    }
    if s.t_end != d.t_end:
        doc["t_end"] = s.t_end
    if s.tolerances != d.tolerances:
        doc["tolerances"] = {"rel": s.tolerances.rel, "abs": s.tolerances.abs}
    if s.guard_margin != d.guard_margin:
        doc["guard_margin"] = s.guard_margin
    if s.n_report != d.n_report:
        doc["n_report"] = s.n_report
    return doc


def _line_map(text):
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    root = yaml.compose(text)
    if root is not None:
        walk(root, "")
    return lines


class _Reader:
    def __init__(self, lines, seed):
        self.lines = lines
        self.seed = seed

    def fail(self, path, msg):
        p = path
        while p and p not in self.lines:
            shorter = re.sub(r"(\.[^.\[]+|\[\d+\])$", "", p)
            p = "" if shorter == p else shorter
        line = self.lines.get(p)
        loc = f" (line {line})" if line else ""
        raise ConfigError(f"{path or '<root>'}{loc}: {msg}")

    def mapping(self, obj, path, allowed):
        if not isinstance(obj, dict):
            self.fail(path, f"expected a mapping, got {type(obj).__name__}")
        extra = sorted(set(obj) - set(allowed))
        if extra:
            self.fail(f"{path}.{extra[0]}" if path else extra[0], "unknown field")
        return obj

    def number(self, obj, path, positive=False, nonneg=False):
        if isinstance(obj, bool) or not isinstance(obj, (int, float)):
            self.fail(path, f"expected a number, got {obj!r}")
        val = float(obj)
        if not math.isfinite(val):
            self.fail(path, "must be finite")
        if positive and not val > 0:
            self.fail(path, "must be positive")
        if nonneg and val < 0:
            self.fail(path, "must be non-negative")
        return val

    def integer(self, obj, path, minimum=None):
        if isinstance(obj, bool) or not isinstance(obj, int):
            self.fail(path, f"expected an integer, got {obj!r}")
        if minimum is not None and obj < minimum:
            self.fail(path, f"must be >= {minimum}")
        return obj

    def seq(self, obj, path, nonempty=True):
        if not isinstance(obj, list):
            self.fail(path, "expected a list")
        if nonempty and not obj:
            self.fail(path, "must not be empty")
        return obj

    def drift(self, obj, path):
        obj = self.mapping(obj, path, {"kind", "a", "b", "rho", "xi", "values"})
        kind = obj.get("kind")
        try:
            if kind == "zero":
                return DriftFunction.zero()
            if kind == "affine":
                return DriftFunction.affine(self.number(obj.get("a", 0.0), f"{path}.a"),
                                            self.number(obj.get("b", 0.0), f"{path}.b"))
            if kind == "quadratic":
                return DriftFunction.quadratic(self.number(obj.get("a", 1.0), f"{path}.a"))
            if kind == "table":
                return DriftFunction.table(obj.get("rho"), obj.get("xi"), obj.get("values"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            self.fail(path, str(exc))
        self.fail(f"{path}.kind", f"unknown drift kind {kind!r} (zero, affine, quadratic, table)")

    def perturbation(self, obj, path):
        obj = self.mapping(obj, path, {"kind", "value", "amplitude", "frequency", "phase",
                                       "seed", "bound", "spacing"})
        kind = obj.get("kind")
        if kind == "constant":
            return PerturbationSignal.constant(self.number(obj.get("value", 0.0), f"{path}.value"))
        if kind == "sinusoid":
            return PerturbationSignal.sinusoid(
                self.number(obj.get("amplitude", 1.0), f"{path}.amplitude"),
                self.number(obj.get("frequency", 1.0), f"{path}.frequency"),
                self.number(obj.get("phase", 0.0), f"{path}.phase"))
        if kind == "noise":
            seed = obj.get("seed", self.seed)
            return PerturbationSignal.noise_spline(
                self.integer(seed, f"{path}.seed", 0),
                self.number(obj.get("bound", 1.0), f"{path}.bound", nonneg=True),
                self.number(obj.get("spacing", 1.0), f"{path}.spacing", positive=True))
        self.fail(f"{path}.kind", f"unknown perturbation kind {kind!r} (constant, sinusoid, noise)")

    def funnel(self, obj, path):
        obj = self.mapping(obj, path, {"kind", "rate"})
        kind = obj.get("kind")
        if kind == "identity":
            return FunnelFunction.identity()
        if kind == "expm1":
            return FunnelFunction.exp_minus_one(self.number(obj.get("rate", 1.0), f"{path}.rate", positive=True))
        self.fail(f"{path}.kind", f"unknown funnel kind {kind!r} (identity, expm1)")

    def eta(self, obj, path):
        try:
            return FeedbackSign.coerce(obj)
        except ValueError as exc:
            self.fail(path, str(exc))

    def tolerances(self, obj, path, base: Tolerances):
        obj = self.mapping(obj, path, {"rel", "abs"})
        return Tolerances(self.number(obj.get("rel", base.rel), f"{path}.rel", positive=True),
                          self.number(obj.get("abs", base.abs), f"{path}.abs", positive=True))

    def defaults(self, obj, path):
        obj = self.mapping(obj or {}, path, set(Defaults.__dataclass_fields__))
        base = Defaults()
        d = Defaults(
            t_end=self.number(obj.get("t_end", base.t_end), f"{path}.t_end", positive=True),
            tolerances=self.tolerances(obj.get("tolerances", {}), f"{path}.tolerances", base.tolerances),
            guard_margin=self.number(obj.get("guard_margin", base.guard_margin), f"{path}.guard_margin", positive=True),
            n_report=self.integer(obj.get("n_report", base.n_report), f"{path}.n_report", 2),
            conv_threshold=self.number(obj.get("conv_threshold", base.conv_threshold), f"{path}.conv_threshold", positive=True),
            conv_window=self.number(obj.get("conv_window", base.conv_window), f"{path}.conv_window", positive=True),
        )
        if d.guard_margin >= 1:
            self.fail(f"{path}.guard_margin", "must lie in (0, 1)")
        if d.conv_window > 1:
            self.fail(f"{path}.conv_window", "must lie in (0, 1]")
        return d

    def scenario(self, obj, path, d: Defaults):
        obj = self.mapping(obj, path, {"name", "drift", "perturbation", "funnel", "eta", "x0",
                                       "t_end", "tolerances", "guard_margin", "n_report"})
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            self.fail(f"{path}.name", "scenario needs a non-empty name")
        over = {}
        if "t_end" in obj:
            over["t_end"] = self.number(obj["t_end"], f"{path}.t_end", positive=True)
        if "tolerances" in obj:
            over["tolerances"] = self.tolerances(obj["tolerances"], f"{path}.tolerances", d.tolerances)
        if "guard_margin" in obj:
            gm = self.number(obj["guard_margin"], f"{path}.guard_margin", positive=True)
            if gm >= 1:
                self.fail(f"{path}.guard_margin", "must lie in (0, 1)")
            over["guard_margin"] = gm
        if "n_report" in obj:
            over["n_report"] = self.integer(obj["n_report"], f"{path}.n_report", 2)
        return _scenario(
            name,
            self.drift(obj.get("drift", {"kind": "zero"}), f"{path}.drift"),
            self.perturbation(obj.get("perturbation", {"kind": "constant"}), f"{path}.perturbation"),
            self.funnel(obj.get("funnel", {"kind": "identity"}), f"{path}.funnel"),
            self.eta(obj.get("eta", 1), f"{path}.eta"),
            self.number(obj.get("x0", 0.0), f"{path}.x0"),
            d, **over)

    def sweep(self, obj, path):
        obj = self.mapping(obj, path, {"prefix", "drift", "perturbation", "x0", "eta", "funnel"})
        for key in ("drift", "perturbation", "x0", "eta", "funnel"):
            if key not in obj:
                self.fail(f"{path}.{key}", "missing sweep axis")
        return Sweep(
            drift=tuple(self.drift(o, f"{path}.drift[{i}]")
                        for i, o in enumerate(self.seq(obj["drift"], f"{path}.drift"))),
            perturbation=tuple(self.perturbation(o, f"{path}.perturbation[{i}]")
                               for i, o in enumerate(self.seq(obj["perturbation"], f"{path}.perturbation"))),
            x0=tuple(self.number(o, f"{path}.x0[{i}]")
                     for i, o in enumerate(self.seq(obj["x0"], f"{path}.x0"))),
            eta=tuple(self.eta(o, f"{path}.eta[{i}]")
                      for i, o in enumerate(self.seq(obj["eta"], f"{path}.eta"))),
            funnel=tuple(self.funnel(o, f"{path}.funnel[{i}]")
                         for i, o in enumerate(self.seq(obj["funnel"], f"{path}.funnel"))),
            prefix=str(obj.get("prefix", "sweep")),
        )

    def chi_job(self, obj, path):
        obj = self.mapping(obj, path, {"name", "box", "drift", "eta", "n_max", "grid"})
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            self.fail(f"{path}.name", "chi job needs a non-empty name")
        box = self.mapping(obj.get("box", {}), f"{path}.box", {"P", "K"})
        try:
            cbox = CompactBox(box.get("P", (0.0, 0.0)), box.get("K", (-1.0, 1.0)))
        except InvalidBoxError as exc:
            self.fail(f"{path}.box", str(exc))
        grid = self.mapping(obj.get("grid", {}), f"{path}.grid", {"n_p", "n_k", "n_v", "depth"})
        base = GridResolution()
        res = GridResolution(
            self.integer(grid.get("n_p", base.n_p), f"{path}.grid.n_p", 3),
            self.integer(grid.get("n_k", base.n_k), f"{path}.grid.n_k", 3),
            self.integer(grid.get("n_v", base.n_v), f"{path}.grid.n_v", 3),
            self.integer(grid.get("depth", base.depth), f"{path}.grid.depth", 0),
        )
        return ChiJob(
            name=name,
            box=cbox,
            drift=self.drift(obj.get("drift", {"kind": "zero"}), f"{path}.drift"),
            eta=self.eta(obj.get("eta", 1), f"{path}.eta"),
            n_max=self.integer(obj.get("n_max"), f"{path}.n_max", 0),
            grid=res,
        )


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    """Parse a YAML experiment document.

    ``seed`` overrides the document's top-level seed, which is the default
    for noise perturbations that do not carry their own.
    """
    try:
        doc = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark else ""
        raise ConfigError(f"<root>{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if doc is None:
        doc = {}
    r = _Reader(lines, 0)
    doc = r.mapping(doc, "", {"name", "seed", "output_dir", "report_format", "defaults",
                              "scenarios", "sweep", "chi_jobs"})
    r.seed = seed if seed is not None else r.integer(doc.get("seed", 0), "seed", 0)
    fmt = doc.get("report_format", "csv")
    if fmt not in REPORT_FORMATS:
        r.fail("report_format", f"must be one of {REPORT_FORMATS}")
    defaults = r.defaults(doc.get("defaults"), "defaults")
    scenarios = tuple(r.scenario(o, f"scenarios[{i}]", defaults)
                      for i, o in enumerate(r.seq(doc.get("scenarios", []), "scenarios", nonempty=False)))
    sweep = r.sweep(doc["sweep"], "sweep") if doc.get("sweep") is not None else None
    jobs = tuple(r.chi_job(o, f"chi_jobs[{i}]")
                 for i, o in enumerate(r.seq(doc.get("chi_jobs", []), "chi_jobs", nonempty=False)))
    cfg = ExperimentConfig(
        name=str(doc.get("name", "experiment")),
        seed=r.seed,
        output_dir=str(doc.get("output_dir", "results")),
        report_format=fmt,
        defaults=defaults,
        scenarios=scenarios,
        sweep=sweep,
        chi_jobs=jobs,
    )
    seen = set()
    for s in cfg.all_scenarios():
        if s.name in seen:
            raise ConfigError(f"scenarios: duplicate scenario name {s.name!r}")
        seen.add(s.name)
    names = [j.name for j in jobs]
    if len(set(names)) != len(names):
        raise ConfigError("chi_jobs: duplicate job name")
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), seed)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None, width=100)

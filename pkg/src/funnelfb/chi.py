"""Brute-force evaluation of the worst-case dissipation function chi.

``chi(s) = min { v f(rho, xi) + v g(s v) : rho in P, xi in K, v in V }``
with ``V = [-1, -1/2] U [1/2, 1]``. Grid minima are upper bounds on the true
minimum; they only decrease as the grid is refined (for nested grids).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from ._jit import USE_NUMBA
from .core import DriftFunction, FeedbackSign, g_eval

V_HALVES = ((-1.0, -0.5), (0.5, 1.0))
CERT_TOL = 1e-6
CERT_HEADER = "n,s_n,chi,bound,margin"


class InvalidBoxError(ValueError):
    pass


class CertificationError(RuntimeError):
    def __init__(self, index, message):
        super().__init__(message)
        self.index = index


def _interval(iv, name):
    try:
        lo, hi = (float(v) for v in iv)
    except (TypeError, ValueError):
        raise InvalidBoxError(f"{name} must be a pair [lo, hi], got {iv!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise InvalidBoxError(f"{name} must be bounded, got {iv!r}")
    if lo > hi:
        raise InvalidBoxError(f"{name} is inverted: [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class CompactBox:
    """Perturbation range ``P`` and state range ``K``; ``V`` is fixed."""

    P: tuple = (0.0, 0.0)
    K: tuple = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "P", _interval(self.P, "P"))
        object.__setattr__(self, "K", _interval(self.K, "K"))

    @classmethod
    def symmetric(cls, bound: float, mu: float) -> "CompactBox":
        if bound < 0 or mu < 0:
            raise InvalidBoxError("bounds must be non-negative")
        return cls((-bound, bound), (-mu, mu))

    @property
    def V(self):
        return V_HALVES

    def to_dict(self):
        return {"P": list(self.P), "K": list(self.K)}


@dataclass(frozen=True)
class GridResolution:
    n_p: int = 64
    n_k: int = 64
    n_v: int = 32  # per half of V
    depth: int = 6

    def __post_init__(self):
        if min(self.n_p, self.n_k, self.n_v) < 3:
            raise ValueError("grid needs at least 3 points per axis")
        if self.depth < 0:
            raise ValueError("refinement depth must be non-negative")

    def doubled(self) -> "GridResolution":
        # 2n - 1 points keep the coarse grid as a subset
        return GridResolution(2 * self.n_p - 1, 2 * self.n_k - 1, 2 * self.n_v - 1, self.depth)

    def to_dict(self):
        return {"n_p": self.n_p, "n_k": self.n_k, "n_v": self.n_v, "depth": self.depth}


def _axis(lo, hi, n):
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def _v_axis(n):
    return np.concatenate([np.linspace(a, b, n) for a, b in V_HALVES])


@dataclass(frozen=True)
class ChiEvaluation:
    s: float
    value: float
    argmin: tuple
    grid_resolution: tuple
    refinement_depth: int
    grid_value: float = field(default=math.nan)  # before refinement


def objective(drift: DriftFunction, rho, xi, v, s):
    """``v f(rho, xi) + v g(s v)``."""
    return v * drift(rho, xi) + v * g_eval(s * v)


def _grid_min_numpy(ps, ks, vs, s, drift):
    fgrid = np.asarray(drift(ps[:, None], ks[None, :]), dtype=float).reshape(ps.size, ks.size)
    vals = vs[None, None, :] * fgrid[:, :, None] + (vs * g_eval(s * vs))[None, None, :]
    flat = int(np.argmin(vals))  # first occurrence = lexicographically smallest
    i, j, l = np.unravel_index(flat, vals.shape)
    return float(vals[i, j, l]), int(i), int(j), int(l)


def grid_min(ps, ks, vs, s, drift, use_numba=USE_NUMBA):
    if use_numba:
        fk, a, b, rg, xg, tab = drift.encode()
        best, i, j, l = K.chi_grid_kernel(ps, ks, vs, float(s), fk, a, b, rg, xg, tab)
        return float(best), int(i), int(j), int(l)
    return _grid_min_numpy(ps, ks, vs, s, drift)


def _refine(drift, s, box, start, widths, depth):
    z = list(start)
    v_lo, v_hi = V_HALVES[0] if z[2] < 0 else V_HALVES[1]
    bounds = [box.P, box.K, (v_lo, v_hi)]
    best = float(objective(drift, z[0], z[1], z[2], s))
    w = list(widths)
    for _ in range(depth):
        for axis in range(3):
            if w[axis] == 0.0:
                continue
            for step in (-w[axis], w[axis]):
                cand = list(z)
                cand[axis] = min(max(z[axis] + step, bounds[axis][0]), bounds[axis][1])
                val = float(objective(drift, cand[0], cand[1], cand[2], s))
                if val < best:
                    best, z = val, cand
        w = [x / 2 for x in w]
    return best, tuple(z)


def chi_eval(box: CompactBox, drift: DriftFunction, s: float,
             grid: GridResolution = GridResolution(), use_numba=USE_NUMBA) -> ChiEvaluation:
    """Grid minimum of the objective, then coordinate descent around it.

    Each refinement level tries one grid spacing either side of the current
    point along each axis in turn, keeps strict improvements and halves the
    spacing. The argmin stays inside ``P x K x V``.
    """
    if not isinstance(box, CompactBox):
        box = CompactBox(*box)
    ps = _axis(*box.P, grid.n_p)
    ks = _axis(*box.K, grid.n_k)
    vs = _v_axis(grid.n_v)
    best, i, j, l = grid_min(ps, ks, vs, s, drift, use_numba)
    widths = [
        (box.P[1] - box.P[0]) / (grid.n_p - 1),
        (box.K[1] - box.K[0]) / (grid.n_k - 1),
        0.5 / (grid.n_v - 1),
    ]
    value, z = _refine(drift, float(s), box, (ps[i], ks[j], vs[l]), widths, grid.depth)
    if best < value:  # refinement re-evaluates in numpy; keep the smaller
        value, z = best, (float(ps[i]), float(ks[j]), float(vs[l]))
    return ChiEvaluation(
        s=float(s),
        value=float(value),
        argmin=tuple(float(c) for c in z),
        grid_resolution=(ps.size, ks.size, vs.size),
        refinement_depth=grid.depth,
        grid_value=best,
    )


def drift_minimum(box: CompactBox, drift: DriftFunction,
                  grid: GridResolution = GridResolution(), use_numba=USE_NUMBA) -> float:
    """``c1 = min v f(rho, xi)`` over the box, i.e. the objective at ``s = 0``."""
    return chi_eval(box, drift, 0.0, grid, use_numba).value


def s_sequence(n: int) -> float:
    """``exp((n + 1) pi) / 2 - 1``."""
    if int(n) != n or n < 0:
        raise ValueError(f"n must be a non-negative integer, got {n!r}")
    return 0.5 * math.exp((int(n) + 1) * math.pi) - 1.0  # OverflowError past n ~ 224


def nu_eval(box, drift, eta, s, grid: GridResolution = GridResolution()) -> float:
    if s < 0:
        raise ValueError("nu is defined for s >= 0")
    return max(chi_eval(box, drift, int(FeedbackSign.coerce(eta)) * s, grid).value, 0.0)


def continuity_probe(box, drift, s_center, radius, samples, grid: GridResolution = GridResolution()):
    """Largest ``|chi(s_i+1) - chi(s_i)| / (s_i+1 - s_i)`` on an even sweep."""
    if samples < 2:
        raise ValueError("need at least two samples")
    if not radius > 0:
        raise ValueError("radius must be positive")
    ss = np.linspace(s_center - radius, s_center + radius, samples)
    vals = np.array([chi_eval(box, drift, s, grid).value for s in ss])
    return float(np.max(np.abs(np.diff(vals)) / np.diff(ss)))


@dataclass(frozen=True)
class UnboundednessCertificate:
    eta: FeedbackSign
    indices: tuple
    s_values: tuple
    chi_values: tuple
    lower_bounds: tuple
    c1: float
    tol: float = CERT_TOL

    @property
    def margins(self):
        return tuple(c - b for c, b in zip(self.chi_values, self.lower_bounds))

    @property
    def ok(self) -> bool:
        return all(m >= -self.tol for m in self.margins)

    def first_violation(self):
        for n, m in zip(self.indices, self.margins):
            if m < -self.tol:
                return n
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CERT_HEADER + "\n")
        for row in zip(self.indices, self.s_values, self.chi_values, self.lower_bounds, self.margins):
            buf.write(f"{row[0]}," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
        return buf.getvalue()


def read_certificate_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CERT_HEADER:
            raise ValueError(f"{path}: expected header {CERT_HEADER!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return [(int(r[0]), *(float(v) for v in r[1:])) for r in rows]


def certify_unboundedness(box, drift, eta, n_max: int, grid: GridResolution = GridResolution(),
                          strict: bool = True, tol: float = CERT_TOL) -> UnboundednessCertificate:
    """Evaluate chi along ``eta * s_n`` on the branch that the sign selects.

    ``eta = +1`` uses even ``n`` at ``s_n``; ``eta = -1`` uses odd ``n`` at
    ``-s_n``. Each value must dominate ``c1 + s_n sin(ln 2) / 4``.
    """
    eta = FeedbackSign.coerce(eta)
    first = 0 if eta is FeedbackSign.NEGATIVE else 1
    indices = tuple(range(first, n_max + 1, 2))
    if not indices:
        raise ValueError(f"no {'even' if first == 0 else 'odd'} index up to n_max={n_max}")
    c1 = drift_minimum(box, drift, grid)
    slope = 0.25 * math.sin(math.log(2.0))
    s_values = tuple(s_sequence(n) for n in indices)
    chis = tuple(chi_eval(box, drift, int(eta) * s, grid).value for s in s_values)
    bounds = tuple(c1 + slope * s for s in s_values)
    cert = UnboundednessCertificate(eta, indices, s_values, chis, bounds, c1, tol)
    bad = cert.first_violation()
    if strict and bad is not None:
        raise CertificationError(bad, f"chi below certified bound at n={bad}")
    return cert

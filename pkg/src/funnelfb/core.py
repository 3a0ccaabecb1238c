"""Scalar building blocks of the funnel-controlled closed loop.

The plant is ``x' = f(p(t), x) + g(u)`` with input nonlinearity
``g(v) = v sin(ln(1 + |v|))`` and feedback ``u = -eta * h(t, x)`` where
``h(t, xi) = alpha(phi(t)|xi|) phi(t) xi`` and ``alpha(s) = 1/(1 - s)``.
``h`` is only defined inside the funnel ``phi(t)|xi| < 1``.

Functions here are the readable numpy reference; the integrator runs the
compiled twins in :mod:`funnelfb.kernels`, fed by each type's ``encode()``.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator

from . import kernels as K


class DomainError(ValueError):
    """Evaluation requested outside the domain of a function."""


class FunnelBoundaryError(DomainError):
    """``(t, xi)`` lies on or outside the funnel boundary."""


def alpha_eval(s):
    """Gain function ``1/(1 - s)`` on ``[0, 1)``."""
    s = float(s)
    if not 0.0 <= s < 1.0:
        raise DomainError(f"alpha is defined on [0, 1), got {s!r}")
    return 1.0 / (1.0 - s)


def g_eval(v):
    """``v * sin(ln(1 + |v|))``; works elementwise on arrays."""
    v = np.asarray(v, dtype=float)
    out = v * np.sin(np.log1p(np.abs(v)))
    return out if out.ndim else float(out)


def g_prime(v):
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    lg = np.log1p(a)
    out = np.sin(lg) + a / (1.0 + a) * np.cos(lg)
    return out if out.ndim else float(out)


class FeedbackSign(enum.IntEnum):
    """The sign parameter ``eta``; ``u = -eta * h``."""

    NEGATIVE = 1
    POSITIVE = -1

    @classmethod
    def coerce(cls, value) -> "FeedbackSign":
        if isinstance(value, str):
            value = value.strip().lower()
            aliases = {"negative": 1, "positive": -1, "+1": 1, "1": 1, "-1": -1}
            if value not in aliases:
                raise ValueError(f"eta must be -1 or +1, got {value!r}")
            value = aliases[value]
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if value not in (1, -1) or isinstance(value, bool):
            raise ValueError(f"eta must be -1 or +1, got {value!r}")
        return cls(value)


class FunnelKind(enum.Enum):
    IDENTITY = "identity"
    EXP_MINUS_ONE = "expm1"


@dataclass(frozen=True)
class FunnelFunction:
    """Funnel shape ``phi`` with growth constant ``c_phi``.

    Both shipped families satisfy ``phi(0) = 0``, are increasing bijections
    of ``[0, inf)`` and obey ``phi' <= c_phi (1 + phi)``:

    * identity, ``c_phi = 1``;
    * ``exp(rate t) - 1``, for which ``phi' = rate (1 + phi)`` so ``c_phi = rate``.
    """

    kind: FunnelKind = FunnelKind.IDENTITY
    rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FunnelKind(self.kind))
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"funnel rate must be positive and finite, got {self.rate!r}")

    @classmethod
    def identity(cls) -> "FunnelFunction":
        return cls(FunnelKind.IDENTITY, 1.0)

    @classmethod
    def exp_minus_one(cls, rate: float) -> "FunnelFunction":
        return cls(FunnelKind.EXP_MINUS_ONE, float(rate))

    @property
    def c_phi(self) -> float:
        return 1.0 if self.kind is FunnelKind.IDENTITY else self.rate

    @property
    def label(self) -> str:
        if self.kind is FunnelKind.IDENTITY:
            return "identity"
        return f"expm1({self.rate:g})"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = t.copy() if self.kind is FunnelKind.IDENTITY else np.expm1(self.rate * t)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is FunnelKind.IDENTITY:
            out = np.ones_like(t)
        else:
            out = self.rate * np.exp(self.rate * t)
        return out if out.ndim else float(out)

    def growth_excess(self, t_end: float, samples: int = 2001, delta: float = 1e-6) -> float:
        """Largest ``D(t) - c_phi (1 + phi(t + delta))`` over sampled ``t``.

        ``D`` is the forward difference over ``[t, t + delta]``. By the mean
        value theorem it equals ``phi'`` somewhere in that interval, where the
        growth bound is at most ``c_phi (1 + phi(t + delta))`` because ``phi``
        increases. Non-positive (up to rounding) for an admissible funnel.
        """
        t = np.linspace(0.0, t_end, samples)
        lo = self(t)
        hi = self(t + delta)
        slope = (hi - lo) / delta
        return float(np.max(slope - self.c_phi * (1.0 + hi)))

    def encode(self):
        kind = K.FUNNEL_IDENTITY if self.kind is FunnelKind.IDENTITY else K.FUNNEL_EXPM1
        return kind, self.rate

    def to_dict(self) -> dict:
        if self.kind is FunnelKind.IDENTITY:
            return {"kind": "identity"}
        return {"kind": "expm1", "rate": self.rate}


class DriftKind(enum.Enum):
    ZERO = "zero"
    AFFINE = "affine"
    QUADRATIC = "quadratic"
    TABLE = "table"


@dataclass(frozen=True, eq=False)
class DriftFunction:
    """Drift ``f(rho, xi)``; ``rho`` is the perturbation value, ``xi`` the state.

    ``AFFINE``: ``a rho + b xi``. ``QUADRATIC``: ``rho + a xi**2``.
    ``TABLE``: bilinear interpolation of samples on a rectangular grid,
    held constant outside it.
    """

    kind: DriftKind = DriftKind.ZERO
    a: float = 0.0
    b: float = 0.0
    rho_grid: tuple = ()
    xi_grid: tuple = ()
    values: tuple = ()
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", DriftKind(self.kind))
        if self.kind is DriftKind.TABLE:
            rg = np.asarray(self.rho_grid, dtype=float)
            xg = np.asarray(self.xi_grid, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if rg.ndim != 1 or xg.ndim != 1 or rg.size < 2 or xg.size < 2:
                raise ValueError("drift table needs at least two points on each axis")
            if np.any(np.diff(rg) <= 0) or np.any(np.diff(xg) <= 0):
                raise ValueError("drift table axes must be strictly increasing")
            if vals.shape != (rg.size, xg.size):
                raise ValueError(f"drift table values must have shape {(rg.size, xg.size)}, got {vals.shape}")
            if not np.all(np.isfinite(vals)):
                raise ValueError("drift table values must be finite")
            object.__setattr__(self, "rho_grid", tuple(rg.tolist()))
            object.__setattr__(self, "xi_grid", tuple(xg.tolist()))
            object.__setattr__(self, "values", tuple(map(tuple, vals.tolist())))
            object.__setattr__(self, "_interp", RegularGridInterpolator((rg, xg), vals, method="linear"))

    @classmethod
    def zero(cls):
        return cls(DriftKind.ZERO)

    @classmethod
    def affine(cls, a, b):
        return cls(DriftKind.AFFINE, float(a), float(b))

    @classmethod
    def quadratic(cls, a):
        return cls(DriftKind.QUADRATIC, float(a))

    @classmethod
    def table(cls, rho_grid, xi_grid, values):
        return cls(DriftKind.TABLE, rho_grid=rho_grid, xi_grid=xi_grid, values=values)

    def __eq__(self, other):
        if not isinstance(other, DriftFunction):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.kind, self.a, self.b, self.rho_grid, self.xi_grid, self.values))

    @property
    def label(self) -> str:
        if self.kind is DriftKind.AFFINE:
            return f"affine({self.a:g},{self.b:g})"
        if self.kind is DriftKind.QUADRATIC:
            return f"quadratic({self.a:g})"
        return self.kind.value

    def __call__(self, rho, xi):
        rho, xi = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(xi, dtype=float))
        if self.kind is DriftKind.AFFINE:
            out = self.a * rho + self.b * xi
        elif self.kind is DriftKind.QUADRATIC:
            out = rho + self.a * xi * xi
        elif self.kind is DriftKind.TABLE:
            rg, xg = self.rho_grid, self.xi_grid
            pts = np.stack([np.clip(rho, rg[0], rg[-1]), np.clip(xi, xg[0], xg[-1])], axis=-1)
            out = self._interp(pts.reshape(-1, 2)).reshape(rho.shape)
        else:
            out = np.zeros(rho.shape)
        return out if out.ndim else float(out)

    def encode(self):
        kinds = {
            DriftKind.ZERO: K.DRIFT_ZERO,
            DriftKind.AFFINE: K.DRIFT_AFFINE,
            DriftKind.QUADRATIC: K.DRIFT_QUADRATIC,
            DriftKind.TABLE: K.DRIFT_TABLE,
        }
        if self.kind is DriftKind.TABLE:
            rg = np.asarray(self.rho_grid, dtype=float)
            xg = np.asarray(self.xi_grid, dtype=float)
            tab = np.ascontiguousarray(self.values, dtype=float)
        else:
            rg = np.zeros(2)
            xg = np.zeros(2)
            tab = np.zeros((2, 2))
        return kinds[self.kind], self.a, self.b, rg, xg, tab

    def to_dict(self) -> dict:
        if self.kind is DriftKind.AFFINE:
            return {"kind": "affine", "a": self.a, "b": self.b}
        if self.kind is DriftKind.QUADRATIC:
            return {"kind": "quadratic", "a": self.a}
        if self.kind is DriftKind.TABLE:
            return {
                "kind": "table",
                "rho": list(self.rho_grid),
                "xi": list(self.xi_grid),
                "values": [list(r) for r in self.values],
            }
        return {"kind": "zero"}


class PerturbationKind(enum.Enum):
    CONSTANT = "constant"
    SINUSOID = "sinusoid"
    NOISE_SPLINE = "noise"


@functools.lru_cache(maxsize=64)
def _noise_spline(seed: int, bound: float, spacing: float, n_knots: int):
    # drawing sequentially from one stream makes shorter knot sets prefixes
    # of longer ones, so p on the covered range does not depend on n_knots
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-bound, bound, size=n_knots)
    knots = spacing * np.arange(n_knots, dtype=float)
    spline = PchipInterpolator(knots, vals, extrapolate=False)
    breaks = np.ascontiguousarray(spline.x)
    coef = np.ascontiguousarray(spline.c)
    breaks.setflags(write=False)
    coef.setflags(write=False)
    return breaks, coef


@dataclass(frozen=True)
class PerturbationSignal:
    """Bounded continuous perturbation ``p(t)``.

    ``CONSTANT``: ``value``. ``SINUSOID``: ``amplitude sin(frequency t + phase)``.
    ``NOISE_SPLINE``: monotone cubic (PCHIP) interpolation through knots drawn
    uniformly from ``[-bound, bound]`` every ``spacing`` time units, using
    ``seed``. PCHIP never overshoots its data, so ``|p| <= bound`` holds.
    """

    kind: PerturbationKind = PerturbationKind.CONSTANT
    value: float = 0.0
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    seed: int = 0
    spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if self.kind is PerturbationKind.NOISE_SPLINE:
            if not self.spacing > 0:
                raise ValueError("noise knot spacing must be positive")
            if not self.amplitude >= 0:
                raise ValueError("noise bound must be non-negative")
            if int(self.seed) != self.seed or self.seed < 0:
                raise ValueError("noise seed must be a non-negative integer")
            object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def constant(cls, c=0.0):
        return cls(PerturbationKind.CONSTANT, value=float(c))

    @classmethod
    def sinusoid(cls, amplitude=1.0, frequency=1.0, phase=0.0):
        return cls(PerturbationKind.SINUSOID, amplitude=float(amplitude),
                   frequency=float(frequency), phase=float(phase))

    @classmethod
    def noise_spline(cls, seed=0, bound=1.0, spacing=1.0):
        return cls(PerturbationKind.NOISE_SPLINE, amplitude=float(bound),
                   seed=int(seed), spacing=float(spacing))

    @property
    def bound(self) -> float:
        if self.kind is PerturbationKind.CONSTANT:
            return abs(self.value)
        return abs(self.amplitude)

    @property
    def label(self) -> str:
        if self.kind is PerturbationKind.CONSTANT:
            return f"const({self.value:g})"
        if self.kind is PerturbationKind.SINUSOID:
            return f"sin({self.amplitude:g},{self.frequency:g},{self.phase:g})"
        return f"noise({self.seed},{self.amplitude:g},{self.spacing:g})"

    def _spline(self, horizon: float):
        n = int(math.ceil(max(horizon, 0.0) / self.spacing)) + 4
        return _noise_spline(self.seed, self.amplitude, self.spacing, n)

    def encode(self, horizon: float):
        if self.kind is PerturbationKind.CONSTANT:
            return K.PERT_CONSTANT, (self.value, 0.0, 0.0), np.zeros(2), np.zeros((4, 1))
        if self.kind is PerturbationKind.SINUSOID:
            return (K.PERT_SINUSOID, (self.amplitude, self.frequency, self.phase),
                    np.zeros(2), np.zeros((4, 1)))
        br, coef = self._spline(horizon)
        return K.PERT_SPLINE, (0.0, 0.0, 0.0), br.copy(), coef.copy()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is PerturbationKind.CONSTANT:
            out = np.full(t.shape, self.value)
        elif self.kind is PerturbationKind.SINUSOID:
            out = self.amplitude * np.sin(self.frequency * t + self.phase)
        else:
            horizon = float(np.max(t)) if t.size else 0.0
            br, coef = self._spline(horizon)
            tt = np.clip(t, br[0], br[-1])
            i = np.clip(np.searchsorted(br, tt, side="right") - 1, 0, br.size - 2)
            d = tt - br[i]
            out = ((coef[0, i] * d + coef[1, i]) * d + coef[2, i]) * d + coef[3, i]
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        if self.kind is PerturbationKind.CONSTANT:
            return {"kind": "constant", "value": self.value}
        if self.kind is PerturbationKind.SINUSOID:
            return {"kind": "sinusoid", "amplitude": self.amplitude,
                    "frequency": self.frequency, "phase": self.phase}
        return {"kind": "noise", "seed": self.seed, "bound": self.amplitude,
                "spacing": self.spacing}


def in_funnel(phi: FunnelFunction, t, xi) -> bool:
    return phi(t) * abs(xi) < 1.0


def h_eval(phi: FunnelFunction, t: float, xi: float) -> float:
    """Funnel feedback ``alpha(phi(t)|xi|) phi(t) xi``."""
    ph = phi(t)
    w = ph * abs(xi)
    if not w < 1.0:
        raise FunnelBoundaryError(f"phi(t)|xi| = {w!r} >= 1 at t={t!r}, xi={xi!r}")
    return alpha_eval(w) * ph * xi


def control(scenario, t: float, x: float) -> float:
    """Control value ``u = -eta h(t, x)``."""
    return -int(scenario.eta) * h_eval(scenario.funnel, t, x)


def closed_loop_rhs(scenario, t: float, x: float) -> float:
    """``f(p(t), x) + g(-eta h(t, x))`` for any object carrying the model fields."""
    u = control(scenario, t, x)
    return float(scenario.drift(scenario.perturbation(t), x)) + g_eval(u)

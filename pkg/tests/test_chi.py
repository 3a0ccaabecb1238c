import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnelfb.chi import (
    CertificationError,
    CompactBox,
    GridResolution,
    InvalidBoxError,
    certify_unboundedness,
    chi_eval,
    continuity_probe,
    drift_minimum,
    grid_min,
    nu_eval,
    objective,
    read_certificate_csv,
    s_sequence,
)
from funnelfb.core import DriftFunction, FeedbackSign

# 30-digit mpmath values of exp((n+1) pi)/2 - 1 and s_n sin(ln 2)/4
S_N = [10.570346316389634502864543184, 266.745827762382368251524664795,
       6194.82390395834874075327045101, 143374.656568326649873345812387,
       3317810.99967056711663313203355]
BOUND_N = [1.6885104933493622600379500142, 42.6100636395972093664379528188,
           989.563147052860081380537543617, 22902.7133879817648226599168908,
           529988.187729230534405654273797]

ZERO = DriftFunction.zero()
RHO = DriftFunction.affine(1, 0)
UNIT = CompactBox((0, 0), (-1, 1))
SQUARE = CompactBox((-1, 1), (-1, 1))


def test_chi_zero_at_origin():
    assert chi_eval(SQUARE, ZERO, 0.0).value == 0.0


def test_chi_positive_branch_lower_bound():
    ev = chi_eval(UNIT, ZERO, s_sequence(0))
    assert ev.value >= BOUND_N[0]


def test_chi_drift_only_brute_force():
    # extremes of v*rho over {+-1/2, +-1} x {+-1}
    oracle = min(v * r for v, r in itertools.product([-1, -0.5, 0.5, 1], [-1, 1]))
    ev = chi_eval(SQUARE, RHO, 0.0)
    assert ev.value == oracle == -1.0
    assert ev.argmin == (-1.0, -1.0, 1.0)  # lexicographically first minimiser


def test_chi_evaluation_fields_consistent():
    ev = chi_eval(SQUARE, DriftFunction.quadratic(0.3), 17.0)
    rho, xi, v = ev.argmin
    assert -1 <= rho <= 1 and -1 <= xi <= 1 and 0.5 <= abs(v) <= 1
    assert ev.value == pytest.approx(objective(DriftFunction.quadratic(0.3), rho, xi, v, 17.0), rel=1e-14)
    assert ev.grid_resolution == (64, 64, 64)
    assert ev.refinement_depth == 6
    assert ev.value <= ev.grid_value


def test_chi_against_dense_brute_force():
    drift = DriftFunction.affine(0.7, -1.3)
    box = CompactBox((-0.5, 0.8), (-1.0, 0.4))
    for s in (-40.0, 3.0, 250.0):
        p = np.linspace(*box.P, 201)
        k = np.linspace(*box.K, 201)
        v = np.concatenate([np.linspace(-1, -0.5, 401), np.linspace(0.5, 1, 401)])
        P, Kk, V = np.meshgrid(p, k, v, indexing="ij")
        dense = np.min(objective(drift, P, Kk, V, s))
        ev = chi_eval(box, drift, s)
        assert ev.value <= ev.grid_value
        assert ev.value == pytest.approx(dense, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("P, K_", [((1, 0), (0, 1)), ((0, 1), (2, -2)), ((0, math.inf), (0, 1))])
def test_invalid_box(P, K_):
    with pytest.raises(InvalidBoxError):
        CompactBox(P, K_)


def test_grid_needs_three_points():
    with pytest.raises(ValueError):
        GridResolution(2, 64, 32)


@pytest.mark.parametrize("n", range(5))
def test_s_sequence_values(n):
    assert s_sequence(n) == pytest.approx(S_N[n], rel=1e-14)


def test_s_sequence_errors():
    with pytest.raises(ValueError):
        s_sequence(-1)
    with pytest.raises(OverflowError):
        s_sequence(300)


def test_s_sequence_increasing():
    vals = [s_sequence(n) for n in range(50)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("n", range(11))
def test_log_identities(n):
    s = s_sequence(n)
    assert abs(math.log1p(s) - ((n + 1) * math.pi - math.log(2))) < 1e-9
    assert math.log1p(0.5 * s) > n * math.pi + math.pi / 2


def test_certificate_positive_feedback_sign_plus():
    cert = certify_unboundedness(UNIT, ZERO, +1, 4)
    assert cert.indices == (0, 2, 4)
    assert cert.c1 == 0.0
    for got, want in zip(cert.lower_bounds, [BOUND_N[0], BOUND_N[2], BOUND_N[4]]):
        assert got == pytest.approx(want, rel=1e-13)
    assert all(m > 0 for m in cert.margins)
    assert all(a < b for a, b in zip(cert.lower_bounds, cert.lower_bounds[1:]))
    assert cert.ok


def test_certificate_negative_branch():
    cert = certify_unboundedness(UNIT, ZERO, -1, 3)
    assert cert.indices == (1, 3)
    assert cert.lower_bounds[0] == pytest.approx(BOUND_N[1], rel=1e-13)
    for s, chi in zip(cert.s_values, cert.chi_values):
        assert chi == chi_eval(UNIT, ZERO, -s).value
    assert cert.ok


def test_certificate_single_entry():
    cert = certify_unboundedness(UNIT, ZERO, 1, 0)
    assert cert.indices == (0,)


def test_certificate_empty_branch_rejected():
    with pytest.raises(ValueError):
        certify_unboundedness(UNIT, ZERO, -1, 0)


def test_certificate_failure_reports_index(monkeypatch):
    import funnelfb.chi as chi_mod

    real = chi_mod.chi_eval

    def broken(box, drift, s, grid=GridResolution(), use_numba=chi_mod.USE_NUMBA):
        ev = real(box, drift, s, grid)
        return ev if abs(s) < 1000 else chi_mod.ChiEvaluation(s, -1e9, ev.argmin, ev.grid_resolution, 0)

    monkeypatch.setattr(chi_mod, "chi_eval", broken)
    with pytest.raises(CertificationError) as err:
        certify_unboundedness(UNIT, ZERO, 1, 4)
    assert err.value.index == 2
    cert = certify_unboundedness(UNIT, ZERO, 1, 4, strict=False)
    assert cert.first_violation() == 2 and not cert.ok


def test_certificate_csv_roundtrip(tmp_path):
    cert = certify_unboundedness(UNIT, ZERO, 1, 2)
    path = tmp_path / "c.csv"
    path.write_text(cert.to_csv())
    rows = read_certificate_csv(path)
    assert [r[0] for r in rows] == [0, 2]
    assert rows[1][1] == cert.s_values[1]
    assert rows[1][4] == cert.margins[1]


def test_nu_examples():
    assert nu_eval(SQUARE, ZERO, 1, 0.0) == 0.0
    assert chi_eval(SQUARE, RHO, 0.0).value == -1.0
    assert nu_eval(SQUARE, RHO, 1, 0.0) == 0.0
    s0 = s_sequence(0)
    assert nu_eval(UNIT, ZERO, 1, s0) == chi_eval(UNIT, ZERO, s0).value >= BOUND_N[0]
    with pytest.raises(ValueError):
        nu_eval(UNIT, ZERO, 1, -1.0)


def test_c1_is_drift_only_minimum():
    assert drift_minimum(SQUARE, RHO) == -1.0
    assert drift_minimum(UNIT, ZERO) == 0.0


def test_continuity_probe():
    mod = continuity_probe(UNIT, ZERO, 0.0, 1.0, 101)
    assert math.isfinite(mod) and mod < 2.0
    # two close samples give a local difference quotient
    s, r = 5.0, 1e-4
    fd = (chi_eval(UNIT, ZERO, s + r).value - chi_eval(UNIT, ZERO, s - r).value) / (2 * r)
    assert continuity_probe(UNIT, ZERO, s, r, 2) == pytest.approx(abs(fd), rel=1e-9)
    tiny = CompactBox((0, 0), (-1e-6, 1e-6))
    assert continuity_probe(tiny, ZERO, 0.0, 1e-3, 11) < 0.01
    with pytest.raises(ValueError):
        continuity_probe(UNIT, ZERO, 0.0, 1.0, 1)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_sine_branches(k):
    v = np.linspace(0.5, 1.0, 10_000)
    sl2 = math.sin(math.log(2))
    even = np.sin(np.log1p(s_sequence(2 * k) * v))
    odd = np.sin(np.log1p(s_sequence(2 * k + 1) * v))
    assert np.all(even >= sl2 - 1e-12)
    assert np.all(odd <= -sl2 + 1e-12)


def _random_case(rng):
    kind = rng.integers(3)
    if kind == 0:
        drift = DriftFunction.affine(*rng.uniform(-2, 2, 2))
    elif kind == 1:
        drift = DriftFunction.quadratic(rng.uniform(-2, 2))
    else:
        rg = np.linspace(-2, 2, 5)
        xg = np.linspace(-2, 2, 4)
        drift = DriftFunction.table(rg, xg, rng.uniform(-1, 1, (5, 4)))
    box = CompactBox.symmetric(rng.uniform(0, 2), rng.uniform(0.1, 2))
    return drift, box, rng.uniform(-500, 500)


@pytest.mark.parametrize("seed", range(8))
def test_backends_agree(seed):
    drift, box, s = _random_case(np.random.default_rng(seed))
    g = GridResolution(20, 17, 9)
    a = chi_eval(box, drift, s, g, use_numba=True)
    b = chi_eval(box, drift, s, g, use_numba=False)
    assert a.grid_value == pytest.approx(b.grid_value, rel=1e-13, abs=1e-13)
    assert a.value == pytest.approx(b.value, rel=1e-12, abs=1e-12)


def test_tie_break_is_lexicographic():
    ps = np.array([-1.0, 1.0])
    ks = np.array([0.0, 1.0])
    vs = np.array([-1.0, 1.0])
    for use in (True, False):
        # f = rho: minima at (rho=-1, v=1) and (rho=1, v=-1); ks irrelevant
        assert grid_min(ps, ks, vs, 0.0, RHO, use)[1:] == (0, 0, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_nested_grid_monotone(seed):
    drift, box, s = _random_case(np.random.default_rng(seed))
    g = GridResolution(9, 9, 5, depth=0)
    coarse = chi_eval(box, drift, s, g)
    fine = chi_eval(box, drift, s, g.doubled())
    assert fine.value <= coarse.value

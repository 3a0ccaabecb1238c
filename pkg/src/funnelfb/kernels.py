"""Scalar kernels shared by the integrator and the chi grid search.

Every model object is flattened into plain arrays before it reaches this
module (see ``encode`` on the types in :mod:`funnelfb.core`):

``mi``    int64   ``[eta, funnel_kind, drift_kind, perturbation_kind]``
``mf``    float64 ``[funnel_rate, drift_a, drift_b, pert_0, pert_1, pert_2]``
``rg, xg, tab``   drift table axes and values (dummies unless tabulated)
``br, coef``      perturbation spline breaks and power-basis coefficients
"""
import math

import numpy as np

from ._jit import jit

FUNNEL_IDENTITY = 0
FUNNEL_EXPM1 = 1

DRIFT_ZERO = 0
DRIFT_AFFINE = 1
DRIFT_QUADRATIC = 2
DRIFT_TABLE = 3

PERT_CONSTANT = 0
PERT_SINUSOID = 1
PERT_SPLINE = 2

STATUS_COMPLETED = 0
STATUS_BOUNDARY = 1
STATUS_UNDERFLOW = 2

# explicit stepping is abandoned once -J*h exceeds this (DP5 real-axis
# stability limit is about 3.3)
STIFF_SWITCH = 3.0

_ROS_D = 1.0 / (2.0 + math.sqrt(2.0))
_ROS_E32 = 6.0 + math.sqrt(2.0)


@jit
def phi(kind, rate, t):
    if kind == FUNNEL_EXPM1:
        return math.expm1(rate * t)
    return t


@jit
def phi_dot(kind, rate, t):
    if kind == FUNNEL_EXPM1:
        return rate * math.exp(rate * t)
    return 1.0


@jit
def g(v):
    return v * math.sin(math.log1p(abs(v)))


@jit
def g_prime(v):
    a = abs(v)
    lg = math.log1p(a)
    return math.sin(lg) + a / (1.0 + a) * math.cos(lg)


@jit
def _locate(grid, z):
    # index of the cell [grid[i], grid[i+1]] holding z; z already clamped
    n = grid.shape[0]
    i = np.searchsorted(grid, z, side="right") - 1
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    return i


@jit
def drift(kind, a, b, rg, xg, tab, rho, xi):
    """Return ``(f, df/drho, df/dxi)``."""
    if kind == DRIFT_AFFINE:
        return a * rho + b * xi, a, b
    if kind == DRIFT_QUADRATIC:
        return rho + a * xi * xi, 1.0, 2.0 * a * xi
    if kind == DRIFT_TABLE:
        r = min(max(rho, rg[0]), rg[-1])
        z = min(max(xi, xg[0]), xg[-1])
        i = _locate(rg, r)
        j = _locate(xg, z)
        dr = rg[i + 1] - rg[i]
        dz = xg[j + 1] - xg[j]
        s = (r - rg[i]) / dr
        q = (z - xg[j]) / dz
        f00 = tab[i, j]
        f10 = tab[i + 1, j]
        f01 = tab[i, j + 1]
        f11 = tab[i + 1, j + 1]
        val = (1 - s) * (1 - q) * f00 + s * (1 - q) * f10 + (1 - s) * q * f01 + s * q * f11
        d_r = ((1 - q) * (f10 - f00) + q * (f11 - f01)) / dr
        d_z = ((1 - s) * (f01 - f00) + s * (f11 - f10)) / dz
        # flat extension outside the table
        if rho < rg[0] or rho > rg[-1]:
            d_r = 0.0
        if xi < xg[0] or xi > xg[-1]:
            d_z = 0.0
        return val, d_r, d_z
    return 0.0, 0.0, 0.0


@jit
def perturbation(kind, c0, c1, c2, br, coef, t):
    """Return ``(p(t), p'(t))``."""
    if kind == PERT_SINUSOID:
        arg = c1 * t + c2
        return c0 * math.sin(arg), c0 * c1 * math.cos(arg)
    if kind == PERT_SPLINE:
        m = br.shape[0] - 1
        if t >= br[m]:
            i = m - 1
            d = br[m] - br[i]
            val = ((coef[0, i] * d + coef[1, i]) * d + coef[2, i]) * d + coef[3, i]
            return val, 0.0
        tt = max(t, br[0])
        i = _locate(br, tt)
        d = tt - br[i]
        val = ((coef[0, i] * d + coef[1, i]) * d + coef[2, i]) * d + coef[3, i]
        der = (3.0 * coef[0, i] * d + 2.0 * coef[1, i]) * d + coef[2, i]
        return val, der
    return c0, 0.0


@jit
def funnel_width(mi, mf, t, x):
    """``w = phi(t)|x|``."""
    return phi(mi[1], mf[0], t) * abs(x)


@jit
def closed_loop(mi, mf, rg, xg, tab, br, coef, t, x):
    """Return ``(dx/dt, u)`` at an interior point of the funnel."""
    ph = phi(mi[1], mf[0], t)
    w = ph * abs(x)
    hval = ph * x / (1.0 - w)
    u = -mi[0] * hval
    p, _ = perturbation(mi[3], mf[3], mf[4], mf[5], br, coef, t)
    f, _, _ = drift(mi[2], mf[1], mf[2], rg, xg, tab, p, x)
    return f + g(u), u


@jit
def closed_loop_partials(mi, mf, rg, xg, tab, br, coef, t, x):
    """Return ``(d rhs/dx, d rhs/dt)``."""
    ph = phi(mi[1], mf[0], t)
    dph = phi_dot(mi[1], mf[0], t)
    w = ph * abs(x)
    al = 1.0 / (1.0 - w)
    hval = ph * x * al
    eta = mi[0]
    u = -eta * hval
    p, dp = perturbation(mi[3], mf[3], mf[4], mf[5], br, coef, t)
    _, f_r, f_x = drift(mi[2], mf[1], mf[2], rg, xg, tab, p, x)
    gp = g_prime(u)
    jac = f_x - eta * gp * ph * al * al
    dt = f_r * dp - eta * gp * dph * x * al * al
    return jac, dt


@jit
def _dopri_step(mi, mf, rg, xg, tab, br, coef, t, x, k1, h, limit):
    # returns (code, x_new, err, f_new); code 1 = guard violation
    fk = mi[1]
    rate = mf[0]
    y = x + h * (0.2 * k1)
    if phi(fk, rate, t + 0.2 * h) * abs(y) >= limit:
        return 1, x, 0.0, k1
    k2, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + 0.2 * h, y)
    y = x + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2)
    if phi(fk, rate, t + 0.3 * h) * abs(y) >= limit:
        return 1, x, 0.0, k1
    k3, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + 0.3 * h, y)
    y = x + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3)
    if phi(fk, rate, t + 0.8 * h) * abs(y) >= limit:
        return 1, x, 0.0, k1
    k4, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + 0.8 * h, y)
    y = x + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2
                 + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4)
    if phi(fk, rate, t + 8.0 / 9.0 * h) * abs(y) >= limit:
        return 1, x, 0.0, k1
    k5, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + 8.0 / 9.0 * h, y)
    y = x + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3
                 + 49.0 / 176.0 * k4 - 5103.0 / 18656.0 * k5)
    if phi(fk, rate, t + h) * abs(y) >= limit:
        return 1, x, 0.0, k1
    k6, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + h, y)
    xn = x + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4
                  - 2187.0 / 6784.0 * k5 + 11.0 / 84.0 * k6)
    if phi(fk, rate, t + h) * abs(xn) >= limit:
        return 1, x, 0.0, k1
    k7, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + h, xn)
    err = h * (71.0 / 57600.0 * k1 - 71.0 / 16695.0 * k3 + 71.0 / 1920.0 * k4
               - 17253.0 / 339200.0 * k5 + 22.0 / 525.0 * k6 - 1.0 / 40.0 * k7)
    return 0, xn, err, k7


@jit
def _rosenbrock_step(mi, mf, rg, xg, tab, br, coef, t, x, f0, jac, dt, h, limit):
    # linearly implicit 2(3) pair; code 1 = guard violation, 2 = singular
    fk = mi[1]
    rate = mf[0]
    hd = h * _ROS_D
    wm = 1.0 - hd * jac
    if abs(wm) < 1e-12:
        return 2, x, 0.0, f0
    k1 = (f0 + hd * dt) / wm
    y = x + 0.5 * h * k1
    if phi(fk, rate, t + 0.5 * h) * abs(y) >= limit:
        return 1, x, 0.0, f0
    f1, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + 0.5 * h, y)
    k2 = (f1 - k1) / wm + k1
    xn = x + h * k2
    if phi(fk, rate, t + h) * abs(xn) >= limit:
        return 1, x, 0.0, f0
    f2, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t + h, xn)
    k3 = (f2 - _ROS_E32 * (k2 - f1) - 2.0 * (k1 - f0) + hd * dt) / wm
    err = h / 6.0 * (k1 - 2.0 * k2 + k3)
    return 0, xn, err, f2


@jit
def _grow(a, n):
    out = np.empty(2 * a.shape[0])
    out[:n] = a[:n]
    return out


@jit
def integrate_kernel(mi, mf, rg, xg, tab, br, coef, x0, t_end, rtol, atol,
                     guard, h_init, h_min, max_steps):
    """Adaptive integration of the closed loop on ``[0, t_end]``.

    Returns ``(t, x, dxdt, status, t_fail, counters)`` where ``counters``
    holds accepted, rejected, guard-rejected and stiff (Rosenbrock) steps.
    """
    limit = 1.0 - guard
    beta = 0.04
    cap = 1024
    ts = np.empty(cap)
    xs = np.empty(cap)
    fs = np.empty(cap)
    t = 0.0
    x = x0
    f0, _ = closed_loop(mi, mf, rg, xg, tab, br, coef, t, x)
    ts[0] = t
    xs[0] = x
    fs[0] = f0
    n = 1
    h = min(h_init, t_end)
    err_old = 1e-4
    status = STATUS_COMPLETED
    t_fail = np.nan
    guard_hit = False
    rejected = False
    counters = np.zeros(4, dtype=np.int64)
    attempts = 0
    while t < t_end:
        remaining = t_end - t
        last = False
        if h >= remaining:
            h = remaining
            last = True
        if h < h_min and remaining > h_min:
            status = STATUS_BOUNDARY if guard_hit else STATUS_UNDERFLOW
            t_fail = t
            break
        if attempts >= max_steps:
            status = STATUS_UNDERFLOW
            t_fail = t
            break
        attempts += 1
        jac, dt = closed_loop_partials(mi, mf, rg, xg, tab, br, coef, t, x)
        stiff = -jac * h > STIFF_SWITCH
        if stiff:
            code, xn, err, fn = _rosenbrock_step(mi, mf, rg, xg, tab, br, coef,
                                                 t, x, f0, jac, dt, h, limit)
            order = 3.0
        else:
            code, xn, err, fn = _dopri_step(mi, mf, rg, xg, tab, br, coef,
                                            t, x, f0, h, limit)
            order = 5.0
        if code != 0:
            if code == 1:
                guard_hit = True
                counters[2] += 1
            h *= 0.5
            rejected = True
            continue
        m = max(1.0, phi(mi[1], mf[0], t + h))
        sc = atol + rtol * max(abs(x), abs(xn)) * m
        en = abs(err) * m / sc
        if en <= 1.0:
            t = t_end if last else t + h
            x = xn
            f0 = fn
            if n == ts.shape[0]:
                ts = _grow(ts, n)
                xs = _grow(xs, n)
                fs = _grow(fs, n)
            ts[n] = t
            xs[n] = x
            fs[n] = f0
            n += 1
            counters[0] += 1
            if stiff:
                counters[3] += 1
            guard_hit = False
            expo = 1.0 / order - 0.75 * beta
            if en == 0.0:
                fac = 0.2
            else:
                fac = en ** expo / err_old ** beta / 0.9
                fac = min(10.0, max(0.2, fac))
            hnew = h / fac
            if rejected:
                hnew = min(hnew, h)
            err_old = max(en, 1e-4)
            rejected = False
            h = hnew
        else:
            counters[1] += 1
            h *= max(0.2, 0.9 * en ** (-1.0 / order))
            rejected = True
    return ts[:n].copy(), xs[:n].copy(), fs[:n].copy(), status, t_fail, counters


@jit
def chi_grid_kernel(ps, ks, vs, s, fkind, fa, fb, rg, xg, tab):
    """Exhaustive minimum of ``v f(rho, xi) + v g(s v)`` over a product grid.

    Ties keep the lexicographically smallest ``(i, j, l)``.
    """
    best = np.inf
    bi = 0
    bj = 0
    bl = 0
    nv = vs.shape[0]
    vg = np.empty(nv)
    for l in range(nv):
        vg[l] = vs[l] * g(s * vs[l])
    for i in range(ps.shape[0]):
        for j in range(ks.shape[0]):
            f, _, _ = drift(fkind, fa, fb, rg, xg, tab, ps[i], ks[j])
            for l in range(nv):
                val = vs[l] * f + vg[l]
                if val < best:
                    best = val
                    bi = i
                    bj = j
                    bl = l
    return best, bi, bj, bl

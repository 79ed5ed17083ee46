"""Jitted trajectory kernels (n = 2).

Every kernel loops over independent rays with ``prange``; each ray writes only
its own output slots, so results are bitwise independent of the thread count.
The RK4 state is accumulated with compensated summation; ``c`` holds the
negated low-order part, i.e. the exact state is ``s - c``.
"""

import math

import numpy as np
from numba import njit, prange

from ._layout import (
    D_A, D_B, D_CX, D_CY, D_KIND, D_ROT, DOM_DISC,
    EXITED, INVALID, TRAPPED,
    F_MAG_B0, F_MAG_B2, F_MAG_CX, F_MAG_CY, F_MAG_KIND,
    F_MG_DX, F_MG_DY, F_MG_X0, F_MG_Y0,
    F_PG_DX, F_PG_DY, F_PG_X0, F_PG_Y0,
    F_POT_A, F_POT_CX, F_POT_CY, F_POT_KIND, F_POT_W,
    MAG_CONSTANT, MAG_NONE, MAG_RADIAL,
    POT_GAUSSIAN, POT_HARMONIC, POT_ZERO,
    SPLIT,
)


# -- level set -------------------------------------------------------------

@njit(cache=True, inline="always")
def _level(x, y, dp):
    dx = x - dp[D_CX]
    dy = y - dp[D_CY]
    if int(dp[D_KIND]) == DOM_DISC:
        return math.sqrt(dx * dx + dy * dy) - dp[D_A]
    c = math.cos(dp[D_ROT])
    s = math.sin(dp[D_ROT])
    u = (c * dx + s * dy) / dp[D_A]
    w = (-s * dx + c * dy) / dp[D_B]
    return math.sqrt(u * u + w * w) - 1.0


# -- cubic convolution on node grids ---------------------------------------

@njit(cache=True, inline="always")
def _keys_weights(t):
    w0 = ((-0.5 * t + 1.0) * t - 0.5) * t
    w1 = (1.5 * t - 2.5) * t * t + 1.0
    w2 = ((-1.5 * t + 2.0) * t + 0.5) * t
    w3 = (0.5 * t - 0.5) * t * t
    return w0, w1, w2, w3


@njit(cache=True)
def _cubic(grid, ch, x, y, x0, y0, dx, dy):
    ny = grid.shape[1]
    nx = grid.shape[2]
    gx = (x - x0) / dx
    gy = (y - y0) / dy
    if not (gx >= 0.0 and gx <= nx - 1 and gy >= 0.0 and gy <= ny - 1):
        return np.nan
    i = min(int(gx), nx - 2)
    j = min(int(gy), ny - 2)
    wx = _keys_weights(gx - i)
    wy = _keys_weights(gy - j)
    acc = 0.0
    for b in range(4):
        jj = min(max(j - 1 + b, 0), ny - 1)
        row = 0.0
        for a in range(4):
            ii = min(max(i - 1 + a, 0), nx - 1)
            row += wx[a] * grid[ch, jj, ii]
        acc += wy[b] * row
    return acc


# -- fields ------------------------------------------------------------------

@njit(cache=True, inline="always")
def _phi(x, y, fp, pg):
    kind = int(fp[F_POT_KIND])
    if kind == POT_ZERO:
        return 0.0
    dx = x - fp[F_POT_CX]
    dy = y - fp[F_POT_CY]
    if kind == POT_HARMONIC:
        return fp[F_POT_A] * (dx * dx + dy * dy)
    if kind == POT_GAUSSIAN:
        w2 = fp[F_POT_W] * fp[F_POT_W]
        return fp[F_POT_A] * math.exp(-(dx * dx + dy * dy) / w2)
    return _cubic(pg, 0, x, y, fp[F_PG_X0], fp[F_PG_Y0], fp[F_PG_DX], fp[F_PG_DY])


@njit(cache=True, inline="always")
def _grad_phi(x, y, fp, pg):
    kind = int(fp[F_POT_KIND])
    if kind == POT_ZERO:
        return 0.0, 0.0
    dx = x - fp[F_POT_CX]
    dy = y - fp[F_POT_CY]
    if kind == POT_HARMONIC:
        k2 = 2.0 * fp[F_POT_A]
        return k2 * dx, k2 * dy
    if kind == POT_GAUSSIAN:
        w2 = fp[F_POT_W] * fp[F_POT_W]
        e = fp[F_POT_A] * math.exp(-(dx * dx + dy * dy) / w2)
        return -2.0 * dx / w2 * e, -2.0 * dy / w2 * e
    x0 = fp[F_PG_X0]
    y0 = fp[F_PG_Y0]
    hx = fp[F_PG_DX]
    hy = fp[F_PG_DY]
    return _cubic(pg, 1, x, y, x0, y0, hx, hy), _cubic(pg, 2, x, y, x0, y0, hx, hy)


@njit(cache=True, inline="always")
def _hess_phi(x, y, fp, pg):
    kind = int(fp[F_POT_KIND])
    if kind == POT_ZERO:
        return 0.0, 0.0, 0.0
    dx = x - fp[F_POT_CX]
    dy = y - fp[F_POT_CY]
    if kind == POT_HARMONIC:
        k2 = 2.0 * fp[F_POT_A]
        return k2, 0.0, k2
    if kind == POT_GAUSSIAN:
        w2 = fp[F_POT_W] * fp[F_POT_W]
        e = fp[F_POT_A] * math.exp(-(dx * dx + dy * dy) / w2)
        q = 4.0 / (w2 * w2)
        return (q * dx * dx - 2.0 / w2) * e, q * dx * dy * e, (q * dy * dy - 2.0 / w2) * e
    x0 = fp[F_PG_X0]
    y0 = fp[F_PG_Y0]
    hx = fp[F_PG_DX]
    hy = fp[F_PG_DY]
    return (_cubic(pg, 3, x, y, x0, y0, hx, hy),
            _cubic(pg, 4, x, y, x0, y0, hx, hy),
            _cubic(pg, 5, x, y, x0, y0, hx, hy))


@njit(cache=True, inline="always")
def _bfield(x, y, fp, mg):
    """Magnetic strength b and its gradient; Y = [[0, b], [-b, 0]]."""
    kind = int(fp[F_MAG_KIND])
    if kind == MAG_NONE:
        return 0.0, 0.0, 0.0
    if kind == MAG_CONSTANT:
        return fp[F_MAG_B0], 0.0, 0.0
    if kind == MAG_RADIAL:
        dx = x - fp[F_MAG_CX]
        dy = y - fp[F_MAG_CY]
        b2 = fp[F_MAG_B2]
        return fp[F_MAG_B0] + b2 * (dx * dx + dy * dy), 2.0 * b2 * dx, 2.0 * b2 * dy
    x0 = fp[F_MG_X0]
    y0 = fp[F_MG_Y0]
    hx = fp[F_MG_DX]
    hy = fp[F_MG_DY]
    return (_cubic(mg, 0, x, y, x0, y0, hx, hy),
            _cubic(mg, 1, x, y, x0, y0, hx, hy),
            _cubic(mg, 2, x, y, x0, y0, hx, hy))


@njit(cache=True, inline="always")
def _accel(x, y, vx, vy, fp, pg, mg):
    gx, gy = _grad_phi(x, y, fp, pg)
    b, _, _ = _bfield(x, y, fp, mg)
    return -gx + b * vy, -gy - b * vx


# -- error-free arithmetic for the energy monitor --------------------------

@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def _two_prod(a, b):
    p = a * b
    t = SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def _energy_dd(s0, s1, s2, s3, c0, c1, c2, c3, fp, pg):
    """Energy of the compensated state ``s - c`` as an unevaluated sum hi + lo."""
    p, pe = _two_prod(s2, s2)
    hi = 0.5 * p
    lo = 0.5 * pe - s2 * c2
    p, pe = _two_prod(s3, s3)
    hi, e = _two_sum(hi, 0.5 * p)
    lo += e + 0.5 * pe - s3 * c3
    phi = _phi(s0, s1, fp, pg)
    gx, gy = _grad_phi(s0, s1, fp, pg)
    hi, e = _two_sum(hi, phi)
    lo += e - gx * c0 - gy * c1
    return hi, lo


# -- RK4 ----------------------------------------------------------------------

@njit(cache=True, inline="always")
def _rk4_incr(s0, s1, s2, s3, h, fp, pg, mg):
    a1x, a1y = _accel(s0, s1, s2, s3, fp, pg, mg)
    hh = 0.5 * h
    v2x = s2 + hh * a1x
    v2y = s3 + hh * a1y
    a2x, a2y = _accel(s0 + hh * s2, s1 + hh * s3, v2x, v2y, fp, pg, mg)
    v3x = s2 + hh * a2x
    v3y = s3 + hh * a2y
    a3x, a3y = _accel(s0 + hh * v2x, s1 + hh * v2y, v3x, v3y, fp, pg, mg)
    v4x = s2 + h * a3x
    v4y = s3 + h * a3y
    a4x, a4y = _accel(s0 + h * v3x, s1 + h * v3y, v4x, v4y, fp, pg, mg)
    h6 = h / 6.0
    d0 = h6 * (s2 + 2.0 * v2x + 2.0 * v3x + v4x)
    d1 = h6 * (s3 + 2.0 * v2y + 2.0 * v3y + v4y)
    d2 = h6 * (a1x + 2.0 * a2x + 2.0 * a3x + a4x)
    d3 = h6 * (a1y + 2.0 * a2y + 2.0 * a3y + a4y)
    return d0, d1, d2, d3


@njit(cache=True, inline="always")
def _kadd(s, c, d):
    y = d - c
    t = s + y
    return t, (t - s) - y


@njit(cache=True, inline="always")
def _finite4(a, b, c, d):
    return math.isfinite(a) and math.isfinite(b) and math.isfinite(c) and math.isfinite(d)


@njit(cache=True)
def _trace_one(x, y, vx, vy, hs, max_steps, eps_len, dp, fp, pg, mg, track):
    s0, s1, s2, s3 = x, y, vx, vy
    c0 = c1 = c2 = c3 = 0.0
    h0 = l0 = 0.0
    drift = 0.0
    if track:
        h0, l0 = _energy_dd(s0, s1, s2, s3, c0, c1, c2, c3, fp, pg)
    for k in range(max_steps):
        d0, d1, d2, d3 = _rk4_incr(s0, s1, s2, s3, hs, fp, pg, mg)
        if not _finite4(d0, d1, d2, d3):
            return k * hs, s0, s1, s2, s3, INVALID, drift
        n0, m0 = _kadd(s0, c0, d0)
        n1, m1 = _kadd(s1, c1, d1)
        lv = _level(n0, n1, dp)
        if lv > 0.0:
            speed = math.sqrt(s2 * s2 + s3 * s3)
            lo = 0.0
            hi = 1.0
            for _ in range(200):
                if (hi - lo) * abs(hs) * speed <= eps_len:
                    break
                mid = 0.5 * (lo + hi)
                e0, e1, e2, e3 = _rk4_incr(s0, s1, s2, s3, hs * mid, fp, pg, mg)
                if _level(s0 + (e0 - c0), s1 + (e1 - c1), dp) > 0.0:
                    hi = mid
                else:
                    lo = mid
            frac = 0.5 * (lo + hi)
            e0, e1, e2, e3 = _rk4_incr(s0, s1, s2, s3, hs * frac, fp, pg, mg)
            q0, r0 = _kadd(s0, c0, e0)
            q1, r1 = _kadd(s1, c1, e1)
            q2, r2 = _kadd(s2, c2, e2)
            q3, r3 = _kadd(s3, c3, e3)
            if track:
                eh, el = _energy_dd(q0, q1, q2, q3, r0, r1, r2, r3, fp, pg)
                drift = max(drift, abs((eh - h0) + (el - l0)))
            return (k + frac) * hs, q0, q1, q2, q3, EXITED, drift
        n2, m2 = _kadd(s2, c2, d2)
        n3, m3 = _kadd(s3, c3, d3)
        s0, s1, s2, s3 = n0, n1, n2, n3
        c0, c1, c2, c3 = m0, m1, m2, m3
        if track:
            eh, el = _energy_dd(s0, s1, s2, s3, c0, c1, c2, c3, fp, pg)
            drift = max(drift, abs((eh - h0) + (el - l0)))
    return max_steps * hs, s0, s1, s2, s3, TRAPPED, drift


@njit(parallel=True, cache=True)
def trace_exit(x0, v0, hs, max_steps, eps_len, dp, fp, pg, mg, track):
    m = x0.shape[0]
    ell = np.empty(m)
    xe = np.empty((m, 2))
    ve = np.empty((m, 2))
    status = np.empty(m, dtype=np.int8)
    drift = np.zeros(m)
    for i in prange(m):
        t, a, b, c, d, st, dr = _trace_one(
            x0[i, 0], x0[i, 1], v0[i, 0], v0[i, 1], hs, max_steps, eps_len,
            dp, fp, pg, mg, track)
        ell[i] = t
        xe[i, 0] = a
        xe[i, 1] = b
        ve[i, 0] = c
        ve[i, 1] = d
        status[i] = st
        drift[i] = dr
    return ell, xe, ve, status, drift


@njit(parallel=True, cache=True)
def sample_arcs(x0, v0, ell, n, fp, pg, mg):
    """States at ``n + 1`` equispaced times from 0 to ``ell`` along each ray."""
    m = x0.shape[0]
    xs = np.empty((m, n + 1, 2))
    vs = np.empty((m, n + 1, 2))
    ok = np.ones(m, dtype=np.bool_)
    for i in prange(m):
        h = ell[i] / n
        s0 = x0[i, 0]
        s1 = x0[i, 1]
        s2 = v0[i, 0]
        s3 = v0[i, 1]
        c0 = c1 = c2 = c3 = 0.0
        xs[i, 0, 0] = s0
        xs[i, 0, 1] = s1
        vs[i, 0, 0] = s2
        vs[i, 0, 1] = s3
        for k in range(1, n + 1):
            d0, d1, d2, d3 = _rk4_incr(s0, s1, s2, s3, h, fp, pg, mg)
            if not _finite4(d0, d1, d2, d3):
                ok[i] = False
            s0, c0 = _kadd(s0, c0, d0)
            s1, c1 = _kadd(s1, c1, d1)
            s2, c2 = _kadd(s2, c2, d2)
            s3, c3 = _kadd(s3, c3, d3)
            xs[i, k, 0] = s0
            xs[i, k, 1] = s1
            vs[i, k, 0] = s2
            vs[i, k, 1] = s3
    return xs, vs, ok


# -- variational flow --------------------------------------------------------

@njit(cache=True, inline="always")
def _linearized(x, y, vx, vy, fp, pg, mg):
    """Acceleration and the velocity-block entries of the flow Jacobian."""
    kind = int(fp[F_POT_KIND])
    if kind == POT_GAUSSIAN:
        dx = x - fp[F_POT_CX]
        dy = y - fp[F_POT_CY]
        w2 = fp[F_POT_W] * fp[F_POT_W]
        e = fp[F_POT_A] * math.exp(-(dx * dx + dy * dy) / w2)
        gx = -2.0 * dx / w2 * e
        gy = -2.0 * dy / w2 * e
        q = 4.0 / (w2 * w2)
        hxx = (q * dx * dx - 2.0 / w2) * e
        hxy = q * dx * dy * e
        hyy = (q * dy * dy - 2.0 / w2) * e
    else:
        gx, gy = _grad_phi(x, y, fp, pg)
        hxx, hxy, hyy = _hess_phi(x, y, fp, pg)
    b, bx, by = _bfield(x, y, fp, mg)
    return (-gx + b * vy, -gy - b * vx,
            -hxx + bx * vy, -hxy + by * vy, -hxy - bx * vx, -hyy - by * vx, b)


@njit(cache=True, inline="always")
def _jac_apply(jxx, jxy, jyx, jyy, b, z, out):
    for c in range(z.shape[1]):
        out[0, c] = z[2, c]
        out[1, c] = z[3, c]
        out[2, c] = jxx * z[0, c] + jxy * z[1, c] + b * z[3, c]
        out[3, c] = jyx * z[0, c] + jyy * z[1, c] - b * z[2, c]


@njit(cache=True, inline="always")
def _axpy(z, h, k, out):
    for r in range(4):
        for c in range(z.shape[1]):
            out[r, c] = z[r, c] + h * k[r, c]


@njit(cache=True)
def _rk4_var(s0, s1, s2, s3, z, h, fp, pg, mg, k1, k2, k3, k4, zt, zout):
    """Advance the tangent block ``z`` by one RK4 step of size ``h``."""
    hh = 0.5 * h
    a1x, a1y, jxx, jxy, jyx, jyy, b = _linearized(s0, s1, s2, s3, fp, pg, mg)
    _jac_apply(jxx, jxy, jyx, jyy, b, z, k1)
    v2x = s2 + hh * a1x
    v2y = s3 + hh * a1y
    p2x = s0 + hh * s2
    p2y = s1 + hh * s3
    _axpy(z, hh, k1, zt)
    a2x, a2y, jxx, jxy, jyx, jyy, b = _linearized(p2x, p2y, v2x, v2y, fp, pg, mg)
    _jac_apply(jxx, jxy, jyx, jyy, b, zt, k2)
    v3x = s2 + hh * a2x
    v3y = s3 + hh * a2y
    p3x = s0 + hh * v2x
    p3y = s1 + hh * v2y
    _axpy(z, hh, k2, zt)
    a3x, a3y, jxx, jxy, jyx, jyy, b = _linearized(p3x, p3y, v3x, v3y, fp, pg, mg)
    _jac_apply(jxx, jxy, jyx, jyy, b, zt, k3)
    v4x = s2 + h * a3x
    v4y = s3 + h * a3y
    _axpy(z, h, k3, zt)
    _, _, jxx, jxy, jyx, jyy, b = _linearized(s0 + h * v3x, s1 + h * v3y, v4x, v4y, fp, pg, mg)
    _jac_apply(jxx, jxy, jyx, jyy, b, zt, k4)
    h6 = h / 6.0
    for r in range(4):
        for c in range(z.shape[1]):
            zout[r, c] = z[r, c] + h6 * (k1[r, c] + 2.0 * k2[r, c] + 2.0 * k3[r, c] + k4[r, c])


@njit(parallel=True, cache=True)
def trace_exit_variational(x0, v0, z0, hs, max_steps, eps_len, dp, fp, pg, mg):
    """Exit search as in ``trace_exit`` carrying tangent vectors ``z0`` (m, 4, k)."""
    m = x0.shape[0]
    kcols = z0.shape[2]
    ell = np.empty(m)
    xe = np.empty((m, 2))
    ve = np.empty((m, 2))
    ze = np.empty((m, 4, kcols))
    status = np.empty(m, dtype=np.int8)
    for i in prange(m):
        z = z0[i].copy()
        zn = np.empty((4, kcols))
        k1 = np.empty((4, kcols))
        k2 = np.empty((4, kcols))
        k3 = np.empty((4, kcols))
        k4 = np.empty((4, kcols))
        zt = np.empty((4, kcols))
        s0 = x0[i, 0]
        s1 = x0[i, 1]
        s2 = v0[i, 0]
        s3 = v0[i, 1]
        c0 = c1 = c2 = c3 = 0.0
        st = TRAPPED
        t_exit = max_steps * hs
        for k in range(max_steps):
            d0, d1, d2, d3 = _rk4_incr(s0, s1, s2, s3, hs, fp, pg, mg)
            if not _finite4(d0, d1, d2, d3):
                st = INVALID
                t_exit = k * hs
                break
            n0, m0 = _kadd(s0, c0, d0)
            n1, m1 = _kadd(s1, c1, d1)
            if _level(n0, n1, dp) > 0.0:
                speed = math.sqrt(s2 * s2 + s3 * s3)
                lo = 0.0
                hi = 1.0
                for _ in range(200):
                    if (hi - lo) * abs(hs) * speed <= eps_len:
                        break
                    mid = 0.5 * (lo + hi)
                    e0, e1, e2, e3 = _rk4_incr(s0, s1, s2, s3, hs * mid, fp, pg, mg)
                    if _level(s0 + (e0 - c0), s1 + (e1 - c1), dp) > 0.0:
                        hi = mid
                    else:
                        lo = mid
                frac = 0.5 * (lo + hi)
                e0, e1, e2, e3 = _rk4_incr(s0, s1, s2, s3, hs * frac, fp, pg, mg)
                _rk4_var(s0, s1, s2, s3, z, hs * frac, fp, pg, mg, k1, k2, k3, k4, zt, zn)
                z, zn = zn, z
                s0, c0 = _kadd(s0, c0, e0)
                s1, c1 = _kadd(s1, c1, e1)
                s2, c2 = _kadd(s2, c2, e2)
                s3, c3 = _kadd(s3, c3, e3)
                st = EXITED
                t_exit = (k + frac) * hs
                break
            _rk4_var(s0, s1, s2, s3, z, hs, fp, pg, mg, k1, k2, k3, k4, zt, zn)
            z, zn = zn, z
            n2, m2 = _kadd(s2, c2, d2)
            n3, m3 = _kadd(s3, c3, d3)
            s0, s1, s2, s3 = n0, n1, n2, n3
            c0, c1, c2, c3 = m0, m1, m2, m3
        ell[i] = t_exit
        xe[i, 0] = s0
        xe[i, 1] = s1
        ve[i, 0] = s2
        ve[i, 1] = s3
        ze[i] = z
        status[i] = st
    return ell, xe, ve, ze, status

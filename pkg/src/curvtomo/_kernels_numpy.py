"""Vectorized trajectory kernels, the fallback for the jitted versions.

All rays advance in lockstep; rays that exit (or fail) are dropped from the
active set. Field access goes through vectorized callables so arbitrary
Python force fields and level sets are supported:

* ``accel(x, v) -> (m, 2)``
* ``level(x) -> (m,)``
* ``phi(x) -> (m,)`` and ``grad_phi(x) -> (m, 2)`` (energy monitor only)
* ``hess_phi(x) -> (hxx, hxy, hyy)`` and ``bfield(x) -> (b, bx, by)``
  (variational flow only)

The arithmetic mirrors ``_kernels_numba`` operation by operation.
"""

import numpy as np

from ._layout import EXITED, INVALID, SPLIT, TRAPPED


def _rk4_incr(s, h, accel):
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    x, v = s[:, :2], s[:, 2:]
    hh = 0.5 * h
    a1 = accel(x, v)
    v2 = v + hh * a1
    a2 = accel(x + hh * v, v2)
    v3 = v + hh * a2
    a3 = accel(x + hh * v2, v3)
    v4 = v + h * a3
    a4 = accel(x + h * v3, v4)
    h6 = h / 6.0
    dx = h6 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    dv = h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return np.concatenate([dx, dv], axis=1)


def _kadd(s, c, d):
    y = d - c
    t = s + y
    return t, (t - s) - y


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _two_prod(a, b):
    p = a * b
    t = SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _energy_dd(s, c, phi, grad_phi):
    p, pe = _two_prod(s[:, 2], s[:, 2])
    hi = 0.5 * p
    lo = 0.5 * pe - s[:, 2] * c[:, 2]
    p, pe = _two_prod(s[:, 3], s[:, 3])
    hi, e = _two_sum(hi, 0.5 * p)
    lo = lo + (e + 0.5 * pe - s[:, 3] * c[:, 3])
    g = grad_phi(s[:, :2])
    hi, e = _two_sum(hi, phi(s[:, :2]))
    lo = lo + (e - g[:, 0] * c[:, 0] - g[:, 1] * c[:, 1])
    return hi, lo


def _bisect_exit(S, C, hs, eps_len, level, accel):
    """Fraction of the step ``hs`` at which each ray crosses the level set."""
    speed = np.hypot(S[:, 2], S[:, 3])
    lo = np.zeros(len(S))
    hi = np.ones(len(S))
    for _ in range(200):
        todo = (hi - lo) * abs(hs) * speed > eps_len
        if not todo.any():
            break
        idx = np.nonzero(todo)[0]
        mid = 0.5 * (lo[idx] + hi[idx])
        e = _rk4_incr(S[idx], hs * mid, accel)
        q = S[idx, :2] + (e[:, :2] - C[idx, :2])
        outside = level(q) > 0.0
        hi[idx] = np.where(outside, mid, hi[idx])
        lo[idx] = np.where(outside, lo[idx], mid)
    return 0.5 * (lo + hi)


def trace_exit(x0, v0, hs, max_steps, eps_len, level, accel, phi=None, grad_phi=None):
    m = len(x0)
    track = phi is not None
    s = np.concatenate([x0, v0], axis=1).astype(float)
    c = np.zeros_like(s)
    ell = np.full(m, max_steps * hs)
    status = np.full(m, TRAPPED, dtype=np.int8)
    drift = np.zeros(m)
    if track:
        h0, l0 = _energy_dd(s, c, phi, grad_phi)
    active = np.arange(m)
    for k in range(max_steps):
        if active.size == 0:
            break
        S, C = s[active], c[active]
        d = _rk4_incr(S, hs, accel)
        bad = ~np.isfinite(d).all(axis=1)
        if bad.any():
            ib = active[bad]
            ell[ib] = k * hs
            status[ib] = INVALID
        N0, M0 = _kadd(S[:, :2], C[:, :2], d[:, :2])
        lv = np.where(bad, -1.0, level(np.where(bad[:, None], 0.0, N0)))
        out = lv > 0.0
        if out.any():
            io = active[out]
            So, Co = S[out], C[out]
            frac = _bisect_exit(So, Co, hs, eps_len, level, accel)
            e = _rk4_incr(So, hs * frac, accel)
            Q, R = _kadd(So, Co, e)
            s[io], c[io] = Q, R
            ell[io] = (k + frac) * hs
            status[io] = EXITED
            if track:
                eh, el = _energy_dd(Q, R, phi, grad_phi)
                drift[io] = np.maximum(drift[io], np.abs((eh - h0[io]) + (el - l0[io])))
        keep = ~(out | bad)
        ik = active[keep]
        Nv, Mv = _kadd(S[keep, 2:], C[keep, 2:], d[keep, 2:])
        s[ik] = np.concatenate([N0[keep], Nv], axis=1)
        c[ik] = np.concatenate([M0[keep], Mv], axis=1)
        if track and ik.size:
            eh, el = _energy_dd(s[ik], c[ik], phi, grad_phi)
            drift[ik] = np.maximum(drift[ik], np.abs((eh - h0[ik]) + (el - l0[ik])))
        active = ik
    return ell, s[:, :2].copy(), s[:, 2:].copy(), status, drift


def sample_arcs(x0, v0, ell, n, accel):
    m = len(x0)
    s = np.concatenate([x0, v0], axis=1).astype(float)
    c = np.zeros_like(s)
    h = np.asarray(ell, dtype=float) / n
    xs = np.empty((m, n + 1, 2))
    vs = np.empty((m, n + 1, 2))
    ok = np.ones(m, dtype=bool)
    xs[:, 0], vs[:, 0] = s[:, :2], s[:, 2:]
    for k in range(1, n + 1):
        d = _rk4_incr(s, h, accel)
        ok &= np.isfinite(d).all(axis=1)
        s, c = _kadd(s, c, d)
        xs[:, k], vs[:, k] = s[:, :2], s[:, 2:]
    return xs, vs, ok


def _jac_rhs(s, z, hess_phi, bfield):
    hxx, hxy, hyy = hess_phi(s[:, :2])
    b, bx, by = bfield(s[:, :2])
    vx, vy = s[:, 2], s[:, 3]
    jxx = (-hxx + bx * vy)[:, None]
    jxy = (-hxy + by * vy)[:, None]
    jyx = (-hxy - bx * vx)[:, None]
    jyy = (-hyy - by * vx)[:, None]
    b = b[:, None]
    out = np.empty_like(z)
    out[:, 0] = z[:, 2]
    out[:, 1] = z[:, 3]
    out[:, 2] = jxx * z[:, 0] + jxy * z[:, 1] + b * z[:, 3]
    out[:, 3] = jyx * z[:, 0] + jyy * z[:, 1] - b * z[:, 2]
    return out


def _rk4_var(s, z, h, accel, hess_phi, bfield):
    h = np.asarray(h, dtype=float)
    hz = h[:, None, None] if h.ndim else h
    hv = h[:, None] if h.ndim else h
    x, v = s[:, :2], s[:, 2:]
    k1 = _jac_rhs(s, z, hess_phi, bfield)
    a1 = accel(x, v)
    v2 = v + 0.5 * hv * a1
    p2 = x + 0.5 * hv * v
    k2 = _jac_rhs(np.concatenate([p2, v2], 1), z + 0.5 * hz * k1, hess_phi, bfield)
    a2 = accel(p2, v2)
    v3 = v + 0.5 * hv * a2
    p3 = x + 0.5 * hv * v2
    k3 = _jac_rhs(np.concatenate([p3, v3], 1), z + 0.5 * hz * k2, hess_phi, bfield)
    a3 = accel(p3, v3)
    v4 = v + hv * a3
    p4 = x + hv * v3
    k4 = _jac_rhs(np.concatenate([p4, v4], 1), z + hz * k3, hess_phi, bfield)
    return z + (hz / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def trace_exit_variational(x0, v0, z0, hs, max_steps, eps_len, level, accel, hess_phi, bfield):
    m = len(x0)
    s = np.concatenate([x0, v0], axis=1).astype(float)
    c = np.zeros_like(s)
    z = np.array(z0, dtype=float)
    ell = np.full(m, max_steps * hs)
    status = np.full(m, TRAPPED, dtype=np.int8)
    active = np.arange(m)
    for k in range(max_steps):
        if active.size == 0:
            break
        S, C, Z = s[active], c[active], z[active]
        d = _rk4_incr(S, hs, accel)
        bad = ~np.isfinite(d).all(axis=1)
        if bad.any():
            ell[active[bad]] = k * hs
            status[active[bad]] = INVALID
        N0, M0 = _kadd(S[:, :2], C[:, :2], d[:, :2])
        lv = np.where(bad, -1.0, level(np.where(bad[:, None], 0.0, N0)))
        out = lv > 0.0
        if out.any():
            io = active[out]
            So, Co = S[out], C[out]
            frac = _bisect_exit(So, Co, hs, eps_len, level, accel)
            e = _rk4_incr(So, hs * frac, accel)
            z[io] = _rk4_var(So, Z[out], hs * frac, accel, hess_phi, bfield)
            s[io], c[io] = _kadd(So, Co, e)
            ell[io] = (k + frac) * hs
            status[io] = EXITED
        keep = ~(out | bad)
        ik = active[keep]
        if ik.size:
            z[ik] = _rk4_var(S[keep], Z[keep], hs, accel, hess_phi, bfield)
            Nv, Mv = _kadd(S[keep, 2:], C[keep, 2:], d[keep, 2:])
            s[ik] = np.concatenate([N0[keep], Nv], axis=1)
            c[ik] = np.concatenate([M0[keep], Mv], axis=1)
        active = ik
    return ell, s[:, :2].copy(), s[:, 2:].copy(), z, status

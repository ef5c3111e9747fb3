"""Compiled inner loops for belief-flow integration.

All kernels integrate the belief ODE  dw/dt = M w + (r_vec . w) w  with
classical fixed-step RK4, where M is the per-(face, control) drift matrix
and r_vec the off-face exit rates (so that r_vec . w = -(M w).sum()).
After every step the belief is projected back to its face: small negatives
and off-face dust are clipped, then the vector is renormalized.  Clipping
beyond the tolerances is an error, reported through a status code rather
than a silent fix.

Status codes: 0 ok, 1 negative entry below -neg_tol, 2 off-face mass above
leak_tol, 3 nonpositive total mass.
"""
from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NEGATIVE = 1
STATUS_LEAK = 2
STATUS_MASS = 3


@njit(cache=True, fastmath=True, nogil=True)
def _deriv(w, M, r_vec, F):
    n = w.shape[0]
    r = 0.0
    for z in range(n):
        r += r_vec[z] * w[z]
    for z in range(n):
        acc = 0.0
        for x in range(n):
            acc += M[z, x] * w[x]
        F[z] = acc + r * w[z]
    return r


@njit(cache=True, fastmath=True, nogil=True)
def _project(w, onface, neg_tol, leak_tol):
    """Clip and renormalize in place; returns (status, mass_dev, min_entry, leak)."""
    n = w.shape[0]
    status = STATUS_OK
    mass = 0.0
    min_entry = 0.0
    leak = 0.0
    for z in range(n):
        mass += w[z]
        if w[z] < min_entry:
            min_entry = w[z]
        if not onface[z]:
            leak += abs(w[z])
    mass_dev = abs(mass - 1.0)
    for z in range(n):
        if not onface[z]:
            if abs(w[z]) > leak_tol:
                status = STATUS_LEAK
            w[z] = 0.0
        elif w[z] < 0.0:
            if w[z] < -neg_tol:
                status = STATUS_NEGATIVE
            w[z] = 0.0
    total = 0.0
    for z in range(n):
        total += w[z]
    if total <= 0.0:
        return STATUS_MASS, mass_dev, min_entry, leak
    inv = 1.0 / total
    for z in range(n):
        w[z] *= inv
    return status, mass_dev, min_entry, leak


@njit(cache=True, fastmath=True, nogil=True)
def rk4_flow_batch(W, M, r_vec, h, n_steps, onface, neg_tol, leak_tol,
                   f_vec, beta, t0, want_cost):
    """Advance row b of W by n_steps[b] RK4 steps of size h[b].

    Also accumulates, per row, the survival exponent ell = int r(w(s)) ds
    and (when want_cost) the discounted running cost
    z = int exp(-beta (t0 + s)) (w(s) . f_vec) ds, both with the same RK4
    stages.  Returns (ell, z, status, max_mass_dev, min_entry, max_leak)
    where the last three aggregate over all rows and steps, measured on
    the raw RK4 output before projection.
    """
    B, n = W.shape
    ell = np.zeros(B)
    zc = np.zeros(B)
    status = STATUS_OK
    max_dev = 0.0
    min_entry = 0.0
    max_leak = 0.0
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    wtmp = np.empty(n)
    for b in range(B):
        hb = h[b]
        if hb <= 0.0 or n_steps[b] == 0:
            continue
        w = W[b]
        tb = t0[b]
        s = 0.0
        for _ in range(n_steps[b]):
            r1 = _deriv(w, M, r_vec, k1)
            c1 = 0.0
            if want_cost:
                dsc = np.exp(-beta * (tb + s))
                for z in range(n):
                    c1 += w[z] * f_vec[z]
                c1 *= dsc
            for z in range(n):
                wtmp[z] = w[z] + 0.5 * hb * k1[z]
            r2 = _deriv(wtmp, M, r_vec, k2)
            c2 = 0.0
            if want_cost:
                dsc = np.exp(-beta * (tb + s + 0.5 * hb))
                for z in range(n):
                    c2 += wtmp[z] * f_vec[z]
                c2 *= dsc
            for z in range(n):
                wtmp[z] = w[z] + 0.5 * hb * k2[z]
            r3 = _deriv(wtmp, M, r_vec, k3)
            c3 = 0.0
            if want_cost:
                dsc = np.exp(-beta * (tb + s + 0.5 * hb))
                for z in range(n):
                    c3 += wtmp[z] * f_vec[z]
                c3 *= dsc
            for z in range(n):
                wtmp[z] = w[z] + hb * k3[z]
            r4 = _deriv(wtmp, M, r_vec, k4)
            c4 = 0.0
            if want_cost:
                dsc = np.exp(-beta * (tb + s + hb))
                for z in range(n):
                    c4 += wtmp[z] * f_vec[z]
                c4 *= dsc
            coef = hb / 6.0
            for z in range(n):
                w[z] += coef * (k1[z] + 2.0 * k2[z] + 2.0 * k3[z] + k4[z])
            ell[b] += coef * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
            if want_cost:
                zc[b] += coef * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            st, dev, mn, lk = _project(w, onface, neg_tol, leak_tol)
            if st > status:
                status = st
            if dev > max_dev:
                max_dev = dev
            if mn < min_entry:
                min_entry = mn
            if lk > max_leak:
                max_leak = lk
            s += hb
    return ell, zc, status, max_dev, min_entry, max_leak


@njit(cache=True, nogil=True)
def rk4_record(W, M, r_vec, h, n_steps, onface, neg_tol, leak_tol,
               out_w, out_r):
    """Advance all rows of W by a common step h, recording each node.

    out_w has shape (n_steps, B, n) and out_r (n_steps, B); node i holds
    the state after i+1 steps and its off-face exit rate.  Returns status.
    """
    B, n = W.shape
    status = STATUS_OK
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    wtmp = np.empty(n)
    for b in range(B):
        w = W[b]
        for i in range(n_steps):
            _deriv(w, M, r_vec, k1)
            for z in range(n):
                wtmp[z] = w[z] + 0.5 * h * k1[z]
            _deriv(wtmp, M, r_vec, k2)
            for z in range(n):
                wtmp[z] = w[z] + 0.5 * h * k2[z]
            _deriv(wtmp, M, r_vec, k3)
            for z in range(n):
                wtmp[z] = w[z] + h * k3[z]
            _deriv(wtmp, M, r_vec, k4)
            coef = h / 6.0
            for z in range(n):
                w[z] += coef * (k1[z] + 2.0 * k2[z] + 2.0 * k3[z] + k4[z])
            st, _, _, _ = _project(w, onface, neg_tol, leak_tol)
            if st > status:
                status = st
            r = 0.0
            for z in range(n):
                out_w[i, b, z] = w[z]
                r += r_vec[z] * w[z]
            out_r[i, b] = r
    return status


@njit(cache=True, nogil=True)
def rk4_g_trapezoid(w0, M, r_vec, f_vec, beta, h, n_steps,
                    onface, neg_tol, leak_tol):
    """Composite-trapezoid accumulation of exp(-beta t) chi(t) (w(t) . f).

    Flow and survival exponent are advanced jointly on the quadrature grid;
    returns (g, status).
    """
    n = w0.shape[0]
    w = w0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    wtmp = np.empty(n)
    status = STATUS_OK
    ell = 0.0
    c_prev = 0.0
    for z in range(n):
        c_prev += w[z] * f_vec[z]
    g = 0.0
    t = 0.0
    for _ in range(n_steps):
        r1 = _deriv(w, M, r_vec, k1)
        for z in range(n):
            wtmp[z] = w[z] + 0.5 * h * k1[z]
        r2 = _deriv(wtmp, M, r_vec, k2)
        for z in range(n):
            wtmp[z] = w[z] + 0.5 * h * k2[z]
        r3 = _deriv(wtmp, M, r_vec, k3)
        for z in range(n):
            wtmp[z] = w[z] + h * k3[z]
        r4 = _deriv(wtmp, M, r_vec, k4)
        coef = h / 6.0
        for z in range(n):
            w[z] += coef * (k1[z] + 2.0 * k2[z] + 2.0 * k3[z] + k4[z])
        ell += coef * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
        st, _, _, _ = _project(w, onface, neg_tol, leak_tol)
        if st > status:
            status = st
        t += h
        c = 0.0
        for z in range(n):
            c += w[z] * f_vec[z]
        c *= np.exp(-beta * t - ell)
        g += 0.5 * h * (c_prev + c)
        c_prev = c
    return g, status

"""Numba-compiled versions of the hot kernels (same algorithms as ``_numpy``)."""

import numpy as np
from numba import njit

from ._numpy import (
    DIVERGENCE_RISK,
    OFF_TOL,
    SKIP_TOL,
    STATUS_CONVERGED,
    STATUS_DIVERGED,
    STATUS_MAX_ITERS,
    SVD_ORTH_TOL,
)


@njit(cache=True)
def kron(a, b):
    ra, ca = a.shape
    rb, cb = b.shape
    out = np.empty((ra * rb, ca * cb))
    for i in range(ra):
        for j in range(ca):
            aij = a[i, j]
            for k in range(rb):
                for m in range(cb):
                    out[i * rb + k, j * cb + m] = aij * b[k, m]
    return out


@njit(cache=True)
def _rotation_tangent(theta):
    if abs(theta) > 1e150:
        return 0.5 / theta
    sign = 1.0 if theta >= 0.0 else -1.0
    return sign / (abs(theta) + np.sqrt(theta * theta + 1.0))


@njit(cache=True)
def jacobi_eigh(a, max_sweeps=100):
    a = a.copy()
    n = a.shape[0]
    v = np.eye(n)
    fro = np.sqrt(np.sum(a * a))
    sweeps = 0
    if n < 2 or fro == 0.0:
        return np.diag(a).copy(), v, sweeps
    for sweep in range(1, max_sweeps + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        off = np.sqrt(2.0 * off)
        if off <= OFF_TOL * fro:
            break
        sweeps = sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= SKIP_TOL * fro:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                t = _rotation_tangent((aqq - app) / (2.0 * apq))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(n):
                    a[p, r] = a[r, p]
                    a[q, r] = a[r, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    return np.diag(a).copy(), v, sweeps


@njit(cache=True)
def jacobi_svd(a, max_sweeps=100):
    u = a.copy()
    m, n = u.shape
    v = np.eye(n)
    sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        sweeps = sweep
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    alpha += u[r, p] * u[r, p]
                    beta += u[r, q] * u[r, q]
                    gamma += u[r, p] * u[r, q]
                if gamma == 0.0 or abs(gamma) <= SVD_ORTH_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                t = _rotation_tangent((beta - alpha) / (2.0 * gamma))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    urp = u[r, p]
                    urq = u[r, q]
                    u[r, p] = c * urp - s * urq
                    u[r, q] = s * urp + c * urq
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
        if not rotated:
            break
    s = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for r in range(m):
            acc += u[r, j] * u[r, j]
        s[j] = np.sqrt(acc)
        if s[j] > 0.0:
            for r in range(m):
                u[r, j] /= s[j]
    return u, s, v, sweeps


@njit(cache=True)
def _pphi_grad(base, vl, vl_t, y, wl, wo, scale):
    xl = base + wl @ vl
    r = wo @ xl - y
    n = y.shape[1]
    risk = np.sum(r * r) / n
    g = scale * r
    gwo = g @ np.ascontiguousarray(xl.T)
    gwl = np.ascontiguousarray(wo.T) @ g @ vl_t
    gn = np.sqrt(np.sum(gwo * gwo) + np.sum(gwl * gwl))
    return risk, gwl, gwo, gn


@njit(cache=True)
def pphi_train(base, vl, y, wl, wo, lr, mu, max_iters, grad_tol, trace_every,
               decay_iters, decay_factor):
    wl = wl.copy()
    wo = wo.copy()
    vl_t = np.ascontiguousarray(vl.T)
    n = y.shape[1]
    scale = 2.0 / n
    vw = np.zeros_like(wl)
    vo = np.zeros_like(wo)
    cap = max_iters // trace_every + 3
    trace_it = np.empty(cap, dtype=np.int64)
    trace_risk = np.empty(cap)
    nt = 0
    status = STATUS_MAX_ITERS
    gnorm = np.inf
    it = 0
    next_decay = 0
    for it in range(max_iters + 1):
        while next_decay < decay_iters.shape[0] and decay_iters[next_decay] <= it:
            lr *= decay_factor
            next_decay += 1
        wla = wl + mu * vw
        woa = wo + mu * vo
        risk_a, gwl, gwo, gn = _pphi_grad(base, vl, vl_t, y, wla, woa, scale)
        if not np.isfinite(gn) or not np.isfinite(risk_a) or risk_a > DIVERGENCE_RISK:
            status = STATUS_DIVERGED
            gnorm = gn
            trace_it[nt] = it
            trace_risk[nt] = risk_a
            nt += 1
            break
        if mu == 0.0:
            risk_x = risk_a
            gn_x = gn
        elif gn <= grad_tol or it % trace_every == 0 or it == max_iters:
            risk_x, _gwl, _gwo, gn_x = _pphi_grad(base, vl, vl_t, y, wl, wo, scale)
        else:
            risk_x = risk_a
            gn_x = np.inf
        if it % trace_every == 0:
            trace_it[nt] = it
            trace_risk[nt] = risk_x
            nt += 1
        if gn_x <= grad_tol:
            status = STATUS_CONVERGED
            gnorm = gn_x
            break
        if it == max_iters:
            gnorm = gn_x
            break
        vw = mu * vw - lr * gwl
        vo = mu * vo - lr * gwo
        wl = wl + vw
        wo = wo + vo
    if nt == 0 or trace_it[nt - 1] != it:
        xl = base + wl @ vl
        r = wo @ xl - y
        trace_it[nt] = it
        trace_risk[nt] = np.sum(r * r) / n
        nt += 1
    return wl, wo, it, gnorm, status, trace_it[:nt].copy(), trace_risk[:nt].copy()

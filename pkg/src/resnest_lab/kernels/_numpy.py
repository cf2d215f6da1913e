"""Pure-numpy implementations of the hot kernels.

Each function mirrors the signature and algorithm of its counterpart in
``_numba`` so that both backends agree to rounding. Loops over rotation
pairs or training iterations stay in Python, the inner vector work is
vectorized.
"""

import numpy as np

# Jacobi stopping rules shared with the numba backend.
OFF_TOL = 1e-15
SKIP_TOL = 1e-18
SVD_ORTH_TOL = 1e-15

STATUS_CONVERGED = 0
STATUS_MAX_ITERS = 1
STATUS_DIVERGED = 2

DIVERGENCE_RISK = 1e12


def kron(a, b):
    ra, ca = a.shape
    rb, cb = b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(ra * rb, ca * cb)


def _rotation_tangent(theta):
    if abs(theta) > 1e150:
        return 0.5 / theta
    sign = 1.0 if theta >= 0.0 else -1.0
    return sign / (abs(theta) + np.sqrt(theta * theta + 1.0))


def jacobi_eigh(a, max_sweeps=100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns unsorted eigenvalues and the matrix whose columns are the
    matching eigenvectors, plus the number of sweeps used.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    fro = np.sqrt(np.sum(a * a))
    sweeps = 0
    if n < 2 or fro == 0.0:
        return np.diag(a).copy(), v, sweeps
    iu = np.triu_indices(n, 1)
    for sweeps in range(1, max_sweeps + 1):
        off = np.sqrt(2.0 * np.sum(a[iu] ** 2))
        if off <= OFF_TOL * fro:
            sweeps -= 1
            break
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
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                new_p = c * col_p - s * col_q
                new_q = s * col_p + c * col_q
                a[:, p] = new_p
                a[:, q] = new_q
                a[p, :] = new_p
                a[q, :] = new_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, sweeps


def jacobi_svd(a, max_sweeps=100):
    """One-sided (Hestenes) Jacobi SVD of a tall matrix (rows >= cols).

    Returns ``(u, s, v)`` with ``a = u @ diag(s) @ v.T``; singular values
    are unsorted and columns of ``u`` belonging to zero singular values are
    left as zero vectors.
    """
    u = np.array(a, dtype=np.float64, copy=True)
    n = u.shape[1]
    v = np.eye(n)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                up = u[:, p]
                uq = u[:, q]
                alpha = up @ up
                beta = uq @ uq
                gamma = up @ uq
                if gamma == 0.0 or abs(gamma) <= SVD_ORTH_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                t = _rotation_tangent((beta - alpha) / (2.0 * gamma))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                up = up.copy()
                uq = uq.copy()
                u[:, p] = c * up - s * uq
                u[:, q] = s * up + c * uq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    s = np.sqrt(np.sum(u * u, axis=0))
    nz = s > 0.0
    u[:, nz] = u[:, nz] / s[nz]
    return u, s, v, sweeps


def pphi_train(base, vl, y, wl, wo, lr, mu, max_iters, grad_tol, trace_every,
               decay_iters, decay_factor):
    """Full-batch GD / Nesterov loop for the squared-loss prediction-weight problem.

    The model is ``wo @ (base + wl @ vl)``; ``base`` holds the frozen part
    of the residual representation. Nesterov uses the lookahead form
    ``v <- mu v - lr grad(x + mu v); x <- x + v`` and reduces to GD at
    ``mu == 0``. Convergence is always judged on the gradient at the
    current iterate, not the lookahead point.
    """
    wl = wl.copy()
    wo = wo.copy()
    n = y.shape[1]
    scale = 2.0 / n
    vw = np.zeros_like(wl)
    vo = np.zeros_like(wo)
    trace_it = []
    trace_risk = []
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
        xl = base + wla @ vl
        r = woa @ xl - y
        risk_a = np.sum(r * r) / n
        g = scale * r
        gwo = g @ xl.T
        gwl = woa.T @ g @ vl.T
        gn = np.sqrt(np.sum(gwo * gwo) + np.sum(gwl * gwl))
        if not np.isfinite(gn) or not np.isfinite(risk_a) or risk_a > DIVERGENCE_RISK:
            status = STATUS_DIVERGED
            gnorm = gn
            trace_it.append(it)
            trace_risk.append(risk_a)
            break
        if mu == 0.0:
            risk_x = risk_a
            gn_x = gn
        elif gn <= grad_tol or it % trace_every == 0 or it == max_iters:
            xl_x = base + wl @ vl
            r_x = wo @ xl_x - y
            risk_x = np.sum(r_x * r_x) / n
            g_x = scale * r_x
            gwo_x = g_x @ xl_x.T
            gwl_x = wo.T @ g_x @ vl.T
            gn_x = np.sqrt(np.sum(gwo_x * gwo_x) + np.sum(gwl_x * gwl_x))
        else:
            risk_x = risk_a
            gn_x = np.inf
        if it % trace_every == 0:
            trace_it.append(it)
            trace_risk.append(risk_x)
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
    if not trace_it or trace_it[-1] != it:
        xl_x = base + wl @ vl
        r_x = wo @ xl_x - y
        trace_it.append(it)
        trace_risk.append(np.sum(r_x * r_x) / n)
    return (wl, wo, it, gnorm, status,
            np.array(trace_it, dtype=np.int64), np.array(trace_risk, dtype=np.float64))

"""Norm evaluation, Hölder duals, proximal maps and ball projections.

Exponents are floats with ``math.inf`` standing for the max-norm. The
projections are exact for p in {1, 2, inf}; other exponents fall back to
nested bisection, which is slower but only used off the common path.
"""

import math

import numpy as np

_BISECT_ITERS = 100


def dual_exponent(p):
    """Hölder conjugate q with 1/p + 1/q = 1 (exact at 1 and inf)."""
    if p == 1:
        return math.inf
    if p == math.inf:
        return 1.0
    return p / (p - 1.0)


def lp_norm(x, p, axis=-1):
    x = np.asarray(x, dtype=float)
    if p == math.inf:
        return np.max(np.abs(x), axis=axis)
    if p == 1:
        return np.sum(np.abs(x), axis=axis)
    if p == 2:
        return np.sqrt(np.sum(x * x, axis=axis))
    return np.sum(np.abs(x) ** p, axis=axis) ** (1.0 / p)


def project_l1_ball(x, radius):
    """Euclidean projection onto {y : ||y||_1 <= radius} (sort-based)."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    if a.sum() <= radius:
        return x.copy()
    if radius <= 0:
        return np.zeros_like(x)
    s = np.sort(a.ravel())[::-1]
    css = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    rho = np.nonzero(s * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(x) * np.maximum(a - theta, 0.0)


def _shrink(a, c, q):
    # per coordinate: y + c q y^(q-1) = a on [0, a]; safeguarded Newton
    lo = np.zeros_like(a)
    hi = a.copy()
    y = 0.5 * a
    for _ in range(60):
        f = y + c * q * y ** (q - 1.0) - a
        lo = np.where(f < 0, y, lo)
        hi = np.where(f < 0, hi, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / (1.0 + c * q * (q - 1.0) * y ** (q - 2.0))
        y_new = y - step
        bad = ~np.isfinite(y_new) | (y_new <= lo) | (y_new >= hi)
        y_new = np.where(bad, 0.5 * (lo + hi), y_new)
        if np.all(np.abs(y_new - y) <= 1e-15 * np.maximum(a, 1e-300)):
            return y_new
        y = y_new
    return y


def _project_lq_ball_generic(x, q, radius):
    a = np.abs(x)
    if lp_norm(a, q) <= radius:
        return x.copy()
    target = radius ** q

    def excess(nu):
        return float(np.sum(_shrink(a, nu, q) ** q)) - target

    nu_lo, nu_hi = 0.0, 1.0
    f_lo, f_hi = excess(nu_lo), excess(nu_hi)
    while f_hi > 0:
        nu_lo, f_lo = nu_hi, f_hi
        nu_hi *= 4.0
        f_hi = excess(nu_hi)
    # Illinois regula falsi on the decreasing excess
    side = 0
    for _ in range(_BISECT_ITERS):
        nu = (nu_lo * f_hi - nu_hi * f_lo) / (f_hi - f_lo)
        f = excess(nu)
        if abs(f) <= 1e-14 * target or nu_hi - nu_lo <= 1e-15 * nu_hi:
            break
        if f > 0:
            nu_lo, f_lo = nu, f
            if side == 1:
                f_hi *= 0.5
            side = 1
        else:
            nu_hi, f_hi = nu, f
            if side == -1:
                f_lo *= 0.5
            side = -1
    y = _shrink(a, nu, q)
    n = lp_norm(y, q)
    if n > radius:
        y *= radius / n
    return np.sign(x) * y


def project_lq_ball(x, q, radius=1.0):
    """Euclidean projection onto the l_q ball of the given radius."""
    x = np.asarray(x, dtype=float)
    if q == math.inf:
        return np.clip(x, -radius, radius)
    if q == 1:
        return project_l1_ball(x, radius)
    if q == 2:
        n = lp_norm(x, 2)
        return x.copy() if n <= radius else x * (radius / n)
    return _project_lq_ball_generic(x, q, radius)


def prox_norm(x, p, tau):
    """prox of tau * ||.||_p via Moreau: x - tau * P_{B_q}(x / tau)."""
    x = np.asarray(x, dtype=float)
    if tau <= 0:
        return x.copy()
    return x - project_lq_ball(x, dual_exponent(p), tau)


def _linf_levels(Z, theta):
    # ||prox_{theta ||.||_inf}(z_n)||_inf = max(0, max_k (S_{n,k} - theta) / k)
    s = np.sort(np.abs(Z), axis=1)[:, ::-1]
    css = np.cumsum(s, axis=1)
    k = np.arange(1, Z.shape[1] + 1)
    theta = np.atleast_1d(theta)
    lev = (css[None, :, :] - theta[:, None, None]) / k
    return np.maximum(lev.max(axis=2), 0.0)


def project_mixed_ball(Z, p, beta):
    """Project rows of ``Z`` onto {Z : sum_n ||z_n||_p <= beta}."""
    Z = np.asarray(Z, dtype=float)
    norms = lp_norm(Z, p, axis=1)
    if norms.sum() <= beta:
        return Z.copy()
    if beta <= 0:
        return np.zeros_like(Z)
    if p == 1:
        return project_l1_ball(Z, beta)
    if p == 2:
        r = project_l1_ball(norms, beta)
        scale = np.divide(r, norms, out=np.zeros_like(r), where=norms > 0)
        return Z * scale[:, None]
    if p == math.inf:
        s = np.sort(np.abs(Z), axis=1)[:, ::-1]
        css = np.cumsum(s, axis=1)
        k = np.arange(1, Z.shape[1] + 1)
        nxt = np.concatenate([s[:, 1:], np.zeros((Z.shape[0], 1))], axis=1)
        bps = np.unique(np.concatenate([[0.0], (css - k * nxt).ravel()]))
        total = _linf_levels(Z, bps).sum(axis=1)
        # total is nonincreasing and piecewise linear between breakpoints
        j = int(np.searchsorted(-total, -beta, side="left"))
        j = min(max(j, 1), bps.size - 1)
        t0, t1 = total[j - 1], total[j]
        w = 0.0 if t0 == t1 else (t0 - beta) / (t0 - t1)
        theta = bps[j - 1] + w * (bps[j] - bps[j - 1])
        lev = _linf_levels(Z, theta)[0]
        return np.clip(Z, -lev[:, None], lev[:, None])
    if Z.shape[0] == 1:
        return project_lq_ball(Z[0], p, beta)[None, :]
    lo, hi = 0.0, float(lp_norm(Z.ravel(), dual_exponent(p)))
    hi = max(hi, 1.0)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        tot = sum(lp_norm(prox_norm(z, p, mid), p) for z in Z)
        if tot > beta:
            lo = mid
        else:
            hi = mid
    return np.array([prox_norm(z, p, hi) for z in Z])


def project_lp_cone(Z, S, p):
    """Row-wise projection of (z_n, s_n) onto {(z, s) : ||z||_p <= s}.

    For 1 < p < inf. Outside the cone and its polar the projection is
    ``(x(k), ||x(k)||_p)`` where ``|x| + k |x|^(p-1) = |z|`` coordinatewise
    and k > 0 solves ``r(k) - s - k r(k)^(p-1) = 0``; the left side is
    decreasing in k, so the root is bracketed and found by bisection on
    log k.
    """
    Z = np.asarray(Z, dtype=float)
    S = np.asarray(S, dtype=float)
    q = dual_exponent(p)
    zn = lp_norm(Z, p, axis=1)
    X = Z.copy()
    R = S.copy()
    inside = zn <= S
    polar = lp_norm(Z, q, axis=1) <= -S
    X[polar] = 0.0
    R[polar] = 0.0
    rows = np.nonzero(~inside & ~polar)[0]
    if rows.size == 0:
        return X, R
    A = np.abs(Z[rows])
    s = S[rows]

    def solve(k):
        x = _shrink(A, (k / p)[:, None], p)
        r = lp_norm(x, p, axis=1)
        return x, r, r - s - k * r ** (p - 1.0)

    lo = np.full(rows.size, -60.0)
    hi = np.full(rows.size, 60.0)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        _, _, phi = solve(np.exp(mid))
        lo = np.where(phi > 0, mid, lo)
        hi = np.where(phi > 0, hi, mid)
        if np.all(hi - lo < 1e-13):
            break
    x, r, _ = solve(np.exp(0.5 * (lo + hi)))
    X[rows] = np.sign(Z[rows]) * x
    R[rows] = r
    return X, R

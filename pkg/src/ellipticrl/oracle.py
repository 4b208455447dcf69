"""Independent reference minimizer for the worst-case perturbation problem.

Three modes, none of which reuses the closed forms or the dual method:

``"nlp"`` (default)
    p in {1, inf}: the problem is a linear program, solved exactly by
    HiGHS. Other p: SLSQP on the smooth constraint from several feasible
    starts. Error bound: 1e-9 for the LP, 1e-7 (solver tolerance) for SLSQP.
``"grid"``
    Exhaustive lattice over the hyperplane slice of the bounding box.
    Spacing ``resolution`` (default beta/200) is widened until the lattice
    has at most 1e7 points. Heuristic error bound:
    ``spacing * sum_j |v_j - v_d|`` (one lattice step in every free
    coordinate).
``"subgradient"``
    Projected subgradient from 32 random feasible starts with level
    switching: infeasible iterates take a Polyak step on the budget,
    feasible ones a diminishing step along the projected objective.
    Heuristic error bound: the final step length times ``||P v||_2``.

The result is always a feasible point, so its objective is an upper
bound on the true minimum.
"""

import math

import numpy as np
from scipy.optimize import linprog, minimize

from ._norms import lp_norm
from .errors import InfeasibleError, InputError
from .solver import WorstCaseSolution

GRID_CAP = 10_000_000
N_STARTS = 32


def _norm_grad(x, p):
    # a subgradient of ||x||_p (zero at the origin)
    nrm = lp_norm(x, p)
    if nrm == 0:
        return np.zeros_like(x)
    if p == 1:
        return np.sign(x)
    if p == math.inf:
        g = np.zeros_like(x)
        j = int(np.argmax(np.abs(x)))
        g[j] = np.sign(x[j])
        return g
    return np.sign(x) * (np.abs(x) / nrm) ** (p - 1.0)


def _budget_grad(spec, u):
    return sum(_norm_grad(u - f, spec.p) for f in spec.foci)


def _lp(v, spec):
    F = spec.foci
    n, d = F.shape
    p, beta = spec.p, spec.beta
    rows, rhs = [], []
    if p == 1:
        # variables: u (d), a (n*d) with a_nj >= |u_j - F_nj|
        nv = d + n * d
        for i in range(n):
            for j in range(d):
                for sgn in (1.0, -1.0):
                    row = np.zeros(nv)
                    row[j] = sgn
                    row[d + i * d + j] = -1.0
                    rows.append(row)
                    rhs.append(sgn * F[i, j])
        budget = np.zeros(nv)
        budget[d:] = 1.0
    else:
        # variables: u (d), t (n) with t_n >= |u_j - F_nj| for every j
        nv = d + n
        for i in range(n):
            for j in range(d):
                for sgn in (1.0, -1.0):
                    row = np.zeros(nv)
                    row[j] = sgn
                    row[d + i] = -1.0
                    rows.append(row)
                    rhs.append(sgn * F[i, j])
        budget = np.zeros(nv)
        budget[d:] = 1.0
    rows.append(budget)
    rhs.append(beta)
    c = np.zeros(nv)
    c[:d] = v
    a_eq = np.zeros((1, nv))
    a_eq[0, :d] = 1.0
    bounds = [(None, None)] * d + [(0, None)] * (nv - d)
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=a_eq, b_eq=[0.0],
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        raise InfeasibleError("uncertainty set is empty (LP infeasible)")
    if res.status != 0:
        raise InfeasibleError(f"LP oracle failed: {res.message}")
    u = res.x[:d]
    u = u - u.mean()
    mu = -float(res.eqlin.marginals[0]) if res.eqlin is not None else float("nan")
    lam = -float(res.ineqlin.marginals[-1]) if res.ineqlin is not None else float("nan")
    return u, mu, lam, 1e-9


def _phase_one(spec, rng):
    # a point on the hyperplane with small budget use, found without the
    # solver package: SLSQP on the budget from projected foci
    d = spec.dim
    starts = [f - f.mean() for f in spec.foci] + [spec.foci.mean(axis=0) - spec.foci.mean()]
    best_u, best_g = None, math.inf
    cons = [{"type": "eq", "fun": lambda u: np.array([u.sum()]), "jac": lambda u: np.ones((1, d))}]
    for x0 in starts:
        res = minimize(spec.distance_sum, x0, jac=lambda u: _budget_grad(spec, u),
                       constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        for cand in (res.x - res.x.mean(), x0):
            g = spec.distance_sum(cand)
            if g < best_g:
                best_u, best_g = cand, g
    return best_u, best_g


def _pull_inside(spec, u, inner):
    if spec.distance_sum(u) <= spec.beta:
        return u
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if spec.distance_sum(inner + mid * (u - inner)) <= spec.beta:
            lo = mid
        else:
            hi = mid
    return inner + lo * (u - inner)


def _slsqp(v, spec, rng, n_starts=4):
    d = spec.dim
    inner, g0 = _phase_one(spec, rng)
    if g0 > spec.beta + 1e-9:
        raise InfeasibleError(f"uncertainty set is empty (min budget {g0:.6g} > beta {spec.beta:.6g})")
    cons = [
        {"type": "eq", "fun": lambda u: np.array([u.sum()]), "jac": lambda u: np.ones((1, d))},
        {"type": "ineq", "fun": lambda u: np.array([spec.beta - spec.distance_sum(u)]),
         "jac": lambda u: -_budget_grad(spec, u)[None, :]},
    ]
    pv = v - v.mean()
    starts = [inner]
    for _ in range(n_starts - 1):
        direction = rng.standard_normal(d) - 0.5 * pv / max(np.linalg.norm(pv), 1e-300)
        direction -= direction.mean()
        starts.append(_pull_inside(spec, inner + spec.beta * direction, inner))
    best = None
    for x0 in starts:
        res = minimize(lambda u: float(v @ u), x0, jac=lambda u: v, constraints=cons,
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
        u = res.x - res.x.mean()
        u = _pull_inside(spec, u, inner)
        if best is None or v @ u < v @ best:
            best = u
    return best, float("nan"), float("nan"), 1e-7 * max(1.0, float(np.abs(v).max()) * spec.beta)


def _grid(v, spec, resolution):
    F = spec.foci
    d, beta = spec.dim, spec.beta
    lo = np.max(F - beta, axis=0)
    hi = np.min(F + beta, axis=0)
    if np.any(lo > hi):
        raise InfeasibleError("bounding box of the uncertainty set is empty")
    h = float(resolution) if resolution else beta / 200.0
    widths = hi[:-1] - lo[:-1]
    if h <= 0:
        h = 1.0
    while True:
        counts = np.floor(widths / h + 1e-9).astype(int) + 1
        if np.prod(counts.astype(float)) <= GRID_CAP:
            break
        h *= 1.25
    axes = [lo[j] + h * np.arange(counts[j]) for j in range(d - 1)]
    best_u, best_val = None, math.inf
    mesh = np.meshgrid(*axes, indexing="ij") if d > 1 else []
    free = np.stack([m.ravel() for m in mesh], axis=1) if d > 1 else np.zeros((1, 0))
    chunk = 200_000
    for start in range(0, free.shape[0], chunk):
        part = free[start:start + chunk]
        last = -part.sum(axis=1, keepdims=True)
        pts = np.hstack([part, last])
        ok = (last[:, 0] >= lo[-1] - 1e-12) & (last[:, 0] <= hi[-1] + 1e-12)
        pts = pts[ok]
        if pts.size == 0:
            continue
        pts = pts[spec.distance_sum(pts) <= beta + 1e-12]
        if pts.size == 0:
            continue
        vals = pts @ v
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_u, best_val = pts[k], float(vals[k])
    if best_u is None:
        raise InfeasibleError(f"no feasible lattice point at spacing {h:.3g}")
    bound = h * float(np.sum(np.abs(v[:-1] - v[-1])))
    return best_u, float("nan"), float("nan"), bound


def _subgradient(v, spec, rng, iters=4000):
    d = spec.dim
    inner, g0 = _phase_one(spec, rng)
    if g0 > spec.beta + 1e-9:
        raise InfeasibleError(f"uncertainty set is empty (min budget {g0:.6g} > beta {spec.beta:.6g})")
    pv = v - v.mean()
    npv = float(np.linalg.norm(pv))
    starts = []
    for _ in range(N_STARTS):
        direction = rng.standard_normal(d)
        direction -= direction.mean()
        starts.append(_pull_inside(spec, inner + spec.beta * direction, inner))
    best_u, best_val = inner, float(v @ inner)
    a = spec.beta / max(npv, 1e-300)
    step = a
    for u in starts:
        for k in range(1, iters + 1):
            excess = spec.distance_sum(u) - spec.beta
            if excess > 0:
                g = _budget_grad(spec, u)
                g -= g.mean()
                gg = float(g @ g)
                if gg == 0:
                    break
                u = u - (excess / gg) * g
            else:
                if v @ u < best_val:
                    best_u, best_val = u.copy(), float(v @ u)
                step = a / math.sqrt(k)
                u = u - step * pv
    return best_u, float("nan"), float("nan"), step * npv


def oracle_solve(v, spec, resolution=None, mode="nlp", seed=0):
    """Reference minimizer; ``gap`` of the result holds the error bound."""
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.dim,):
        raise InputError(f"v has shape {v.shape}, set dimension is {spec.dim}")
    rng = np.random.default_rng(seed)
    if mode == "grid":
        if spec.dim > 6:
            raise InputError("grid mode supports dim <= 6")
        u, mu, lam, bound = _grid(v, spec, resolution)
    elif mode == "subgradient":
        u, mu, lam, bound = _subgradient(v, spec, rng)
    elif mode == "nlp":
        if spec.p in (1.0, math.inf):
            u, mu, lam, bound = _lp(v, spec)
        else:
            u, mu, lam, bound = _slsqp(v, spec, rng)
    else:
        raise InputError(f"unknown oracle mode {mode!r}")
    return WorstCaseSolution(np.asarray(u, dtype=float), mu, lam, float(v @ u), "oracle", gap=bound)

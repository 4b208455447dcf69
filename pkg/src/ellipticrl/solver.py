"""Worst-case perturbation over an elliptic set.

Solves ``min v^T u  s.t.  sum_n ||u - u_n||_p <= beta,  1^T u = 0`` with
closed forms where they exist (one focus; two foci under l_1; two foci
under l_2) and a certified primal-dual method otherwise.

Every solution reports the shift ``mu_star`` (multiplier of the zero-sum
constraint) and ``lambda_star`` (multiplier of the distance budget), so
that ``u_star`` minimizes ``(v + mu 1)^T u + lambda sum_n ||u - u_n||_p``.
"""

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._norms import lp_norm, project_lp_cone, project_mixed_ball
from .errors import (
    ConvergenceError,
    DegenerateEllipseError,
    InfeasibleError,
    InputError,
)
from .uncertainty import EllipticSetSpec, NormExponent, contains, hyperplane_center

DISPATCH = ("auto", "explicit", "implicit", "oracle")
METHODS = ("explicit_n1", "explicit_l1_n2", "explicit_l2_n2", "implicit_dual", "oracle")

_EPS = 1e-12


class ExplicitNotApplicable(InputError):
    """The closed form does not cover this instance (ties, off-plane focus)."""


@dataclass(frozen=True)
class WorstCaseProblem:
    v: np.ndarray
    spec: EllipticSetSpec
    tol: float = 1e-9

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.shape != (self.spec.dim,):
            raise InputError(f"v has shape {v.shape}, set dimension is {self.spec.dim}")
        if not np.all(np.isfinite(v)):
            raise InputError("v must be finite")
        object.__setattr__(self, "v", v)

    @classmethod
    def from_dict(cls, data):
        try:
            spec = EllipticSetSpec.from_dict(data["spec"])
            return cls(data["v"], spec, float(data.get("tol", 1e-9)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed problem object: {exc}") from exc

    def to_dict(self):
        return {"v": self.v.tolist(), "spec": self.spec.to_dict(), "tol": self.tol}


@dataclass(frozen=True)
class WorstCaseSolution:
    """Minimizer with its dual certificate.

    ``gap`` is the certified duality gap for the dual method, zero for the
    closed forms and the oracle's error bound for oracle results.
    ``focus_duals`` holds the per-focus dual vectors ``w_n`` (summing to
    ``v + mu 1``) when the dual method produced them.
    """

    u_star: np.ndarray
    mu_star: float
    lambda_star: float
    objective: float
    method: str
    focus_duals: Optional[np.ndarray] = None
    gap: float = 0.0
    degenerate: bool = False

    def to_dict(self):
        def num(x):
            return None if x is None or not math.isfinite(x) else float(x)

        out = {
            "u_star": np.asarray(self.u_star).tolist(),
            "mu_star": num(self.mu_star),
            "lambda_star": num(self.lambda_star),
            "objective": float(self.objective),
            "method": self.method,
            "gap": num(self.gap),
            "degenerate": bool(self.degenerate),
        }
        if self.focus_duals is not None:
            out["focus_duals"] = np.asarray(self.focus_duals).tolist()
        return out

    def to_json(self):
        return json.dumps(self.to_dict())


class Shift(NamedTuple):
    mu: float
    degenerate: bool


def argmin_shift(v, q):
    """Scalar mu minimizing ||v + mu 1||_q.

    Closed forms for q in {1, 2, inf}; bisection on the derivative of
    ``||v + mu 1||_q^q`` down to floating-point resolution otherwise. A constant ``v`` returns ``-v[0]`` and
    the degenerate flag.
    """
    v = np.asarray(v, dtype=float)
    q = float(q)
    hi, lo = float(v.max()), float(v.min())
    if hi - lo <= _EPS * max(1.0, abs(hi), abs(lo)):
        return Shift(-float(v[0]), True)
    if q == math.inf:
        return Shift(-(hi + lo) / 2.0, False)
    if q == 1:
        return Shift(-float(np.median(v)), False)
    if q == 2:
        return Shift(-float(v.mean()), False)
    a, b = -hi, -lo
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        w = v + mid
        if np.sum(np.sign(w) * np.abs(w) ** (q - 1.0)) > 0:
            b = mid
        else:
            a = mid
    return Shift(0.5 * (a + b), False)


def _dual_direction(w, q):
    """Zero-sum s with ||s||_p = 1 and s^T w = ||w||_q, for w = v + mu* 1."""
    scale = float(np.max(np.abs(w)))
    tie = 1e-12 * max(scale, 1.0)
    if q == math.inf:
        top = w >= w.max() - tie
        bot = w <= w.min() + tie
        return 0.5 * top / top.sum() - 0.5 * bot / bot.sum()
    if q == 1:
        s = np.sign(w) * (np.abs(w) > tie)
        zero = np.abs(w) <= tie
        if zero.any():
            s[zero] = -s.sum() / zero.sum()
        return s
    if q == 2:
        return w / np.linalg.norm(w)
    s = np.sign(w) * np.abs(w) ** (q - 1.0)
    s /= lp_norm(w, q) ** (q - 1.0)
    return s - s.mean()


def solve_single_focus(v, u1, beta, norm):
    """Closed form for one focus.

    ``u* = u1 - beta J(v + mu* 1)`` where J is the dual unit direction
    (``sign(w)|w|^(q-1) / ||w||_q^(q-1)`` for finite q). The minus sign is
    the minimizing one. When the focus is off the zero-sum hyperplane the
    l_2 ball is replaced by its exact slice; other norms decline.
    """
    v = np.asarray(v, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    norm = NormExponent.parse(norm)
    beta = float(beta)
    d = v.size
    sigma = float(u1.sum())
    if abs(sigma) > 1e-12 * max(1.0, float(np.abs(u1).max())):
        if norm.p != 2:
            raise ExplicitNotApplicable("closed form needs a zero-sum focus unless p = 2")
        r2 = beta * beta - sigma * sigma / d
        if r2 < -1e-15:
            raise InfeasibleError("ball does not meet the zero-sum hyperplane")
        u1 = u1 - sigma / d
        beta = math.sqrt(max(r2, 0.0))
    mu, degenerate = argmin_shift(v, norm.q)
    w = v + mu
    if degenerate or beta == 0.0:
        u = u1.copy()
        return WorstCaseSolution(u, mu, 0.0, float(v @ u), "explicit_n1", degenerate=degenerate)
    s = _dual_direction(w, norm.q)
    u = u1 - beta * s
    lam = float(lp_norm(w, norm.q))
    return WorstCaseSolution(u, mu, lam, float(v @ u), "explicit_n1")


def _unique_extremes(v):
    scale = max(1.0, float(np.max(np.abs(v))))
    tie = 1e-12 * scale
    n_top = int(np.sum(v >= v.max() - tie))
    n_bot = int(np.sum(v <= v.min() + tie))
    return n_top == 1 and n_bot == 1


def solve_l1_two_foci(v, u1, u2, beta):
    """Closed form for two foci under the l_1 norm.

    The distance budget separates by coordinate: ``|x-a_j| + |x-b_j|`` is
    flat on ``[min(a_j,b_j), max(a_j,b_j)]`` and has slope 2 outside. So
    coordinates slide freely inside their focal interval (those with
    ``v_j < m`` to the top, the rest to the bottom, ``m = (vmax+vmin)/2``)
    and the leftover budget ``beta - ||u1-u2||_1`` is spent beyond the
    interval on the argmax coordinate (downwards) and the argmin
    coordinate (upwards), balanced so that the result sums to zero.
    """
    v = np.asarray(v, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    lo_end = np.minimum(u1, u2)
    width = np.abs(u1 - u2)
    delta1 = float(width.sum())
    budget = float(beta) - delta1
    if budget <= 0:
        raise DegenerateEllipseError(f"radius {beta} must exceed the focal distance {delta1}")
    target = -float(lo_end.sum())
    f_lo_win = max(0.0, target - budget / 2.0)
    f_hi_win = min(delta1, target + budget / 2.0)
    if f_lo_win > f_hi_win + 1e-15:
        raise InfeasibleError("two-focus l_1 set does not meet the zero-sum hyperplane")
    vmax, vmin = float(v.max()), float(v.min())
    constant = vmax - vmin <= _EPS * max(1.0, abs(vmax), abs(vmin))
    if not constant and not _unique_extremes(v):
        raise ExplicitNotApplicable("argmax or argmin of v is not unique")
    m = 0.5 * (vmax + vmin)
    if constant:
        order = np.arange(v.size)
        f_free = np.clip(target, f_lo_win, f_hi_win)
        f_lo = f_hi = f_free
    else:
        order = np.argsort(v, kind="stable")
        f_lo = float(width[v < m].sum())
        f_hi = f_lo + float(width[v == m].sum())
    fill = float(np.clip(np.clip(target, f_lo, f_hi), f_lo_win, f_hi_win))
    f = np.zeros_like(v)
    left = fill
    for j in order:
        take = min(width[j], left)
        f[j] = take
        left -= take
        if left <= 0:
            break
    c = target - fill
    up = 0.5 * (budget / 2.0 + c)
    down = 0.5 * (budget / 2.0 - c)
    x = lo_end + f
    if constant:
        x = x + (up - down) / v.size
        lam = 0.0
    else:
        x[int(np.argmin(v))] += up
        x[int(np.argmax(v))] -= down
        lam = (vmax - vmin) / 4.0
    return WorstCaseSolution(x, -m, lam, float(v @ x), "explicit_l1_n2", degenerate=constant)


def solve_l2_two_foci(v, u1, u2, beta):
    """Closed form for two foci under the l_2 norm.

    The set is the ellipsoid ``(u-c)^T A (u-c) <= 1`` cut by the zero-sum
    hyperplane. With ``M = A^-1 = (b^2-D^2)/4 * (I + dd^T/(b^2-D^2))``,
    ``u* = c - M w / sqrt(w^T M w)`` and ``w = v + mu* 1``, where mu* makes
    ``1^T u* = 0``. For a centre on the hyperplane this is
    ``mu* = -(1^T M v)/(1^T M 1)``; otherwise mu* solves a quadratic.
    """
    v = np.asarray(v, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    beta = float(beta)
    delta = u2 - u1
    dd = float(delta @ delta)
    gap = beta * beta - dd
    if beta <= 0 or gap <= 0:
        raise DegenerateEllipseError(f"radius {beta} must exceed the focal distance {math.sqrt(dd)}")
    centre = 0.5 * (u1 + u2)

    def M(x):
        return 0.25 * gap * x + 0.25 * delta * float(delta @ x)

    ones = np.ones_like(v)
    m1 = M(ones)
    mv = M(v)
    g = float(m1.sum())
    alpha = float(mv.sum())
    sigma = float(centre.sum())
    if sigma * sigma > g * (1 + 1e-12):
        raise InfeasibleError("ellipse does not meet the zero-sum hyperplane")
    K = float(v @ mv) - alpha * alpha / g
    if K <= 1e-14 * max(1.0, float(v @ mv)) or sigma * sigma >= g:
        u = centre - m1 * sigma / g
        mu = -alpha / g
        return WorstCaseSolution(u, mu, 0.0, float(v @ u), "explicit_l2_n2", degenerate=True)
    t = sigma * math.sqrt(K / (1.0 - sigma * sigma / g))
    mu = (t - alpha) / g
    w = v + mu
    mw = mv + mu * m1
    u = centre - mw / math.sqrt(float(w @ mw))
    n1 = u - u1
    n2 = u - u2
    normal = n1 / np.linalg.norm(n1) + n2 / np.linalg.norm(n2)
    lam = float(np.linalg.norm(w) / np.linalg.norm(normal))
    return WorstCaseSolution(u, mu, lam, float(v @ u), "explicit_l2_n2")


def _restore(spec, u, centre):
    # pull u back toward an interior point until the budget holds
    if spec.distance_sum(u) <= spec.beta:
        return u
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if spec.distance_sum(centre + mid * (u - centre)) <= spec.beta:
            lo = mid
        else:
            hi = mid
    return centre + lo * (u - centre)


def _centre(spec):
    cached = getattr(spec, "_centre_cache", None)
    if cached is None:
        cached = hyperplane_center(spec)
        object.__setattr__(spec, "_centre_cache", cached)
    return cached


def solve_implicit(v, spec, tol=1e-9, max_iter=50000):
    """Dual method for any number of foci and any p.

    The Lagrange dual is

        max  sum_n w_n^T u_n - beta * max_n ||w_n||_q
        s.t. sum_n w_n = v + mu 1,

    with ``lambda* = max_n ||w_n||_q``, and the primal minimizer is the
    ``u`` minimizing ``(v + mu* 1)^T u + lambda* sum_n ||u - u_n||_p``. Both
    are computed together by ADMM on the splitting ``z_n = u - u_n``
    (u on the zero-sum hyperplane, the z_n in the mixed-norm ball of radius
    beta). The scaled multipliers of the splitting are the focus duals
    ``w_n``. Each check repairs them so that the sum constraint holds
    exactly, which makes the dual value a valid lower bound; the method
    stops once ``v^T u - lower_bound <= tol * max(1, |v^T u|)``.
    """
    v = np.asarray(v, dtype=float)
    F = spec.foci
    n, d = F.shape
    p, q, beta = spec.p, spec.q, spec.beta
    centre, cval = _centre(spec)
    if cval > beta + 1e-9:
        raise InfeasibleError(
            f"uncertainty set is empty: min focal distance on the hyperplane {cval:.6g} > beta {beta:.6g}"
        )
    scale_v = float(np.max(np.abs(v - v.mean())))
    if beta == 0.0 or scale_v <= _EPS * max(1.0, float(np.max(np.abs(v)))):
        u = centre.copy()
        return WorstCaseSolution(u, -float(v.mean()), 0.0, float(v @ u), "implicit_dual",
                                 degenerate=scale_v <= _EPS * max(1.0, float(np.max(np.abs(v)))))
    rho = scale_v / max(beta, 1e-12)
    u = centre.copy()
    Z = u[None, :] - F
    Y = np.zeros_like(Z)
    # generic p: split each distance into its own l_p cone (z_n, s_n) and
    # keep the radii t on {sum t <= beta}; p in {1, 2, inf} projects onto
    # the mixed-norm ball directly
    cone = p not in (1.0, 2.0, math.inf) and n > 1
    if cone:
        T = lp_norm(Z, p, axis=1)
        Sv = T.copy()
        Yt = np.zeros(n)
    best = None
    check_every = 10
    relax = 1.6
    adapt_until = 1000
    for k in range(1, max_iter + 1):
        u = (F + Z - Y).mean(axis=0) - v / (rho * n)
        u -= u.mean()
        uz = relax * (u[None, :] - F) + (1 - relax) * Z
        if cone:
            T = Sv - Yt
            excess = T.sum() - beta
            if excess > 0:
                T -= excess / n
            tz = relax * T + (1 - relax) * Sv
            Z_new, S_new = project_lp_cone(uz + Y, tz + Yt, p)
            Yt += tz - S_new
            Sv = S_new
        else:
            Z_new = project_mixed_ball(uz + Y, p, beta)
        Y += uz - Z_new
        r_norm = np.linalg.norm(u[None, :] - F - Z_new)
        s_norm = rho * np.linalg.norm(Z_new - Z) * math.sqrt(n)
        Z = Z_new
        if k % check_every == 0:
            W = -rho * Y
            resid = v - W.sum(axis=0)
            mu = -float(resid.mean())
            W = W + (resid + mu)[None, :] / n
            lam = float(np.max(lp_norm(W, q, axis=1)))
            lower = float(np.sum(W * F)) - beta * lam
            u_feas = _restore(spec, u, centre)
            upper = float(v @ u_feas)
            gap = upper - lower
            if best is None or gap < best[0]:
                best = (gap, u_feas.copy(), mu, lam, W.copy())
            if gap <= tol * max(1.0, abs(upper)):
                break
            # residual balancing early on only; late changes of rho stall ADMM
            if k <= adapt_until and k % 50 == 0:
                if r_norm > 10 * s_norm:
                    rho *= 2.0
                    Y /= 2.0
                    if cone:
                        Yt /= 2.0
                elif s_norm > 10 * r_norm:
                    rho /= 2.0
                    Y *= 2.0
                    if cone:
                        Yt *= 2.0
    gap, u, mu, lam, W = best
    if gap > tol * max(1.0, abs(float(v @ u))):
        sol = WorstCaseSolution(u, mu, lam, float(v @ u), "implicit_dual", W, gap)
        raise ConvergenceError(f"dual method stopped with gap {gap:.3g} after {max_iter} iterations",
                               best=sol, gap=gap)
    return WorstCaseSolution(u, mu, lam, float(v @ u), "implicit_dual", W, max(gap, 0.0))


def _explicit(v, spec):
    n, p, beta = spec.n_foci, spec.p, spec.beta
    if n == 1:
        return solve_single_focus(v, spec.foci[0], beta, spec.norm)
    if n == 2 and p == 1:
        if beta > float(np.abs(spec.foci[1] - spec.foci[0]).sum()):
            return solve_l1_two_foci(v, spec.foci[0], spec.foci[1], beta)
    if n == 2 and p == 2:
        if beta > float(np.linalg.norm(spec.foci[1] - spec.foci[0])):
            return solve_l2_two_foci(v, spec.foci[0], spec.foci[1], beta)
    return None


def solve(problem, spec=None, method="auto", tol=None):
    """Dispatch to a closed form when one applies, else to the dual method.

    Accepts either a :class:`WorstCaseProblem` or ``(v, spec)``. Closed-form
    answers are checked for membership and zero sum; a failed check or an
    inapplicable closed form falls through to :func:`solve_implicit`.
    ``method`` may force ``"explicit"``, ``"implicit"`` or ``"oracle"``.
    """
    if spec is None:
        v, spec = problem.v, problem.spec
        tol = problem.tol if tol is None else tol
    else:
        v = np.asarray(problem, dtype=float)
        if v.shape != (spec.dim,):
            raise InputError(f"v has shape {v.shape}, set dimension is {spec.dim}")
    tol = 1e-9 if tol is None else tol
    if method == "oracle":
        from .oracle import oracle_solve

        return oracle_solve(v, spec)
    if method == "implicit":
        return solve_implicit(v, spec)
    if method not in ("auto", "explicit"):
        raise InputError(f"unknown method {method!r}")
    try:
        sol = _explicit(v, spec)
    except ExplicitNotApplicable:
        sol = None
    if sol is None:
        if method == "explicit":
            raise ExplicitNotApplicable("no closed form covers this instance")
        return solve_implicit(v, spec)
    scale = max(1.0, float(np.max(np.abs(spec.foci))), spec.beta)
    if contains(spec, sol.u_star, max(tol, 1e-12 * scale)):
        return sol
    if method == "explicit":
        raise ExplicitNotApplicable("closed form failed its membership check")
    return solve_implicit(v, spec)

"""Elliptic uncertainty sets over transition-row perturbations.

A set is ``{u : sum_n ||u - u_n||_p <= beta, 1^T u = 0}``: perturbations
whose summed distance to N anchor vectors (the foci) is bounded, restricted
to the zero-sum hyperplane so that ``P0 + u`` still sums to one.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._norms import dual_exponent, lp_norm, prox_norm
from .errors import DegenerateEllipseError, InputError

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class NormExponent:
    """An l_p exponent in [1, inf] together with its Hölder dual."""

    p: float

    def __post_init__(self):
        p = float(self.p)
        if math.isnan(p) or p < 1:
            raise InputError(f"norm exponent must be >= 1, got {self.p!r}")
        object.__setattr__(self, "p", p)

    @property
    def q(self):
        return dual_exponent(self.p)

    @classmethod
    def parse(cls, value):
        if isinstance(value, NormExponent):
            return value
        if isinstance(value, str):
            if value.strip().lower() in ("inf", "infinity", "+inf"):
                return cls(math.inf)
            try:
                value = float(value)
            except ValueError as exc:
                raise InputError(f"bad norm exponent {value!r}") from exc
        return cls(value)

    def to_json(self):
        return "inf" if self.p == math.inf else self.p


@dataclass(frozen=True)
class EllipticSetSpec:
    """Foci, radius and norm of one state-action uncertainty set.

    Parameters
    ----------
    foci : array_like, shape (N, d)
        Anchor vectors. They need not sum to zero themselves; nonemptiness
        of the set is checked separately by :func:`feasible`.
    beta : float
        Radius bounding the summed distance to the foci.
    norm : NormExponent or float or str
        Exponent p of the l_p norm used for every distance.
    """

    foci: np.ndarray
    beta: float
    norm: NormExponent = field(default_factory=lambda: NormExponent(2.0))

    def __post_init__(self):
        foci = np.array(self.foci, dtype=float)
        if foci.ndim == 1:
            foci = foci[None, :]
        if foci.ndim != 2 or foci.shape[0] < 1 or foci.shape[1] < 1:
            raise InputError("foci must be a nonempty list of equal-length vectors")
        if not np.all(np.isfinite(foci)):
            raise InputError("foci must be finite")
        beta = float(self.beta)
        if not math.isfinite(beta) or beta < 0:
            raise InputError(f"beta must be a finite nonnegative number, got {self.beta!r}")
        foci.setflags(write=False)
        object.__setattr__(self, "foci", foci)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "norm", NormExponent.parse(self.norm))

    @property
    def dim(self):
        return self.foci.shape[1]

    @property
    def n_foci(self):
        return self.foci.shape[0]

    @property
    def p(self):
        return self.norm.p

    @property
    def q(self):
        return self.norm.q

    def with_beta(self, beta):
        return EllipticSetSpec(self.foci, beta, self.norm)

    def distance_sum(self, u):
        """sum_n ||u - u_n||_p for one point or a stack of points."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return float(np.sum(lp_norm(u[None, :] - self.foci, self.p, axis=1)))
        diffs = u[:, None, :] - self.foci[None, :, :]
        return np.sum(lp_norm(diffs, self.p, axis=2), axis=1)

    def to_dict(self):
        return {
            "dim": int(self.dim),
            "p": self.norm.to_json(),
            "beta": self.beta,
            "foci": self.foci.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            foci = data["foci"]
            spec = cls(foci, data["beta"], NormExponent.parse(data.get("p", 2)))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed uncertainty-set object: {exc}") from exc
        if "dim" in data and int(data["dim"]) != spec.dim:
            raise InputError(f"dim {data['dim']} disagrees with focus length {spec.dim}")
        return spec

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid JSON: {exc}") from exc


@dataclass(frozen=True)
class QuadraticForm:
    """Ellipsoid ``{u : (u - center)^T A (u - center) <= 1}``."""

    A: np.ndarray
    center: np.ndarray

    def value(self, u):
        d = np.asarray(u, dtype=float) - self.center
        if d.ndim == 1:
            return float(d @ self.A @ d)
        return np.einsum("ij,jk,ik->i", d, self.A, d)

    def contains(self, u):
        return self.value(u) <= 1.0


def _check_dim(spec, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.dim,):
        raise InputError(f"vector of shape {u.shape} does not match set dimension {spec.dim}")
    return u


def contains(spec, u, tol=DEFAULT_TOL):
    """Membership test: distance budget and zero sum, both up to ``tol``."""
    u = _check_dim(spec, u)
    return bool(spec.distance_sum(u) <= spec.beta + tol and abs(u.sum()) <= tol)


def project_to_hyperplane(u):
    u = np.asarray(u, dtype=float)
    return u - u.mean(axis=-1, keepdims=True)


def hyperplane_center(spec, max_iter=5000, tol=1e-12):
    """Point of the zero-sum hyperplane minimizing the summed focal distance.

    Returns ``(u, value)``. For one focus the answer is the Euclidean
    projection of the focus, which is optimal for every p by symmetry. For
    several foci the candidates (projected foci, projected mean) seed an
    ADMM run on ``min sum_n ||z_n|| s.t. z_n = u - u_n, 1^T u = 0``.
    """
    foci = spec.foci
    p = spec.p
    if spec.n_foci == 1:
        u = project_to_hyperplane(foci[0])
        return u, spec.distance_sum(u)
    candidates = [project_to_hyperplane(f) for f in foci]
    candidates.append(project_to_hyperplane(foci.mean(axis=0)))
    vals = [spec.distance_sum(c) for c in candidates]
    best = int(np.argmin(vals))
    u = candidates[best].copy()
    best_u, best_val = u.copy(), vals[best]
    n = spec.n_foci
    rho = 1.0 / max(spec.beta, 1e-3, float(np.max(np.abs(foci))))
    z = u[None, :] - foci
    y = np.zeros_like(z)
    for k in range(max_iter):
        u = project_to_hyperplane((foci + z - y).mean(axis=0))
        a = u[None, :] - foci + y
        z_new = np.array([prox_norm(a[i], p, 1.0 / rho) for i in range(n)])
        r = u[None, :] - foci - z_new
        y += r
        s = rho * np.linalg.norm(z_new - z)
        z = z_new
        val = spec.distance_sum(u)
        if val < best_val:
            best_u, best_val = u.copy(), val
        if np.linalg.norm(r) < tol and s < tol:
            break
    return best_u, float(best_val)


def feasible(spec, tol=DEFAULT_TOL):
    """True iff the set meets the zero-sum hyperplane."""
    _, val = hyperplane_center(spec)
    return bool(val <= spec.beta + tol)


def to_quadratic_form(u1, u2, beta):
    """Euclidean two-focus ellipse as a quadratic form.

    ``||u-u1||_2 + ||u-u2||_2 <= beta`` is equivalent to
    ``(u-c)^T A (u-c) <= 1`` with ``c = (u1+u2)/2`` and
    ``A = 4/(b^2-D^2) I - 4/(b^2 (b^2-D^2)) dd^T``, ``d = u2-u1``, ``D = ||d||``.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if u1.shape != u2.shape or u1.ndim != 1:
        raise InputError("foci must be vectors of equal length")
    beta = float(beta)
    delta = u2 - u1
    gap = beta * beta - float(delta @ delta)
    if beta <= 0 or gap <= 0:
        raise DegenerateEllipseError(
            f"radius {beta} must exceed the focal distance {math.sqrt(delta @ delta)}"
        )
    A = (4.0 / gap) * np.eye(u1.size) - (4.0 / (beta * beta * gap)) * np.outer(delta, delta)
    return QuadraticForm(A=A, center=0.5 * (u1 + u2))


def perturbed_kernel_valid(nominal_row, u, tol=DEFAULT_TOL):
    """True iff ``nominal_row + u`` is a probability vector up to ``tol``."""
    row = np.asarray(nominal_row, dtype=float) + np.asarray(u, dtype=float)
    return bool(np.all(row >= -tol) and abs(row.sum() - 1.0) <= tol)


def split_ball_sum(z, x, y, r, s):
    """Write ``z`` in ``B_p(x + y, r + s)`` as ``a + b`` with ``a`` in ``B_p(x, r)``, ``b`` in ``B_p(y, s)``.

    The offset ``z - x - y`` is shared in proportion to the radii, so
    ``||a - x|| = r / (r + s) * ||z - x - y|| <= r`` for every ``p``.
    """
    z, x, y = (np.asarray(t, dtype=float) for t in (z, x, y))
    if r < 0 or s < 0:
        raise InputError("radii must be nonnegative")
    if r + s == 0:
        return x.copy(), y.copy()
    d = z - x - y
    return x + (r / (r + s)) * d, y + (s / (r + s)) * d

"""Tabular robust dynamic programming under (s,a)-rectangular elliptic sets.

The robust Bellman operator is the nominal one plus a worst-case shift:

    T v(s) = sum_a pi(a|s) [ r(s,a) + gamma min_{u in U_sa} u^T v
                             + gamma sum_s' P0(s'|s,a) v(s') ]
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InfeasibleError, InputError, KernelValidityError
from .solver import solve
from .uncertainty import EllipticSetSpec, NormExponent, perturbed_kernel_valid

ROW_TOL = 1e-10


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


@dataclass(frozen=True)
class TabularMDP:
    """Nominal kernel ``P0[s, a, s']``, reward ``r[s, a]`` in [0, 1], discount."""

    kernel: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.array(self.kernel, dtype=float)
        r = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InputError(f"kernel must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise InputError(f"reward shape {r.shape} does not match kernel {P.shape[:2]}")
        if np.any(P < -ROW_TOL) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise InputError("every kernel row must be a probability vector")
        if np.any(r < 0) or np.any(r > 1):
            raise InputError("rewards must lie in [0, 1]")
        if not 0.0 < float(self.gamma) < 1.0:
            raise InputError(f"gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "kernel", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self):
        return self.kernel.shape[0]

    @property
    def n_actions(self):
        return self.kernel.shape[1]

    def to_dict(self):
        return {"kernel": self.kernel.tolist(), "reward": self.reward.tolist(), "gamma": self.gamma}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["kernel"], data["reward"], data["gamma"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed MDP object: {exc}") from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(_load_json(path))

    @classmethod
    def random(cls, rng, n_states, n_actions, gamma=0.9, floor=0.1):
        """Random MDP whose kernel entries are at least ``floor / S``."""
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        P = (1 - floor) * P + floor / n_states
        r = rng.uniform(size=(n_states, n_actions))
        return cls(P, r, gamma)


@dataclass(frozen=True)
class Policy:
    """Stochastic policy ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        pi = np.array(self.probs, dtype=float)
        if pi.ndim != 2 or np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > ROW_TOL):
            raise InputError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", pi)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        pi = np.zeros((actions.size, n_actions))
        pi[np.arange(actions.size), actions] = 1.0
        return cls(pi)

    def to_dict(self):
        return {"kind": "table", "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data):
        if "probs" in data:
            return cls(data["probs"])
        if data.get("kind") == "tabular_softmax":
            logits = np.asarray(data["logits"], dtype=float)
            z = np.exp(logits - logits.max(axis=1, keepdims=True))
            return cls(z / z.sum(axis=1, keepdims=True))
        raise InputError("policy object needs 'probs' or a tabular_softmax parameterization")

    @classmethod
    def load(cls, path):
        return cls.from_dict(_load_json(path))


@dataclass
class UncertaintyModel:
    """Per-(s,a) elliptic sets; a pair without an entry is unperturbed."""

    n_states: int
    n_actions: int
    specs: dict = field(default_factory=dict)

    def __post_init__(self):
        for (s, a), spec in self.specs.items():
            if not (0 <= s < self.n_states and 0 <= a < self.n_actions):
                raise InputError(f"state-action pair ({s},{a}) out of range")
            if spec.dim != self.n_states:
                raise InputError(f"set for ({s},{a}) has dim {spec.dim}, expected {self.n_states}")

    @classmethod
    def broadcast(cls, n_states, n_actions, beta, p=2.0, foci=None):
        """Same set for every pair; default single focus at the origin."""
        foci = np.zeros((1, n_states)) if foci is None else np.asarray(foci, dtype=float)
        spec = EllipticSetSpec(foci, beta, NormExponent.parse(p))
        specs = {(s, a): spec for s in range(n_states) for a in range(n_actions)}
        return cls(n_states, n_actions, specs)

    def get(self, s, a):
        return self.specs.get((s, a))

    def is_unperturbed(self):
        return all(sp.beta == 0.0 and not sp.foci.any() for sp in self.specs.values())

    def scaled(self, beta):
        """Copy with every radius replaced by ``beta``."""
        specs = {k: sp.with_beta(beta) for k, sp in self.specs.items()}
        return UncertaintyModel(self.n_states, self.n_actions, specs)

    def to_dict(self):
        return {f"{s},{a}": sp.to_dict() for (s, a), sp in sorted(self.specs.items())}

    @classmethod
    def from_dict(cls, data, n_states, n_actions):
        if not isinstance(data, dict):
            raise InputError("uncertainty file must hold a JSON object")
        specs = {}
        default = data.get("default")
        if default is not None:
            sp = EllipticSetSpec.from_dict(default)
            specs = {(s, a): sp for s in range(n_states) for a in range(n_actions)}
        for key, val in data.items():
            if key == "default":
                continue
            try:
                s, a = (int(x) for x in key.split(","))
            except ValueError as exc:
                raise InputError(f"uncertainty key {key!r} is not 's,a'") from exc
            specs[(s, a)] = EllipticSetSpec.from_dict(val)
        return cls(n_states, n_actions, specs)

    @classmethod
    def load(cls, path, n_states, n_actions):
        return cls.from_dict(_load_json(path), n_states, n_actions)


def _check_shapes(mdp, U, pi=None, v=None):
    if (U.n_states, U.n_actions) != (mdp.n_states, mdp.n_actions):
        raise InputError("uncertainty model does not match the MDP dimensions")
    if pi is not None and pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InputError("policy does not match the MDP dimensions")
    if v is not None and np.shape(v) != (mdp.n_states,):
        raise InputError("value vector does not match the number of states")


def _inner(spec, v, s, a):
    if spec is None or (spec.beta == 0.0 and not spec.foci.any()):
        return None
    try:
        return solve(v, spec)
    except InfeasibleError as exc:
        raise InfeasibleError(f"uncertainty set for (s={s}, a={a}) is infeasible: {exc}") from exc


def worst_case_shifts(mdp, U, v):
    """``min_u u^T v`` for every pair, plus the minimizers (None if unperturbed)."""
    v = np.asarray(v, dtype=float)
    shift = np.zeros((mdp.n_states, mdp.n_actions))
    sols = {}
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            sol = _inner(U.get(s, a), v, s, a)
            sols[(s, a)] = sol
            if sol is not None:
                shift[s, a] = sol.objective
    return shift, sols


def robust_q(mdp, U, v):
    v = np.asarray(v, dtype=float)
    _check_shapes(mdp, U, v=v)
    shift, _ = worst_case_shifts(mdp, U, v)
    return mdp.reward + mdp.gamma * shift + mdp.gamma * (mdp.kernel @ v)


def robust_bellman_apply(mdp, U, pi, v):
    """One application of the robust Bellman operator for policy ``pi``."""
    _check_shapes(mdp, U, pi, v)
    return np.sum(pi.probs * robust_q(mdp, U, v), axis=1)


def bellman_apply(mdp, pi, v, kernel=None):
    """Standard Bellman operator, optionally under a replacement kernel."""
    P = mdp.kernel if kernel is None else kernel
    q = mdp.reward + mdp.gamma * (P @ np.asarray(v, dtype=float))
    return np.sum(pi.probs * q, axis=1)


def policy_evaluation_linear(mdp, pi, kernel=None):
    """Exact non-robust evaluation: solve (I - gamma P_pi) V = r_pi."""
    P = mdp.kernel if kernel is None else kernel
    P_pi = np.einsum("sa,sat->st", pi.probs, P)
    r_pi = np.sum(pi.probs * mdp.reward, axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


@dataclass
class VIResult:
    value: np.ndarray
    iterations: int
    residuals: list
    error_bound: float


def robust_policy_evaluation_vi(mdp, U, pi, tol=1e-8, max_iter=10000):
    """Fixed-point iteration of the robust Bellman operator from v = 0.

    Stops when ``||v_{k+1} - v_k||_inf <= tol (1 - gamma) / gamma``, which
    by the contraction property certifies ``||v - V||_inf <= tol``.
    """
    _check_shapes(mdp, U, pi)
    g = mdp.gamma
    v = np.zeros(mdp.n_states)
    threshold = tol * (1.0 - g) / g
    residuals = []
    for k in range(1, max_iter + 1):
        v_new = robust_bellman_apply(mdp, U, pi, v)
        res = float(np.max(np.abs(v_new - v)))
        residuals.append(res)
        v = v_new
        if res <= threshold:
            return VIResult(v, k, residuals, g / (1.0 - g) * res)
    raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps "
                           f"(last residual {residuals[-1]:.3g})", best=v, gap=residuals[-1])


def worst_case_kernel(mdp, U, pi, v, tol=1e-9):
    """``P+ = P0 + u*`` with u* the inner minimizer at ``v`` for each pair.

    ``pi`` is accepted for interface symmetry; the kernel does not depend
    on it. Rows that leave the simplex raise :class:`KernelValidityError`.
    """
    _check_shapes(mdp, U, pi, v)
    _, sols = worst_case_shifts(mdp, U, v)
    P = mdp.kernel.copy()
    for (s, a), sol in sols.items():
        if sol is None:
            continue
        row = mdp.kernel[s, a]
        if not perturbed_kernel_valid(row, sol.u_star, tol):
            bad = int(np.argmin(row + sol.u_star))
            raise KernelValidityError(
                f"perturbed row for (s={s}, a={a}) is not a distribution: "
                f"entry {bad} = {row[bad] + sol.u_star[bad]:.6g}"
            )
        P[s, a] = row + sol.u_star
    return P


def robust_q_and_advantage(mdp, U, pi, V):
    """Robust Q(s,a) at ``V`` and advantage ``A = Q - V``."""
    _check_shapes(mdp, U, pi, V)
    Q = robust_q(mdp, U, V)
    return Q, Q - np.asarray(V, dtype=float)[:, None]

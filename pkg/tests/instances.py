"""Seeded random problem generators shared by the test modules."""

import math

import numpy as np

from ellipticrl.robust_dp import Policy, TabularMDP
from ellipticrl.uncertainty import EllipticSetSpec, hyperplane_center

NORMS = (1.0, 2.0, math.inf)


def random_set(rng, d=None, n_foci=None, p=None, on_plane=True, margin=(0.01, 0.2)):
    """Feasible set whose radius exceeds the minimal focal sum by ``margin``."""
    d = int(rng.integers(3, 7)) if d is None else d
    n_foci = int(rng.choice([1, 2, 3])) if n_foci is None else n_foci
    p = NORMS[int(rng.integers(3))] if p is None else p
    F = rng.normal(scale=0.05, size=(n_foci, d))
    if on_plane:
        F -= F.mean(axis=1, keepdims=True)
    _, floor = hyperplane_center(EllipticSetSpec(F, 1.0, p))
    return EllipticSetSpec(F, floor + rng.uniform(*margin), p)


def random_instances(seed, count=200, on_plane=True):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        spec = random_set(rng, on_plane=on_plane)
        out.append((rng.normal(size=spec.dim), spec))
    return out


def random_mdp(rng, n_states=4, n_actions=2, gamma=0.9, floor=0.5):
    mdp = TabularMDP.random(rng, n_states, n_actions, gamma, floor=floor)
    pi = Policy(rng.dirichlet(np.ones(n_actions), size=n_states))
    return mdp, pi


def risky_safe_mdp():
    """State 0: safe self-loop (r=0.5) or risky move (r=0.6) that may fall into state 1."""
    P = np.zeros((2, 2, 2))
    P[0, 0] = [1.0, 0.0]
    P[0, 1] = [0.9, 0.1]
    P[1, :] = [0.5, 0.5]
    r = np.array([[0.5, 0.6], [0.0, 0.0]])
    return TabularMDP(P, r, 0.9)

"""Sample-based robust policy evaluation and a small robust actor-critic.

The critic follows the robust TD(0) update

    v(s) <- v(s) + eta * gamma * v^T u* + eta * (r + gamma v(s') - v(s))

where u* minimizes ``u^T v`` over the uncertainty set of the sampled pair.
Samples always come from the nominal kernel.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, EllipticRLError, InputError, TrainingError
from .robust_dp import Policy, UncertaintyModel, _inner

SCHEDULES = ("sqrt", "constant", "inv_sqrt")
LOG_COLUMNS = ("episode", "mean_reward", "robust_value_estimate", "actor_entropy")
GRAD_CLIP = 0.5


@dataclass
class TDConfig:
    """Settings for :func:`robust_policy_evaluation_td`.

    The step size at iteration ``k`` (starting at 0) is ``step_size`` for
    ``schedule="constant"``, ``step_size / sqrt(1 + k / step_decay)`` for
    ``"sqrt"`` and ``step_size / sqrt(k + 1)`` for ``"inv_sqrt"``.
    """

    total_steps: int = 100_000
    gamma: float = None
    seed: int = 0
    step_size: float = 0.5
    schedule: str = "sqrt"
    step_decay: float = 1000.0
    stride: int = 1
    clip: bool = True
    trace_every: int = 1000

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise InputError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not self.step_size > 0 or not self.step_decay > 0:
            raise InputError("step sizes must be positive")
        if self.total_steps < 0 or self.stride < 1 or self.trace_every < 1:
            raise InputError("total_steps >= 0, stride >= 1 and trace_every >= 1 required")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise InputError(f"gamma must lie in [0, 1), got {self.gamma}")

    def eta(self, k):
        if self.schedule == "constant":
            return self.step_size
        if self.schedule == "sqrt":
            return self.step_size / math.sqrt(1.0 + k / self.step_decay)
        return self.step_size / math.sqrt(k + 1.0)


def robust_td_step(v, sample, u_star, eta, gamma, clip=None):
    """Return a copy of ``v`` after one robust TD(0) update at ``sample``.

    Parameters
    ----------
    v : array_like
        Current value estimate.
    sample : tuple
        ``(s, a, r, s_next)``; the action is not used by the update.
    u_star : array_like or None
        Inner minimizer at ``v`` for the pair ``(s, a)``; None means no
        perturbation.
    eta, gamma : float
        Step size and discount.
    clip : tuple of float, optional
        ``(low, high)`` envelope applied to the updated entry.
    """
    s, _, r, s_next = sample
    out = np.array(v, dtype=float)
    shift = 0.0 if u_star is None else gamma * float(out @ np.asarray(u_star, dtype=float))
    new = out[s] + eta * shift + eta * (r + gamma * out[s_next] - out[s])
    if clip is not None:
        new = min(max(new, clip[0]), clip[1])
    out[s] = new
    return out


@dataclass
class TDResult:
    value: np.ndarray
    steps: int
    trace: list = field(default_factory=list)


def _cumulative(rows):
    c = np.cumsum(rows, axis=-1)
    c[..., -1] = 1.0
    return c


def _reraise_at_step(exc, k):
    msg = f"solver failed at TD step {k}: {exc}"
    if isinstance(exc, ConvergenceError):
        raise type(exc)(msg, best=exc.best, gap=exc.gap) from exc
    raise type(exc)(msg) from exc


def robust_policy_evaluation_td(mdp, pi, U, cfg=None):
    """Robust TD(0) along one trajectory of the nominal chain.

    The trajectory starts in a uniformly drawn state. The inner minimizer
    of each pair is recomputed when it is older than ``cfg.stride`` steps
    (every step by default). ``trace`` holds ``(step, eta, value)`` every
    ``cfg.trace_every`` steps.
    """
    cfg = cfg or TDConfig()
    if U is None:
        U = UncertaintyModel.broadcast(mdp.n_states, mdp.n_actions, 0.0)
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"policy shape {pi.probs.shape} does not match MDP")
    gamma = mdp.gamma if cfg.gamma is None else cfg.gamma
    envelope = (0.0, 1.0 / (1.0 - gamma)) if cfg.clip else None
    rng = np.random.default_rng(cfg.seed)
    pi_c = _cumulative(pi.probs)
    P_c = _cumulative(mdp.kernel)
    S, A = mdp.n_states, mdp.n_actions

    v = np.zeros(S)
    cache = {}
    age = np.full((S, A), cfg.stride, dtype=np.int64)
    s = int(rng.integers(S))
    draws = rng.random((cfg.total_steps, 2))
    trace = [(0, cfg.eta(0), v.copy())]
    for k in range(cfg.total_steps):
        a = int(np.searchsorted(pi_c[s], draws[k, 0], side="right"))
        s_next = int(np.searchsorted(P_c[s, a], draws[k, 1], side="right"))
        if age[s, a] >= cfg.stride:
            try:
                sol = _inner(U.get(s, a), v, s, a)
            except EllipticRLError as exc:
                _reraise_at_step(exc, k)
            cache[(s, a)] = None if sol is None else sol.u_star
            age[s, a] = 0
        age += 1
        eta = cfg.eta(k)
        v = robust_td_step(v, (s, a, mdp.reward[s, a], s_next), cache[(s, a)], eta, gamma, envelope)
        s = s_next
        if (k + 1) % cfg.trace_every == 0:
            trace.append((k + 1, eta, v.copy()))
    return TDResult(v, cfg.total_steps, trace)


def expected_td_update(mdp, pi, U, v, n_samples, rng):
    """Sampled robust TD increments ``(target - v(s))`` at a fixed ``v``.

    States are drawn uniformly, then ``a ~ pi`` and ``s' ~ P0``. Returns
    an ``(n_samples,)`` array of increments and the sampled states.
    """
    v = np.asarray(v, dtype=float)
    S = mdp.n_states
    gamma = mdp.gamma
    shift = np.zeros((S, mdp.n_actions))
    for s in range(S):
        for a in range(mdp.n_actions):
            sol = _inner(U.get(s, a), v, s, a)
            shift[s, a] = 0.0 if sol is None else sol.objective
    states = rng.integers(S, size=n_samples)
    pi_c = _cumulative(pi.probs)
    P_c = _cumulative(mdp.kernel)
    out = np.empty(n_samples)
    for i, s in enumerate(states):
        a = int(np.searchsorted(pi_c[s], rng.random(), side="right"))
        s2 = int(np.searchsorted(P_c[s, a], rng.random(), side="right"))
        out[i] = gamma * shift[s, a] + mdp.reward[s, a] + gamma * v[s2] - v[s]
    return out, states


# ---------------------------------------------------------------------------
# actor-critic


@dataclass
class ActorCriticConfig:
    """Settings for :func:`robust_actor_critic`.

    ``clip_epsilon = 0`` disables PPO ratio clipping. ``early_stop_patience``
    stops training once the episode mean reward has not improved for that
    many episodes (None disables it).
    """

    episodes: int = 200
    steps_per_episode: int = 64
    actor_lr: float = 0.1
    critic_lr: float = 0.1
    clip_epsilon: float = 0.2
    update_epochs: int = 4
    batch_size: int = 32
    seed: int = 0
    normalize_advantages: bool = True
    early_stop_patience: int = None

    def __post_init__(self):
        if self.clip_epsilon < 0:
            raise InputError("clip_epsilon must be nonnegative")
        if min(self.episodes, self.steps_per_episode, self.update_epochs, self.batch_size) < 1:
            raise InputError("episodes, steps_per_episode, update_epochs and batch_size must be >= 1")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise InputError("learning rates must be positive")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise InputError("early_stop_patience must be >= 1")

    def to_dict(self):
        return dict(self.__dict__)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def orthogonal_init(rng, rows, cols, gain=0.01):
    """Rows with orthonormal (or columns, if fewer) directions times ``gain``."""
    M = rng.normal(size=(max(rows, cols), min(rows, cols)))
    Q, R = np.linalg.qr(M)
    Q = Q * np.sign(np.diag(R))
    W = Q if rows >= cols else Q.T
    return gain * W[:rows, :cols]


class TabularSoftmaxPolicy:
    """Softmax over a logit table ``logits[s, a]``."""

    kind = "tabular_softmax"

    def __init__(self, logits):
        self.logits = np.array(logits, dtype=float)

    @property
    def params(self):
        return (self.logits,)

    def probs(self, obs):
        return _softmax(self.logits[obs])

    def grad_log(self, obs, a, probs):
        g = -probs.copy()
        g[a] += 1.0
        return obs, g

    def apply(self, grads, scale):
        for obs, g in grads:
            self.logits[obs] += scale * g

    def as_table(self):
        return Policy(_softmax(self.logits))

    def to_dict(self):
        return {"kind": self.kind, "logits": self.logits.tolist()}


class LinearSoftmaxPolicy:
    """Softmax over ``W phi + b`` with ``phi`` the environment features."""

    kind = "linear_softmax"

    def __init__(self, weights, bias, actions, featurizer=None):
        self.weights = np.array(weights, dtype=float)
        self.bias = np.array(bias, dtype=float)
        self.actions = [float(x) for x in actions]
        self.featurizer = featurizer

    @property
    def params(self):
        return (self.weights, self.bias)

    def probs(self, obs):
        return _softmax(self.weights @ self.featurizer(obs) + self.bias)

    def probs_from_features(self, phi):
        return _softmax(self.weights @ phi + self.bias)

    def grad_log(self, obs, a, probs):
        g = -probs.copy()
        g[a] += 1.0
        return obs, g

    def apply(self, grads, scale):
        for obs, g in grads:
            phi = self.featurizer(obs)
            self.weights += scale * np.outer(g, phi)
            self.bias += scale * g

    def to_dict(self):
        return {"kind": self.kind, "weights": self.weights.tolist(),
                "bias": self.bias.tolist(), "actions": self.actions}


def policy_from_dict(data, featurizer=None):
    """Rebuild a trained policy from its JSON object."""
    kind = data.get("kind") if isinstance(data, dict) else None
    if kind == "tabular_softmax":
        return TabularSoftmaxPolicy(data["logits"])
    if kind == "linear_softmax":
        return LinearSoftmaxPolicy(data["weights"], data["bias"], data["actions"], featurizer)
    raise InputError(f"unknown policy kind {kind!r}")


class TabularCritic:
    def __init__(self, n_states, envelope=None):
        self.table = np.zeros(n_states)
        self.envelope = envelope

    @property
    def params(self):
        return (self.table,)

    def value(self, obs):
        return self.table[obs]

    def update(self, obs, shift, td, lr):
        new = self.table[obs] + lr * shift + lr * td
        if self.envelope is not None:
            new = min(max(new, self.envelope[0]), self.envelope[1])
        self.table[obs] = new


class LinearCritic:
    def __init__(self, featurizer, dim):
        self.featurizer = featurizer
        self.theta = np.zeros(dim)
        self.bias = 0.0

    @property
    def params(self):
        return (self.theta, np.array([self.bias]))

    def value(self, obs):
        return float(self.theta @ self.featurizer(obs)) + self.bias

    def value_features(self, phi):
        return float(self.theta @ phi) + self.bias

    def update(self, obs, shift, td, lr):
        phi = self.featurizer(obs)
        delta = shift + td
        g = delta * phi
        n = math.sqrt(float(g @ g) + delta * delta)
        if n > GRAD_CLIP:
            g = g * (GRAD_CLIP / n)
            delta = delta * (GRAD_CLIP / n)
        self.theta += lr * g
        self.bias += lr * delta


class TabularEnv:
    """Episodic wrapper around a :class:`TabularMDP` for the actor-critic.

    ``gamma`` overrides the MDP discount (``0`` is allowed here).
    """

    kind = "tabular"

    def __init__(self, mdp, U=None, gamma=None, start_state=None):
        self.mdp = mdp
        self.U = U
        self.gamma = mdp.gamma if gamma is None else float(gamma)
        if not 0.0 <= self.gamma < 1.0:
            raise InputError(f"gamma must lie in [0, 1), got {self.gamma}")
        self.start_state = start_state
        self._P_c = _cumulative(mdp.kernel)

    @property
    def n_actions(self):
        return self.mdp.n_actions

    def make_actor(self, rng):
        return TabularSoftmaxPolicy(np.zeros((self.mdp.n_states, self.mdp.n_actions)))

    def make_critic(self):
        return TabularCritic(self.mdp.n_states, (0.0, 1.0 / (1.0 - self.gamma)))

    def reset(self, rng):
        if self.start_state is not None:
            return int(self.start_state)
        return int(rng.integers(self.mdp.n_states))

    def step(self, s, a, rng):
        s2 = int(np.searchsorted(self._P_c[s, a], rng.random(), side="right"))
        return s2, float(self.mdp.reward[s, a]), False

    def robust_shift(self, critic, s, a):
        """``gamma * min_u u^T v`` at the critic's table (0.0 if unperturbed)."""
        if self.U is None:
            return 0.0
        sol = _inner(self.U.get(s, a), critic.table, s, a)
        return 0.0 if sol is None else self.gamma * sol.objective


@dataclass
class TrainingResult:
    policy: object
    critic: object
    log: list


def _finite(params):
    return all(np.all(np.isfinite(p)) for p in params)


def _ppo_update(actor, batch, adv, cfg, rng):
    obs = batch["obs"]
    acts = batch["actions"]
    old = batch["old_prob"]
    n = len(obs)
    eps = cfg.clip_epsilon
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = []
            for i in idx:
                p = actor.probs(obs[i])
                ratio = p[acts[i]] / old[i]
                A = adv[i]
                if eps > 0 and ((A > 0 and ratio > 1 + eps) or (A < 0 and ratio < 1 - eps)):
                    continue
                o, g = actor.grad_log(obs[i], acts[i], p)
                grads.append((o, (ratio * A / len(idx)) * g))
            if not grads:
                continue
            norm = _grad_norm(actor, grads)
            scale = cfg.actor_lr * (GRAD_CLIP / norm if norm > GRAD_CLIP else 1.0)
            actor.apply(grads, scale)


def _grad_norm(actor, grads):
    if isinstance(actor, TabularSoftmaxPolicy):
        acc = {}
        for o, g in grads:
            acc[o] = acc.get(o, 0.0) + g
        return math.sqrt(sum(float(g @ g) for g in acc.values()))
    W = np.zeros_like(actor.weights)
    b = np.zeros_like(actor.bias)
    for o, g in grads:
        W += np.outer(g, actor.featurizer(o))
        b += g
    return math.sqrt(float((W * W).sum() + b @ b))


def robust_actor_critic(env, cfg=None):
    """Train a softmax actor with a robust TD critic (PPO-style updates).

    Each episode collects ``cfg.steps_per_episode`` transitions under the
    current policy, applies robust TD updates to the critic along them,
    takes the one-step robust TD errors as advantages and runs clipped
    policy-gradient ascent. The environment supplies the worst-case shift
    through ``env.robust_shift(critic, obs, action)``; it is exactly 0.0
    when the uncertainty radius is zero, so a zero radius reproduces
    non-robust training bit for bit.

    Returns
    -------
    TrainingResult
        Final actor, critic and the per-episode log rows.

    Raises
    ------
    TrainingError
        If any parameter becomes non-finite; ``exc.log`` keeps the rows
        written so far.
    """
    cfg = cfg or ActorCriticConfig()
    rng = np.random.default_rng(cfg.seed)
    actor = env.make_actor(rng)
    critic = env.make_critic()
    gamma = env.gamma
    log = []
    best, stale = -math.inf, 0
    for ep in range(cfg.episodes):
        obs = env.reset(rng)
        v_start_obs = obs
        batch = {"obs": [], "actions": [], "old_prob": []}
        adv, rewards, ents = [], [], []
        for _ in range(cfg.steps_per_episode):
            p = actor.probs(obs)
            a = int(np.searchsorted(np.cumsum(p)[:-1], rng.random(), side="right"))
            ents.append(_entropy(p))
            shift = env.robust_shift(critic, obs, a)
            nxt, r, done = env.step(obs, a, rng)
            boot = 0.0 if done else gamma * critic.value(nxt)
            td = r + boot - critic.value(obs)
            critic.update(obs, shift, td, cfg.critic_lr)
            batch["obs"].append(obs)
            batch["actions"].append(a)
            batch["old_prob"].append(p[a])
            adv.append(td + shift)
            rewards.append(r)
            if done:
                break
            obs = nxt
        adv = np.array(adv)
        if cfg.normalize_advantages and adv.size > 1:
            sd = adv.std()
            adv = (adv - adv.mean()) / sd if sd > 0 else adv - adv.mean()
        _ppo_update(actor, batch, adv, cfg, rng)
        row = {
            "episode": ep,
            "mean_reward": float(np.mean(rewards)),
            "robust_value_estimate": float(critic.value(v_start_obs)),
            "actor_entropy": float(np.mean(ents)),
        }
        log.append(row)
        if not (_finite(actor.params) and _finite(critic.params)):
            err = TrainingError(f"non-finite parameters after episode {ep}")
            err.log = log
            raise err
        if cfg.early_stop_patience is not None:
            if row["mean_reward"] > best:
                best, stale = row["mean_reward"], 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    return TrainingResult(actor, critic, log)


def write_training_log(log, path):
    """Write log rows as CSV with ``repr`` floats (byte-stable across runs)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([row["episode"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


def write_policy(policy, path, extra=None):
    data = policy.to_dict()
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")

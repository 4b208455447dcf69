"""Train-then-backtest protocol for impact robustness on synthetic data.

Agents train on nominal replay of one synthetic series and are evaluated
on a fresh series from a different seed, with and without order-book
impact, at several position scales.
"""

from dataclasses import dataclass, field

import numpy as np

from .market import (EnvConfig, MarketTrainingEnv, PolicyActor, backtest_pair,
                     synthetic_market)
from .robust_td import ActorCriticConfig, robust_actor_critic

EVAL_SEED_OFFSET = 10_000


@dataclass
class StudyConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    scales: tuple = (1.0, 10.0, 100.0)
    beta: float = 0.1
    p: float = 1.0
    train_bars: int = 1500
    eval_bars: int = 400
    impact_coeff: float = 1.0
    gamma: float = 0.9
    episode_len: int = 64
    env: EnvConfig = field(default_factory=EnvConfig)
    trainer: ActorCriticConfig = field(default_factory=lambda: ActorCriticConfig(
        episodes=150, steps_per_episode=64, actor_lr=0.05, critic_lr=0.01))


def train_market_agent(data, env_cfg, robust, beta, study, seed):
    env = MarketTrainingEnv(data, env_cfg, robust=robust, beta=beta, p=study.p,
                            gamma=study.gamma, episode_len=study.episode_len)
    cfg = ActorCriticConfig(**{**study.trainer.to_dict(), "seed": seed})
    return robust_actor_critic(env, cfg)


def impact_study(study=None, agents=("none", "ball", "ellipse")):
    """Per-seed gap and impact Sharpe for each agent and scale.

    Returns
    -------
    dict
        ``results[agent][scale]`` is a list (one entry per seed) of dicts
        with ``gap``, ``sharpe`` (under impact) and ``final_value``.
    """
    study = study or StudyConfig()
    results = {a: {s: [] for s in study.scales} for a in agents}
    for seed in study.seeds:
        train, _ = synthetic_market(seed, study.train_bars, study.impact_coeff)
        test, books = synthetic_market(seed + EVAL_SEED_OFFSET, study.eval_bars, study.impact_coeff)
        for agent in agents:
            beta = 0.0 if agent == "none" else study.beta
            trained = train_market_agent(train, study.env, agent, beta, study, seed)
            for scale in study.scales:
                cfg = study.env.scaled(scale)
                on, _ = backtest_pair(lambda: PolicyActor(trained.policy, cfg), test, cfg, books)
                results[agent][scale].append({
                    "gap": on.metrics.relative_gap,
                    "sharpe": on.metrics.sharpe,
                    "final_value": on.metrics.final_value,
                    "turnover": float(np.abs(np.diff(on.positions)).sum() / cfg.max_shares),
                })
    return results


def median_of(results, agent, scale, key):
    return float(np.median([r[key] for r in results[agent][scale]]))

import csv
import json
import math

import numpy as np
import pytest

from ellipticrl.errors import InputError, TrainingError
from ellipticrl.robust_dp import (Policy, TabularMDP, UncertaintyModel, policy_evaluation_linear,
                                  robust_policy_evaluation_vi)
from ellipticrl.robust_td import (LOG_COLUMNS, ActorCriticConfig, TabularEnv, TDConfig,
                                  expected_td_update, policy_from_dict, robust_actor_critic,
                                  robust_policy_evaluation_td, robust_td_step,
                                  write_policy, write_training_log)
from ellipticrl.uncertainty import EllipticSetSpec

from instances import random_mdp, risky_safe_mdp


class TestStep:
    def test_known_update(self):
        v = robust_td_step([1.0, 0.0], (0, 0, 0.5, 1), [-0.1, 0.1], 0.1, 0.9)
        assert v[0] == pytest.approx(0.941, abs=1e-12)
        assert v[1] == 0.0

    def test_no_perturbation_is_classical(self):
        v = np.array([0.3, 1.2, 2.0])
        got = robust_td_step(v, (1, 0, 0.4, 2), None, 0.2, 0.9)
        assert got[1] == v[1] + 0.2 * (0.4 + 0.9 * 2.0 - 1.2)
        np.testing.assert_array_equal(robust_td_step(v, (1, 0, 0.4, 2), np.zeros(3), 0.2, 0.9), got)

    def test_zero_discount(self):
        got = robust_td_step([2.0, 5.0], (0, 0, 1.0, 1), [-0.1, 0.1], 0.25, 0.0)
        assert got[0] == 2.0 + 0.25 * (1.0 - 2.0)

    def test_clip(self):
        got = robust_td_step([0.0, 0.0], (0, 0, 0.0, 1), [0.1, -0.1], 1.0, 0.9, clip=(0.0, 10.0))
        assert got[0] == 0.0


class TestConfig:
    def test_schedules(self):
        assert TDConfig().eta(0) == 0.5
        assert TDConfig().eta(3000) == pytest.approx(0.25)
        assert TDConfig(schedule="constant", step_size=0.1).eta(10**6) == 0.1
        assert TDConfig(schedule="inv_sqrt", step_size=1.0).eta(3) == 0.5

    @pytest.mark.parametrize("kw", [{"schedule": "exp"}, {"stride": 0}, {"gamma": 1.0}, {"step_size": 0}])
    def test_rejects(self, kw):
        with pytest.raises(InputError):
            TDConfig(**kw)


class TestEvaluation:
    def test_single_state(self):
        mdp = TabularMDP(np.ones((1, 1, 1)), [[0.5]], 0.8)
        U = UncertaintyModel.broadcast(1, 1, 0.5)
        res = robust_policy_evaluation_td(mdp, Policy.uniform(1, 1), U, TDConfig(total_steps=20_000))
        assert res.value[0] == pytest.approx(2.5, abs=0.01)

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_radius_matches_linear_solve(self, seed):
        mdp, pi = random_mdp(np.random.default_rng(seed), n_states=5)
        U = UncertaintyModel.broadcast(5, 2, 0.0)
        cfg = TDConfig(total_steps=100_000, seed=seed, schedule="inv_sqrt", step_size=1.0)
        res = robust_policy_evaluation_td(mdp, pi, U, cfg)
        assert np.abs(res.value - policy_evaluation_linear(mdp, pi)).max() < 0.05

    def test_trace_and_determinism(self, rng):
        mdp, pi = random_mdp(rng)
        U = UncertaintyModel.broadcast(4, 2, 0.05)
        cfg = TDConfig(total_steps=3000, trace_every=1000, seed=3)
        a = robust_policy_evaluation_td(mdp, pi, U, cfg)
        b = robust_policy_evaluation_td(mdp, pi, U, cfg)
        np.testing.assert_array_equal(a.value, b.value)
        assert [t[0] for t in a.trace] == [0, 1000, 2000, 3000]

    def test_stride_stays_close(self, rng):
        mdp, pi = random_mdp(rng)
        U = UncertaintyModel.broadcast(4, 2, 0.05)
        ref = robust_policy_evaluation_vi(mdp, U, pi).value
        res = robust_policy_evaluation_td(mdp, pi, U, TDConfig(total_steps=50_000, stride=10))
        assert np.abs(res.value - ref).max() < 0.05 / (1 - mdp.gamma)

    def test_values_stay_in_envelope(self, rng):
        mdp, pi = random_mdp(rng)
        U = UncertaintyModel.broadcast(4, 2, 0.1)
        res = robust_policy_evaluation_td(mdp, pi, U, TDConfig(total_steps=5000, trace_every=100))
        for _, _, v in res.trace:
            assert np.all(v >= 0) and np.all(v <= 1 / (1 - mdp.gamma))

    def test_solver_failure_names_step(self):
        mdp, pi = random_mdp(np.random.default_rng(0), 3, 1)
        U = UncertaintyModel(3, 1, {(s, 0): EllipticSetSpec([[1.0, 0.0, 0.0]], 0.1, 1) for s in range(3)})
        with pytest.raises(Exception, match="TD step 0"):
            robust_policy_evaluation_td(mdp, pi, U, TDConfig(total_steps=10))


def test_expected_update_vanishes_at_fixed_point(rng):
    mdp, pi = random_mdp(rng)
    U = UncertaintyModel.broadcast(4, 2, 0.05)
    V = robust_policy_evaluation_vi(mdp, U, pi, tol=1e-12).value
    inc, _ = expected_td_update(mdp, pi, U, V, 10_000, rng)
    se = inc.std(ddof=1) / math.sqrt(inc.size)
    assert abs(inc.mean()) <= 3 * se


def _bandit():
    return TabularMDP(np.ones((1, 2, 1)), [[0.2, 0.8]], 0.5)


class TestActorCritic:
    def test_bandit(self):
        env = TabularEnv(_bandit(), gamma=0.0)
        res = robust_actor_critic(env, ActorCriticConfig(episodes=500, seed=1))
        assert res.policy.as_table().probs[0, 1] >= 0.95

    def test_zero_discount_is_greedy(self, rng):
        mdp, _ = random_mdp(rng, n_states=3, n_actions=3)
        env = TabularEnv(mdp, gamma=0.0)
        res = robust_actor_critic(env, ActorCriticConfig(episodes=300))
        np.testing.assert_array_equal(res.policy.as_table().probs.argmax(axis=1), mdp.reward.argmax(axis=1))

    def test_risky_and_safe(self):
        mdp = risky_safe_mdp()
        risky = EllipticSetSpec(np.zeros((1, 2)), 0.4, 1)
        U = UncertaintyModel(2, 2, {(0, 1): risky})
        cfg = ActorCriticConfig(episodes=400, seed=0)
        robust = robust_actor_critic(TabularEnv(mdp, U, start_state=0), cfg)
        plain = robust_actor_critic(TabularEnv(mdp, start_state=0), cfg)
        assert robust.policy.as_table().probs[0].argmax() == 0
        assert plain.policy.as_table().probs[0].argmax() == 1

    def test_zero_radius_log_is_identical(self, rng):
        mdp, _ = random_mdp(rng)
        cfg = ActorCriticConfig(episodes=20)
        a = robust_actor_critic(TabularEnv(mdp), cfg).log
        b = robust_actor_critic(TabularEnv(mdp, UncertaintyModel.broadcast(4, 2, 0.0)), cfg).log
        assert a == b

    def test_nan_raises_with_log(self, rng, monkeypatch):
        mdp, _ = random_mdp(rng)
        env = TabularEnv(mdp)
        calls = {"n": 0}
        real = env.step

        def step(s, a, r):
            calls["n"] += 1
            s2, rew, done = real(s, a, r)
            return s2, (math.nan if calls["n"] > 70 else rew), done

        monkeypatch.setattr(env, "step", step)
        with pytest.raises(TrainingError) as info:
            robust_actor_critic(env, ActorCriticConfig(episodes=5))
        assert "episode 1" in str(info.value)
        assert len(info.value.log) == 2

    def test_early_stop(self):
        res = robust_actor_critic(TabularEnv(_bandit(), gamma=0.0),
                                  ActorCriticConfig(episodes=500, early_stop_patience=3))
        assert len(res.log) < 500

    def test_outputs(self, tmp_path, rng):
        mdp, _ = random_mdp(rng)
        res = robust_actor_critic(TabularEnv(mdp), ActorCriticConfig(episodes=3))
        write_training_log(res.log, tmp_path / "log.csv")
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 4
        write_policy(res.policy, tmp_path / "policy.json", extra={"beta": 0.0})
        data = json.loads((tmp_path / "policy.json").read_text())
        assert data["beta"] == 0.0
        back = policy_from_dict(data)
        np.testing.assert_allclose(back.as_table().probs, res.policy.as_table().probs)

import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from ellipticrl.errors import EllipticRLError, InputError
from ellipticrl.market import (ACTIONS, BarSeries, BookGenerator, EnvConfig, EpisodeTerminated,
                               LOBSnapshot, MarketTrainingEnv, buy_and_hold_actor,
                               discretize_prices, ellipse_spec, env_step, focus_for_action,
                               load_books_jsonl, make_featurizer, metrics, momentum_actor,
                               momentum_signal, relative_portfolio_gap, reset_state,
                               restricted_target_vector, restricted_value_vector, run_backtest,
                               run_multi_asset, synthetic_market, vwap_execute)
from ellipticrl.robust_td import LinearCritic
from ellipticrl.uncertainty import feasible

AMZN_ASKS = [(223.95, 100), (223.99, 100), (224.00, 220), (224.25, 100), (224.40, 547)]


def flat_bars(n=40, price=100.0, volume=1e6):
    return BarSeries(np.arange(n), np.full(n, price), np.full(n, volume), np.full(n, 0.2))


def bars_from_prices(prices):
    n = len(prices)
    return BarSeries(np.arange(n), prices, np.full(n, 1e6), np.full(n, 0.2))


SMALL = EnvConfig(lookback=3)


class TestVWAP:
    def test_table_values(self):
        assert vwap_execute(AMZN_ASKS, 100).vwap == 223.95
        res = vwap_execute(AMZN_ASKS, 1000)
        assert res.vwap == pytest.approx(224.211, abs=1e-9)
        assert res.filled == 1000 and res.levels_consumed == 5 and not res.partial

    def test_single_level(self):
        assert vwap_execute([(50.0, 10.0)], 7).vwap == 50.0

    def test_partial_fill(self):
        res = vwap_execute(AMZN_ASKS, 2000)
        assert res.partial and res.filled == 1067

    def test_errors(self):
        with pytest.raises(EllipticRLError):
            vwap_execute([], 10)
        with pytest.raises(InputError):
            vwap_execute(AMZN_ASKS, 0)

    def test_bounds_and_monotone(self, rng):
        prev = 0.0
        for q in np.sort(rng.uniform(1, 1067, size=50)):
            res = vwap_execute(AMZN_ASKS, q)
            assert AMZN_ASKS[0][0] <= res.vwap <= AMZN_ASKS[res.levels_consumed - 1][0]
            assert res.vwap >= prev
            prev = res.vwap

    def test_bid_side_nonincreasing(self):
        bids = [(p - 0.5, d) for p, d in AMZN_ASKS[::-1]][::-1]
        bids = sorted(bids, reverse=True)
        vals = [vwap_execute(bids, q).vwap for q in (10, 200, 500, 1000)]
        assert vals == sorted(vals, reverse=True)


class TestBook:
    def test_crossed_book_rejected(self):
        with pytest.raises(InputError):
            LOBSnapshot([(100.0, 1)], [(100.5, 1)])

    def test_ordering_rejected(self):
        with pytest.raises(InputError):
            LOBSnapshot([(101.0, 1), (100.5, 1)], [(99.0, 1)])

    def test_jsonl(self, tmp_path):
        path = tmp_path / "books.jsonl"
        path.write_text('{"asks": [[101, 5]], "bids": [[99, 5]]}\n\n{"asks": [[102, 1]], "bids": []}\n')
        books = load_books_jsonl(path)
        assert len(books) == 2 and books[0].side(3) == ((101.0, 5.0),)
        path.write_text("{not json}\n")
        with pytest.raises(InputError, match=":1:"):
            load_books_jsonl(path)

    def test_bar_csv_roundtrip(self, tmp_path):
        bars, _ = synthetic_market(1, 20)
        bars.to_csv(tmp_path / "bars.csv")
        back = BarSeries.load_csv(tmp_path / "bars.csv")
        np.testing.assert_array_equal(back.price, bars.price)
        np.testing.assert_array_equal(back.timestamp, bars.timestamp)

    def test_bar_csv_header(self, tmp_path):
        (tmp_path / "bad.csv").write_text("timestamp,price\n1,2\n")
        with pytest.raises(InputError, match="header"):
            BarSeries.load_csv(tmp_path / "bad.csv")

    def test_timestamps_increasing(self):
        with pytest.raises(InputError):
            BarSeries([2, 1], [1.0, 1.0], [1.0, 1.0], [0.1, 0.1])


class TestGrid:
    def test_n1(self):
        grid, w = discretize_prices(100.0, 1, 0.05)
        np.testing.assert_allclose(grid, [99.95, 100.0, 100.05])
        np.testing.assert_allclose(w, [0.25, 0.5, 0.25])

    def test_n2(self):
        grid, w = discretize_prices(100.0, 2, 0.05)
        assert grid.size == 5
        np.testing.assert_allclose(w, np.array([1, 2, 3, 2, 1]) / 9)

    @pytest.mark.parametrize("args", [(100.0, 1, 0.0), (0.1, 1, 0.2), (100.0, 0, 0.1)])
    def test_errors(self, args):
        with pytest.raises(InputError):
            discretize_prices(*args)


class TestFocus:
    def test_n1(self):
        np.testing.assert_allclose(focus_for_action("buy", 1), [0.1 - 1 / 3, -1 / 3, -1 / 3])
        np.testing.assert_allclose(focus_for_action("sell", 1), [-1 / 3, -1 / 3, 0.1 - 1 / 3])
        assert not focus_for_action("hold", 1).any()
        np.testing.assert_array_equal(focus_for_action(1.0, 1), focus_for_action("buy", 1))

    def test_larger_n_sums_to_zero(self):
        f = focus_for_action("sell", 3)
        assert f.sum() == pytest.approx(0.0, abs=1e-15)
        assert f.argmax() == 6

    @pytest.mark.parametrize("side", ["buy", "sell", "hold"])
    @pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
    def test_ellipse_spec_feasible(self, side, p):
        spec = ellipse_spec(side, 1, 0.1, p)
        assert feasible(spec)
        np.testing.assert_allclose(spec.foci.sum(axis=1), 0.0, atol=1e-15)

    def test_buy_focus_leans_to_high_prices(self):
        c = ellipse_spec("buy", 1, 0.1).foci[1]
        assert c[-1] > c[0]


class TestStep:
    def test_first_step_zero_action(self):
        data = flat_bars()
        s0 = reset_state(data, SMALL)
        s1, r, info = env_step(s0, 0.0, data, SMALL)
        assert r == 0.0 and info.filled == 0.0

    def test_round_trip_cost(self):
        cfg = replace(SMALL, penalty_coef=0.0)
        data = flat_bars()
        s = reset_state(data, cfg)
        s, _, _ = env_step(s, 1.0, data, cfg)
        s, _, info = env_step(s, 0.0, data, cfg)
        notional = cfg.max_shares * 100.0
        assert cfg.initial_cash - s.cash == pytest.approx(0.002 * notional, rel=1e-12)
        assert s.position == 0.0

    def test_amzn_slippage(self):
        data = flat_bars(price=223.95)
        cfg = replace(SMALL, max_shares=1000.0, initial_cash=300_000.0)
        book = LOBSnapshot(AMZN_ASKS, [(223.90, 1000)])
        _, _, info = env_step(reset_state(data, cfg), 1.0, data, cfg, "impact", book)
        assert info.exec_price == pytest.approx(224.211, abs=1e-9)
        assert round(info.exec_price - info.mark_price, 2) == 0.26

    def test_conservation(self):
        bars, books = synthetic_market(3, 200)
        cfg = EnvConfig()
        s = reset_state(bars, cfg)
        rng = np.random.default_rng(0)
        while s.step_index + 1 < len(bars):
            t = s.step_index
            prev = s
            s, _, info = env_step(s, rng.choice(ACTIONS), bars, cfg, "impact", books)
            signed = s.position - prev.position
            expected = (prev.position * (info.mark_price - bars.price[t])
                        + signed * (info.mark_price - info.exec_price) - info.cost)
            notional = abs(signed) * info.exec_price + abs(prev.position) * info.mark_price
            assert info.equity_after - info.equity_before == pytest.approx(expected, abs=1e-6 * max(notional, 1.0))
            assert s.observation.shape == (4 * cfg.lookback,)

    def test_reward_formula(self):
        data = bars_from_prices([100.0, 100.0, 100.0, 100.0, 102.0, 101.0])
        cfg = replace(SMALL, txn_cost=0.0)
        s = reset_state(data, cfg)
        s, r1, _ = env_step(s, 0.5, data, cfg)
        assert r1 == pytest.approx(-0.05, abs=1e-12)
        s, r2, info = env_step(s, 0.5, data, cfg)
        ret = 50 * 2.0 / 20_000.0
        assert info.current_return == pytest.approx(ret, abs=1e-15)
        vol = np.std([0.0, 0.0, ret])
        assert r2 == pytest.approx(ret / (vol + 1e-3), abs=1e-10)

    def test_insolvent_buy_clipped(self, caplog):
        cfg = replace(SMALL, initial_cash=1000.0)
        data = flat_bars()
        with caplog.at_level(logging.WARNING):
            s, _, info = env_step(reset_state(data, cfg), 1.0, data, cfg)
        assert info.clipped and "exceeds cash" in caplog.text
        assert s.cash == pytest.approx(0.0, abs=1e-9)
        assert s.position == pytest.approx(1000.0 / (100.0 * 1.001))

    def test_episode_end(self):
        data = flat_bars(n=5)
        s = reset_state(data, SMALL, start=3)
        s, _, info = env_step(s, 0.0, data, SMALL)
        assert info.done
        with pytest.raises(EpisodeTerminated):
            env_step(s, 0.0, data, SMALL)

    def test_bad_action(self):
        data = flat_bars()
        with pytest.raises(InputError):
            env_step(reset_state(data, SMALL), 1.5, data, SMALL)


class TestRestricted:
    def setup_method(self):
        self.cfg = replace(SMALL, txn_cost=0.0)
        self.data = flat_bars()
        self.state = reset_state(self.data, self.cfg)
        self.grid, _ = discretize_prices(100.0, 1, 0.05)

    def test_hold_flat_entries(self):
        v = restricted_value_vector(lambda s: s.cash, self.state, 0.0, self.grid, self.data, self.cfg)
        assert np.all(v == v[0])

    def test_buy_differences(self):
        v = restricted_value_vector(lambda s: s.cash, self.state, 1.0, self.grid, self.data, self.cfg)
        assert np.all(np.diff(v) <= 0)
        np.testing.assert_allclose(np.diff(v), -self.cfg.max_shares * 0.05, rtol=1e-9)

    def test_target_includes_reward(self):
        t = restricted_target_vector(lambda s: 0.0, self.state, 1.0, self.grid, self.data, self.cfg, 0.9)
        assert t[0] > t[1] > t[2]

    def test_zero_radius_shift(self):
        env = MarketTrainingEnv(self.data, self.cfg, robust="ellipse", beta=0.0)
        assert env.robust_shift(LinearCritic(env.featurize, env.featurize.dim), self.state, 4) == 0.0

    def test_hold_shift_is_zero(self):
        env = MarketTrainingEnv(self.data, self.cfg, robust="ball", beta=0.1)
        critic = LinearCritic(env.featurize, env.featurize.dim)
        assert env.robust_shift(critic, self.state, ACTIONS.index(0.0)) == pytest.approx(0.0, abs=1e-9)


class TestBaselines:
    def test_momentum(self):
        assert momentum_signal([1, 2, 3, 4], 3) == 1.0
        assert momentum_signal([4, 3, 2, 1], 3) == -1.0
        assert momentum_signal([2, 2, 2, 2], 3) == 0.0
        assert momentum_signal([1, 2], 3) == 0.0

    def test_metrics(self):
        assert metrics([100, 110, 99]).max_drawdown == pytest.approx(-0.1)
        flat = metrics([100, 100, 100])
        assert flat.sharpe_degenerate and flat.sharpe == 0.0 and flat.max_drawdown == 0.0
        assert metrics([100, 121], periods_per_year=2).annualized_return == pytest.approx(0.4641)
        with pytest.raises(InputError):
            metrics([100])

    def test_gap(self):
        assert relative_portfolio_gap(105.0, 105.0, 100.0) == 0.0
        assert relative_portfolio_gap(90.0, 110.0, 100.0) == pytest.approx(0.2)

    def test_buy_and_hold_neutrality(self):
        bars, _ = synthetic_market(5, 80)
        cfg = EnvConfig(txn_cost=0.0)
        res = run_backtest(buy_and_hold_actor, bars, cfg)
        start = cfg.lookback - 1
        p = bars.price[start + 1:]
        q = cfg.max_shares
        np.testing.assert_allclose(res.equity[1:], cfg.initial_cash + q * (p - p[0]), rtol=1e-12)

    def test_momentum_backtest_runs(self):
        bars, _ = synthetic_market(2, 100)
        res = run_backtest(momentum_actor(10), bars, EnvConfig())
        assert res.equity.size == 100 - EnvConfig().lookback + 1

    def test_multi_asset_shared_cash(self):
        a, _ = synthetic_market(1, 60)
        b, _ = synthetic_market(2, 60)
        cfg = EnvConfig(txn_cost=0.0)
        eq = run_multi_asset([buy_and_hold_actor] * 2, [a, b], cfg)
        t0 = cfg.lookback
        q = cfg.max_shares
        expected = cfg.initial_cash + q * (a.price[t0:] - a.price[t0]) + q * (b.price[t0:] - b.price[t0])
        np.testing.assert_allclose(eq[1:], expected, rtol=1e-12)


class TestSynthetic:
    def test_deterministic(self):
        a, _ = synthetic_market(11, 50)
        b, _ = synthetic_market(11, 50)
        np.testing.assert_array_equal(a.price, b.price)
        np.testing.assert_array_equal(a.volume, b.volume)

    def test_zero_impact_fills_at_mid(self):
        bars, books = synthetic_market(0, 10, impact_coeff=0.0)
        book = books(4)
        assert vwap_execute(book.asks, 500).vwap == bars.price[4]
        assert vwap_execute(book.bids, 500).vwap == bars.price[4]

    def test_linear_slippage(self):
        bars, books = synthetic_market(0, 10, impact_coeff=1.0)
        book = books(4)
        d = book.asks[0][1]
        s1 = vwap_execute(book.asks, 2 * d).vwap - bars.price[4]
        s2 = vwap_execute(book.asks, 4 * d).vwap - bars.price[4]
        assert s2 == pytest.approx(2 * s1, rel=1e-9)

    def test_generator_depth(self):
        bars, _ = synthetic_market(0, 10)
        gen = BookGenerator(bars, 0.5, levels=4)
        book = gen(2)
        assert sum(d for _, d in book.asks) == pytest.approx(0.01 * bars.volume[2])


def test_featurizer_dimension():
    cfg = EnvConfig()
    bars, _ = synthetic_market(0, 50)
    phi = make_featurizer(cfg)(reset_state(bars, cfg))
    assert phi.shape == (4 * cfg.lookback + 1,) and np.all(np.isfinite(phi))


def test_scaled_config():
    cfg = EnvConfig().scaled(10)
    assert cfg.max_shares == 1000 and cfg.initial_cash == 200_000
    with pytest.raises(InputError):
        EnvConfig.from_dict({"bogus": 1})

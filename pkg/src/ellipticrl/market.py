"""Single-asset trading environment with order-book execution.

State is a ``lookback x 4`` window of (price, volume, implied_vol,
portfolio_return) plus position and cash. Training replays bars at the
next bar price; evaluation can execute against an order book instead.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EllipticRLError, InputError
from .solver import solve
from .uncertainty import EllipticSetSpec

log = logging.getLogger(__name__)

ACTIONS = (-1.0, -0.5, 0.0, 0.5, 1.0)
DAY_MS = 86_400_000
BAR_COLUMNS = ("timestamp", "price", "volume", "implied_vol")


class EpisodeTerminated(EllipticRLError):
    """Raised when a step is requested past the last bar."""


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class PriceBar:
    timestamp: int
    price: float
    volume: float
    implied_vol: float


class BarSeries:
    """Columnar bar data with strictly increasing timestamps."""

    def __init__(self, timestamp, price, volume, implied_vol):
        self.timestamp = np.asarray(timestamp, dtype=np.int64)
        self.price = np.asarray(price, dtype=float)
        self.volume = np.asarray(volume, dtype=float)
        self.implied_vol = np.asarray(implied_vol, dtype=float)
        n = self.timestamp.size
        if not (self.price.size == self.volume.size == self.implied_vol.size == n):
            raise InputError("bar columns must have equal length")
        if n and np.any(np.diff(self.timestamp) <= 0):
            raise InputError("timestamps must be strictly increasing")
        if np.any(~np.isfinite(self.price)) or np.any(self.price <= 0):
            raise InputError("prices must be positive")
        if np.any(self.volume < 0) or np.any(self.implied_vol < 0):
            raise InputError("volume and implied_vol must be nonnegative")
        for arr in (self.timestamp, self.price, self.volume, self.implied_vol):
            arr.setflags(write=False)

    def __len__(self):
        return int(self.timestamp.size)

    def __getitem__(self, i):
        return PriceBar(int(self.timestamp[i]), float(self.price[i]),
                        float(self.volume[i]), float(self.implied_vol[i]))

    @classmethod
    def from_bars(cls, bars):
        bars = list(bars)
        return cls([b.timestamp for b in bars], [b.price for b in bars],
                   [b.volume for b in bars], [b.implied_vol for b in bars])

    def slice(self, start, stop):
        return BarSeries(self.timestamp[start:stop], self.price[start:stop],
                         self.volume[start:stop], self.implied_vol[start:stop])

    @classmethod
    def load_csv(cls, path):
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or set(BAR_COLUMNS) - set(reader.fieldnames):
                    raise InputError(f"{path}: header must contain {','.join(BAR_COLUMNS)}")
                rows = list(reader)
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
        try:
            return cls([int(r["timestamp"]) for r in rows], [float(r["price"]) for r in rows],
                       [float(r["volume"]) for r in rows], [float(r["implied_vol"]) for r in rows])
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"{path}: malformed bar row: {exc}") from exc

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BAR_COLUMNS)
            for i in range(len(self)):
                w.writerow([int(self.timestamp[i]), repr(float(self.price[i])),
                            repr(float(self.volume[i])), repr(float(self.implied_vol[i]))])


# ---------------------------------------------------------------------------
# order book


def _levels(side, name):
    out = []
    for lvl in side:
        try:
            price, depth = float(lvl[0]), float(lvl[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise InputError(f"{name} level {lvl!r} is not a (price, depth) pair") from exc
        if not (price > 0 and depth > 0):
            raise InputError(f"{name} level {lvl!r} needs positive price and depth")
        out.append((price, depth))
    return tuple(out)


@dataclass(frozen=True)
class LOBSnapshot:
    """Order-book snapshot: asks ascending, bids descending.

    A locked book (best ask equal to best bid) is accepted only for the
    single-level zero-impact ladder produced by :class:`BookGenerator`.
    """

    asks: tuple
    bids: tuple

    def __post_init__(self):
        asks = _levels(self.asks, "ask")
        bids = _levels(self.bids, "bid")
        if any(asks[i + 1][0] <= asks[i][0] for i in range(len(asks) - 1)):
            raise InputError("ask prices must be strictly ascending")
        if any(bids[i + 1][0] >= bids[i][0] for i in range(len(bids) - 1)):
            raise InputError("bid prices must be strictly descending")
        if asks and bids:
            locked = len(asks) == len(bids) == 1 and asks[0][0] == bids[0][0]
            if asks[0][0] <= bids[0][0] and not locked:
                raise InputError("best ask must exceed best bid")
        object.__setattr__(self, "asks", asks)
        object.__setattr__(self, "bids", bids)

    def side(self, qty):
        """Book side consumed by a signed order (asks for buys)."""
        return self.asks if qty > 0 else self.bids

    def to_dict(self):
        return {"asks": [list(x) for x in self.asks], "bids": [list(x) for x in self.bids]}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["asks"], data["bids"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed book snapshot: {exc}") from exc


def load_books_jsonl(path):
    """One snapshot per line, ``{"asks": [[p, d], ...], "bids": [...]}``."""
    books = []
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        books.append(LOBSnapshot.from_dict(json.loads(line)))
                    except json.JSONDecodeError as exc:
                        raise InputError(f"{path}:{n}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return books


@dataclass(frozen=True)
class ExecutionResult:
    vwap: float
    filled: float
    levels_consumed: int
    requested: float = 0.0

    @property
    def partial(self):
        return self.filled < self.requested


def vwap_execute(book_side, qty):
    """Walk ``book_side`` from its best level until ``qty`` shares fill.

    Parameters
    ----------
    book_side : sequence of (price, depth)
        Levels ordered best first.
    qty : float
        Shares to execute, positive.

    Returns
    -------
    ExecutionResult
        ``filled < requested`` flags a partial fill when depth runs out.
    """
    if not qty > 0:
        raise InputError(f"order quantity must be positive, got {qty}")
    if len(book_side) == 0:
        raise EllipticRLError("cannot execute against an empty book side")
    # offsets from the best price keep single-level fills exact
    best = float(book_side[0][0])
    remaining = float(qty)
    excess = 0.0
    used = 0
    for price, depth in book_side:
        take = min(depth, remaining)
        excess += (price - best) * take
        remaining -= take
        used += 1
        if remaining <= 0:
            break
    filled = float(qty) - max(remaining, 0.0)
    return ExecutionResult(best + excess / filled, filled, used, float(qty))


class BookGenerator:
    """Linear-impact ladder around each bar's price.

    Each side has ``levels`` levels of equal depth whose total is
    ``depth_fraction * volume[t]``. Level ``k`` (1-based) sits
    ``impact_coeff * (2k - 1) / levels`` away from the mid, so the VWAP
    of an order of size ``q`` differs from the mid by about
    ``impact_coeff * q / total_depth``.
    """

    def __init__(self, bars, impact_coeff, levels=10, depth_fraction=0.01, min_depth=1.0):
        if impact_coeff < 0:
            raise InputError("impact_coeff must be nonnegative")
        self.bars = bars
        self.impact_coeff = float(impact_coeff)
        self.levels = int(levels)
        self.depth_fraction = float(depth_fraction)
        self.min_depth = float(min_depth)

    def total_depth(self, t):
        return max(self.depth_fraction * float(self.bars.volume[t]), self.min_depth)

    def __call__(self, t):
        mid = float(self.bars.price[t])
        total = self.total_depth(t)
        if self.impact_coeff == 0.0:
            return LOBSnapshot(((mid, total),), ((mid, total),))
        d = total / self.levels
        off = self.impact_coeff * (2 * np.arange(1, self.levels + 1) - 1) / self.levels
        asks = tuple((mid + o, d) for o in off)
        bids = tuple((max(mid - o, 1e-9 * mid), d) for o in off)
        return LOBSnapshot(asks, bids)


# ---------------------------------------------------------------------------
# execution-price grid and uncertainty


def discretize_prices(p, n, spacing):
    """Execution-price grid ``p + k * spacing`` for ``k = -n..n`` (ascending).

    The nominal weights are ``[0.25, 0.5, 0.25]`` for ``n = 1`` and the
    triangular weights ``1, 2, ..., n+1, ..., 2, 1`` normalized for larger
    ``n`` (the ``n = 1`` case is the same rule).
    """
    n = int(n)
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if not spacing > 0:
        raise InputError(f"spacing must be positive, got {spacing}")
    if p - n * spacing <= 0:
        raise InputError(f"grid price {p - n * spacing} is not positive")
    k = np.arange(-n, n + 1)
    w = (n + 1 - np.abs(k)).astype(float)
    return p + k * spacing, w / w.sum()


def _side(action_sign):
    if isinstance(action_sign, str):
        if action_sign not in ("buy", "sell", "hold"):
            raise InputError(f"action_sign must be buy, sell or hold, got {action_sign!r}")
        return action_sign
    s = float(action_sign)
    return "buy" if s > 0 else "sell" if s < 0 else "hold"


def focus_for_action(action_sign, n, shift=0.1):
    """Directional focus over the ``2n + 1`` grid, highest price first.

    For ``n = 1`` the values are ``[shift - 1/3, -1/3, -1/3]`` for a buy
    and the reverse for a sell. For ``n > 1`` the vector is
    ``shift * e_extreme - shift / (2n + 1)``, which sums to zero.
    """
    n = int(n)
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    side = _side(action_sign)
    d = 2 * n + 1
    if side == "hold":
        return np.zeros(d)
    if n == 1:
        f = np.full(d, -1.0 / 3.0)
    else:
        f = np.full(d, -shift / d)
    f[0 if side == "buy" else -1] += shift
    return f


def ellipse_spec(action_sign, n, beta, p=1.0, shift=0.1, focal_ratio=0.5):
    """Two-focus set ``{0, c}`` stretched toward the adverse fill side.

    ``c`` is the zero-sum part of :func:`focus_for_action`, reordered to
    the ascending grid and rescaled to ``||c||_p = focal_ratio * beta``.
    Holding (or ``beta = 0``) gives coincident foci at 0.
    """
    f = focus_for_action(action_sign, n, shift)[::-1]
    f = f - f.mean()
    c = np.zeros_like(f)
    norm = np.linalg.norm(f, ord=np.inf if math.isinf(p) else p)
    if norm > 0 and beta > 0:
        c = f * (focal_ratio * beta / norm)
    return EllipticSetSpec(np.vstack([np.zeros_like(f), c]), beta, p)


def ball_spec(n, beta, p=1.0):
    return EllipticSetSpec(np.zeros((1, 2 * int(n) + 1)), beta, p)


# ---------------------------------------------------------------------------
# environment


@dataclass(frozen=True)
class EnvConfig:
    lookback: int = 30
    levels_n: int = 1
    level_spacing: float = 1.0
    txn_cost: float = 0.001
    reward_eps: float = 1e-3
    penalty_coef: float = 0.1
    max_shares: float = 100.0
    initial_cash: float = 20_000.0
    periods_per_year: int = 252

    def __post_init__(self):
        if self.lookback < 1 or self.levels_n < 1:
            raise InputError("lookback and levels_n must be >= 1")
        if not 0.0 <= self.txn_cost <= 0.05:
            raise InputError("txn_cost must lie in [0, 0.05]")
        if not (self.level_spacing > 0 and self.reward_eps > 0):
            raise InputError("level_spacing and reward_eps must be positive")
        if self.penalty_coef < 0:
            raise InputError("penalty_coef must be nonnegative")
        if not (self.max_shares > 0 and self.initial_cash > 0):
            raise InputError("max_shares and initial_cash must be positive")

    def scaled(self, volume_scale):
        """Same fractions of capital at ``volume_scale`` times the size."""
        return replace(self, max_shares=self.max_shares * volume_scale,
                       initial_cash=self.initial_cash * volume_scale)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as exc:
            raise InputError(f"malformed environment config: {exc}") from exc


@dataclass(frozen=True)
class MarketEnvState:
    window: np.ndarray
    position: float
    cash: float
    step_index: int

    @property
    def observation(self):
        return self.window.ravel()

    def equity(self, price):
        return self.cash + self.position * price


def reset_state(data, cfg, start=None):
    """State at bar ``start`` (default ``lookback - 1``), flat, all cash."""
    start = cfg.lookback - 1 if start is None else int(start)
    if start < cfg.lookback - 1 or start >= len(data) - 1:
        raise InputError(f"start index {start} leaves no lookback window or next bar")
    sl = slice(start - cfg.lookback + 1, start + 1)
    window = np.column_stack([data.price[sl], data.volume[sl], data.implied_vol[sl],
                              np.zeros(cfg.lookback)])
    return MarketEnvState(window, 0.0, float(cfg.initial_cash), start)


@dataclass
class StepInfo:
    qty: float
    filled: float
    exec_price: float
    mark_price: float
    cost: float
    equity_before: float
    equity_after: float
    current_return: float
    current_volatility: float
    clipped: bool
    done: bool


def _fill(qty, mode, book, exec_price, mark):
    """Execution price and filled shares for a signed order."""
    if exec_price is not None:
        return float(exec_price), abs(qty)
    if mode == "nominal":
        return mark, abs(qty)
    res = vwap_execute(book.side(qty), abs(qty))
    return res.vwap, res.filled


def env_step(state, action, data, cfg, mode="nominal", book=None, exec_price=None):
    """Advance one bar.

    The order moves the position to ``action * max_shares`` and executes at
    the next bar's price (``mode="nominal"``), against ``book`` (``"impact"``,
    a snapshot or a callable of the bar index) or at ``exec_price`` when
    given. Holdings are marked at the next bar's price. Buys that need more
    cash than is available are scaled down to what the cash covers.

    Returns
    -------
    (MarketEnvState, float, StepInfo)
        Next state, reward and the step's accounting.
    """
    a = float(action)
    if not -1.0 <= a <= 1.0:
        raise InputError(f"action must lie in [-1, 1], got {action}")
    if mode not in ("nominal", "impact"):
        raise InputError(f"mode must be nominal or impact, got {mode!r}")
    t = state.step_index
    if t + 1 >= len(data):
        raise EpisodeTerminated(f"no bar after index {t}")
    mark = float(data.price[t + 1])
    before = state.cash + state.position * float(data.price[t])
    qty = a * cfg.max_shares - state.position
    if mode == "impact" and exec_price is None:
        if book is None:
            raise InputError("impact mode needs an order book")
        book = book(t + 1) if callable(book) else book

    px, filled, clipped = mark, 0.0, False
    if qty != 0.0:
        px, filled = _fill(qty, mode, book, exec_price, mark)
        if qty > 0 and filled * px * (1.0 + cfg.txn_cost) > state.cash:
            afford = max(state.cash, 0.0) / (px * (1.0 + cfg.txn_cost))
            log.warning("bar %d: buy of %.6g shares exceeds cash; clipped to %.6g", t, filled, afford)
            clipped = True
            if afford > 0 and exec_price is None and mode == "impact":
                px, afford = _fill(afford, mode, book, None, mark)
            filled = afford
    signed = math.copysign(filled, qty) if filled else 0.0
    cost = cfg.txn_cost * filled * px
    cash = state.cash - signed * px - cost
    position = state.position + signed
    after = cash + position * mark
    ret = after / before - 1.0
    row = np.array([mark, data.volume[t + 1], data.implied_vol[t + 1], ret])
    window = np.vstack([state.window[1:], row])
    vol = float(window[:, 3].std())
    reward = ret / (vol + cfg.reward_eps) - cfg.penalty_coef * abs(signed) / cfg.max_shares
    done = t + 2 >= len(data)
    info = StepInfo(qty, filled, px, mark, cost, before, after, ret, vol, clipped, done)
    return MarketEnvState(window, position, cash, t + 1), reward, info


def _successors(state, action, grid, data, cfg):
    return [env_step(state, action, data, cfg, exec_price=p) for p in grid]


def restricted_value_vector(value_fn, state, action, grid, data, cfg):
    """Critic values at the successor reached by executing at each grid price.

    Only the fill price varies across entries; holdings are marked at the
    next bar's price in every successor.
    """
    return np.array([value_fn(s2) for s2, _, _ in _successors(state, action, grid, data, cfg)])


def restricted_target_vector(value_fn, state, action, grid, data, cfg, gamma):
    """``r(s, a, s'_k) + gamma * V(s'_k)`` over the execution-price grid."""
    return np.array([r + gamma * value_fn(s2)
                     for s2, r, _ in _successors(state, action, grid, data, cfg)])


# ---------------------------------------------------------------------------
# features and training environment


def make_featurizer(cfg):
    """Map a state to ``4 * lookback + 1`` scale-free features.

    Columns: price relative to the latest bar (x10), log volume relative
    to its window mean, implied vol, portfolio return (x100), then the
    position as a fraction of ``max_shares``.
    """

    def featurize(state):
        w = state.window
        rel = (w[:, 0] / w[-1, 0] - 1.0) * 10.0
        vol = np.log(np.maximum(w[:, 1], 1.0))
        vol = vol - vol.mean()
        return np.concatenate([rel, vol, w[:, 2], w[:, 3] * 100.0,
                               [state.position / cfg.max_shares]])

    featurize.dim = 4 * cfg.lookback + 1
    return featurize


ROBUST_MODES = ("none", "ball", "ellipse")


class MarketTrainingEnv:
    """Nominal replay of ``data`` for :func:`robust_actor_critic`.

    Episodes start at a random bar and last ``episode_len`` steps (or until
    the data ends). ``robust`` selects no perturbation, an l_p ball around
    0, or the two-focus set from :func:`ellipse_spec`; the worst-case shift
    is ``min_u u^T g`` with ``g`` from :func:`restricted_target_vector`.
    """

    kind = "features"

    def __init__(self, data, cfg, robust="none", beta=0.0, p=1.0, gamma=0.9,
                 episode_len=64, shift=0.1, focal_ratio=0.5):
        if robust not in ROBUST_MODES:
            raise InputError(f"robust must be one of {ROBUST_MODES}, got {robust!r}")
        if beta < 0:
            raise InputError("beta must be nonnegative")
        if len(data) < cfg.lookback + 2:
            raise InputError("need at least lookback + 2 bars")
        self.data, self.cfg = data, cfg
        self.robust, self.beta, self.p = robust, float(beta), float(p)
        self.gamma = float(gamma)
        self.episode_len = int(episode_len)
        self.shift, self.focal_ratio = shift, focal_ratio
        self.featurize = make_featurizer(cfg)
        self.actions = ACTIONS
        self._specs = {}

    @property
    def n_actions(self):
        return len(self.actions)

    def make_actor(self, rng):
        from .robust_td import LinearSoftmaxPolicy, orthogonal_init
        W = orthogonal_init(rng, self.n_actions, self.featurize.dim)
        return LinearSoftmaxPolicy(W, np.zeros(self.n_actions), self.actions, self.featurize)

    def make_critic(self):
        from .robust_td import LinearCritic
        return LinearCritic(self.featurize, self.featurize.dim)

    def reset(self, rng):
        lo = self.cfg.lookback - 1
        hi = max(lo + 1, len(self.data) - 1 - self.episode_len)
        return reset_state(self.data, self.cfg, int(rng.integers(lo, hi)))

    def step(self, state, a, rng):
        s2, r, info = env_step(state, self.actions[a], self.data, self.cfg)
        return s2, r, info.done

    def spec_for(self, state, a):
        qty = self.actions[a] * self.cfg.max_shares - state.position
        side = _side(qty)
        key = side if self.robust == "ellipse" else "ball"
        if key not in self._specs:
            n = self.cfg.levels_n
            self._specs[key] = (ellipse_spec(side, n, self.beta, self.p, self.shift, self.focal_ratio)
                                if self.robust == "ellipse" else ball_spec(n, self.beta, self.p))
        return self._specs[key]

    def robust_shift(self, critic, state, a):
        if self.robust == "none" or self.beta == 0.0:
            return 0.0
        nxt = float(self.data.price[state.step_index + 1])
        grid, _ = discretize_prices(nxt, self.cfg.levels_n, self.cfg.level_spacing)
        g = restricted_target_vector(critic.value, state, self.actions[a], grid,
                                     self.data, self.cfg, self.gamma)
        return solve(g, self.spec_for(state, a)).objective


# ---------------------------------------------------------------------------
# baselines, backtests and metrics


def momentum_signal(prices, lookback):
    """Sign of the trailing ``lookback``-bar return (0 without enough history)."""
    prices = np.asarray(prices, dtype=float)
    if lookback < 1 or prices.size < lookback + 1:
        return 0.0
    change = prices[-1] - prices[-1 - lookback]
    return float(np.sign(change))


@dataclass
class MetricsReport:
    final_value: float
    annualized_return: float
    sharpe: float
    max_drawdown: float
    sharpe_degenerate: bool = False
    relative_gap: float = None

    def to_dict(self):
        return dict(self.__dict__)


def relative_portfolio_gap(final_with, final_without, initial_cash):
    return abs(final_with - final_without) / initial_cash


def metrics(equity_curve, periods_per_year=252):
    """Annualized return, Sharpe (zero risk-free rate) and max drawdown."""
    v = np.asarray(equity_curve, dtype=float)
    if v.size < 2 or np.any(v <= 0):
        raise InputError("equity curve needs at least two positive values")
    steps = v.size - 1
    ann = (v[-1] / v[0]) ** (periods_per_year / steps) - 1.0
    rets = v[1:] / v[:-1] - 1.0
    sd = rets.std()
    degenerate = not sd > 1e-15 * max(1.0, abs(rets.mean()))
    sharpe = 0.0 if degenerate else float(rets.mean() / sd * math.sqrt(periods_per_year))
    dd = float(np.min(v / np.maximum.accumulate(v) - 1.0))
    return MetricsReport(float(v[-1]), float(ann), sharpe, dd, degenerate)


class PolicyActor:
    """Wrap a trained softmax policy as ``state -> action in [-1, 1]``.

    ``greedy`` takes the most likely action; otherwise actions are sampled
    from ``rng``.
    """

    def __init__(self, policy, cfg, greedy=True, rng=None):
        self.policy = policy
        self.policy.featurizer = make_featurizer(cfg)
        self.greedy = greedy
        self.rng = rng

    def __call__(self, state, data):
        p = self.policy.probs(state)
        if self.greedy:
            i = int(np.argmax(p))
        else:
            i = int(np.searchsorted(np.cumsum(p)[:-1], self.rng.random(), side="right"))
        return self.policy.actions[i]


def momentum_actor(lookback):
    def act(state, data):
        return momentum_signal(data.price[:state.step_index + 1], lookback)
    return act


def buy_and_hold_actor(state, data):
    return 1.0


@dataclass
class BacktestResult:
    equity: np.ndarray
    positions: np.ndarray
    rewards: np.ndarray
    metrics: MetricsReport
    shares_traded: float = 0.0
    slippage_per_share: float = 0.0


def run_backtest(actor, data, cfg, mode="nominal", book=None, start=None):
    """Run ``actor`` from ``start`` to the last bar; equity marked per bar."""
    state = reset_state(data, cfg, start)
    equity = [state.equity(float(data.price[state.step_index]))]
    positions, rewards = [state.position], []
    shares = slip = 0.0
    while state.step_index + 1 < len(data):
        state, r, info = env_step(state, actor(state, data), data, cfg, mode, book)
        equity.append(info.equity_after)
        positions.append(state.position)
        rewards.append(r)
        shares += info.filled
        slip += info.filled * abs(info.exec_price - info.mark_price)
    equity = np.array(equity)
    return BacktestResult(equity, np.array(positions), np.array(rewards),
                          metrics(equity, cfg.periods_per_year), shares,
                          slip / shares if shares else 0.0)


def backtest_pair(actor_factory, data, cfg, book):
    """Backtest with and without impact; the gap is set on the impact report."""
    on = run_backtest(actor_factory(), data, cfg, "impact", book)
    off = run_backtest(actor_factory(), data, cfg, "nominal")
    on.metrics.relative_gap = relative_portfolio_gap(
        on.metrics.final_value, off.metrics.final_value, cfg.initial_cash)
    off.metrics.relative_gap = 0.0
    return on, off


def write_equity_csv(results, path):
    """``results``: mapping of column name to :class:`BacktestResult`."""
    names = list(results)
    n = max(len(r.equity) for r in results.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + names)
        for i in range(n):
            w.writerow([i] + [repr(float(results[k].equity[i])) if i < len(results[k].equity) else ""
                              for k in names])


# ---------------------------------------------------------------------------
# multi-asset


@dataclass
class PortfolioState:
    states: list
    cash: float


def run_multi_asset(actors, datasets, cfg, mode="nominal", books=None):
    """Trade several assets on a shared cash pool.

    Each bar, every asset is stepped in order with its own window and
    position; cash flows from earlier assets are visible to later ones.
    ``cfg.initial_cash`` is the pooled starting cash. Returns the pooled
    equity curve.
    """
    if len(actors) != len(datasets):
        raise InputError("need one actor per asset")
    books = books or [None] * len(datasets)
    n = min(len(d) for d in datasets)
    states = [reset_state(d, cfg) for d in datasets]
    cash = float(cfg.initial_cash)
    equity = [cash]
    t = cfg.lookback - 1
    while t + 1 < n:
        for i, (act, d) in enumerate(zip(actors, datasets)):
            s = replace(states[i], cash=cash)
            s2, _, _ = env_step(s, act(s, d), d, cfg, mode, books[i])
            cash = s2.cash
            states[i] = s2
        t += 1
        equity.append(cash + sum(s.position * float(d.price[t]) for s, d in zip(states, datasets)))
    return np.array(equity)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_market(seed, steps, impact_coeff=1.0, p0=100.0, sigma=0.01, drift=0.0,
                     mean_volume=1e6, levels=10, depth_fraction=0.01):
    """Geometric random walk with log-normal volume and mean-reverting vol.

    Returns the bars and a :class:`BookGenerator` with linear impact.
    """
    steps = int(steps)
    if steps < 3:
        raise InputError("steps must be >= 3")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(steps - 1)
    log_iv = np.empty(steps)
    log_iv[0] = math.log(0.2)
    for i in range(1, steps):
        log_iv[i] = log_iv[i - 1] + 0.05 * (math.log(0.2) - log_iv[i - 1]) + 0.05 * rng.standard_normal()
    iv = np.exp(log_iv)
    scale = sigma * iv[1:] / 0.2
    log_p = math.log(p0) + np.concatenate([[0.0], np.cumsum(drift - 0.5 * scale ** 2 + scale * z)])
    volume = mean_volume * np.exp(0.3 * rng.standard_normal(steps) - 0.045)
    ts = 1_577_836_800_000 + DAY_MS * np.arange(steps, dtype=np.int64)
    bars = BarSeries(ts, np.exp(log_p), np.round(volume), iv)
    return bars, BookGenerator(bars, impact_coeff, levels, depth_fraction)

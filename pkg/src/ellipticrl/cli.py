"""Command-line front end: solve, evaluate, train, backtest.

Exit codes: 0 success, 1 malformed input, 2 infeasible set or invalid
worst-case kernel, 3 convergence or training failure. Every run writes
``manifest.json`` with the resolved configuration into its output directory.
"""

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import EllipticRLError, InputError, TrainingError
from .market import (BarSeries, BookGenerator, EnvConfig, MarketTrainingEnv, PolicyActor,
                     buy_and_hold_actor, load_books_jsonl, momentum_actor, relative_portfolio_gap,
                     run_backtest, synthetic_market, write_equity_csv)
from .robust_dp import (Policy, TabularMDP, UncertaintyModel, policy_evaluation_linear,
                        robust_policy_evaluation_vi)
from .robust_td import (ActorCriticConfig, TDConfig, policy_from_dict, robust_actor_critic,
                        robust_policy_evaluation_td, write_policy, write_training_log)
from .solver import DISPATCH, WorstCaseProblem, solve

log = logging.getLogger("ellipticrl")

BETA_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
BUILTIN_POLICIES = ("builtin:buy_and_hold", "builtin:momentum")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 (2 is reserved for infeasible inputs)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_manifest(out, args, resolved):
    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "args": _jsonable({k: v for k, v in vars(args).items() if k not in ("func", "argv")}),
        "resolved": _jsonable(resolved),
        "seed": args.seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _write_json(manifest, os.path.join(out, "manifest.json"))


def _fan_out(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args, config):
    problem = WorstCaseProblem.from_dict(_read_json(args.problem))
    sol = solve(problem, method=args.method, tol=config.get("tol"))
    out = sol.to_dict()
    out["dim"] = problem.spec.dim
    _write_json(out, os.path.join(args.out, "solution.json"))
    print(f"{sol.method}: objective {sol.objective:.12g}")
    return {"method": args.method, "problem": problem.to_dict()}


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args, config):
    mdp = TabularMDP.load(args.mdp)
    pi = Policy.load(args.policy)
    U = UncertaintyModel.load(args.uncertainty, mdp.n_states, mdp.n_actions)
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"policy shape {pi.probs.shape} does not match MDP "
                         f"({mdp.n_states}, {mdp.n_actions})")
    trace_path = os.path.join(args.out, "trace.csv")
    if args.algo == "vi":
        res = robust_policy_evaluation_vi(mdp, U, pi, tol=args.tol,
                                          max_iter=args.max_iter)
        value = {"algo": "vi", "value": res.value.tolist(), "iterations": res.iterations,
                 "error_bound": res.error_bound}
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "residual"])
            for k, r in enumerate(res.residuals, 1):
                w.writerow([k, repr(r)])
        resolved = {"tol": args.tol, "max_iter": args.max_iter}
    else:
        td_fields = {k: config[k] for k in ("step_size", "schedule", "step_decay", "stride",
                                            "clip", "trace_every") if k in config}
        cfg = TDConfig(total_steps=args.steps, seed=args.seed, **td_fields)
        res = robust_policy_evaluation_td(mdp, pi, U, cfg)
        value = {"algo": "td", "value": res.value.tolist(), "steps": res.steps}
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "eta"] + [f"v{s}" for s in range(mdp.n_states)])
            for step, eta, v in res.trace:
                w.writerow([step, repr(eta)] + [repr(float(x)) for x in v])
        resolved = cfg.__dict__
    if U.is_unperturbed():
        value["linear_solve"] = policy_evaluation_linear(mdp, pi).tolist()
    _write_json(value, os.path.join(args.out, "value.json"))
    print(" ".join(f"{x:.10g}" for x in value["value"]))
    return resolved


# ---------------------------------------------------------------------------
# train


def _env_config(config, volume_scale=1.0):
    cfg = EnvConfig.from_dict(config.get("env", {}))
    return cfg.scaled(volume_scale) if volume_scale != 1.0 else cfg


def _load_bars(args, config, seed_offset=0):
    if args.data:
        return BarSeries.load_csv(args.data), None
    if not args.synthetic:
        raise InputError("give --data BARS.csv or --synthetic")
    syn = config.get("synthetic", {})
    steps = int(syn.get("steps", args.bars))
    impact = float(syn.get("impact_coeff", args.impact_coeff))
    return synthetic_market(args.seed + seed_offset, steps, impact)


def _trainer_config(args, config):
    fields = dict(config.get("trainer", {}))
    fields["seed"] = args.seed
    if args.episodes is not None:
        fields["episodes"] = args.episodes
    if args.early_stop_patience is not None:
        fields["early_stop_patience"] = args.early_stop_patience
    try:
        return ActorCriticConfig(**fields)
    except TypeError as exc:
        raise InputError(f"malformed trainer config: {exc}") from exc


def _train_one(bars, env_cfg, trainer, robust, beta, p, gamma, episode_len, out):
    os.makedirs(out, exist_ok=True)
    env = MarketTrainingEnv(bars, env_cfg, robust=robust, beta=beta, p=p, gamma=gamma,
                            episode_len=episode_len)
    try:
        res = robust_actor_critic(env, trainer)
    except TrainingError as exc:
        write_training_log(getattr(exc, "log", []), os.path.join(out, "training_log.csv"))
        raise
    write_training_log(res.log, os.path.join(out, "training_log.csv"))
    write_policy(res.policy, os.path.join(out, "policy.json"),
                 {"robust": robust, "beta": beta, "p": p, "env": env_cfg.to_dict()})
    return len(res.log)


def cmd_train(args, config):
    bars, _ = _load_bars(args, config)
    env_cfg = _env_config(config)
    trainer = _trainer_config(args, config)
    gamma = float(config.get("gamma", 0.9))
    episode_len = int(config.get("episode_len", trainer.steps_per_episode))
    if args.robust == "none":
        betas = [0.0]
    elif args.beta_grid is not None:
        betas = args.beta_grid or list(BETA_GRID)
    else:
        betas = [args.beta]
    if any(b < 0 for b in betas):
        raise InputError("beta must be nonnegative")
    single = len(betas) == 1
    jobs = [(bars, env_cfg, trainer, args.robust, b, args.p, gamma, episode_len,
             args.out if single else os.path.join(args.out, f"beta_{b:g}")) for b in betas]
    lengths = _fan_out(_train_one, jobs, args.workers)
    for b, n in zip(betas, lengths):
        print(f"robust={args.robust} beta={b:g}: {n} episodes")
    return {"env": env_cfg.to_dict(), "trainer": trainer.to_dict(), "betas": betas,
            "gamma": gamma, "episode_len": episode_len, "bars": len(bars)}


# ---------------------------------------------------------------------------
# backtest


def _actor_factory(policy_arg, cfg, lookback):
    if policy_arg == "builtin:buy_and_hold":
        return lambda: buy_and_hold_actor
    if policy_arg == "builtin:momentum":
        return lambda: momentum_actor(lookback)
    policy = policy_from_dict(_read_json(policy_arg))
    if not hasattr(policy, "actions"):
        raise InputError("backtest needs a linear_softmax market policy or a builtin policy")
    return lambda: PolicyActor(policy, cfg)


def _book_source(args, bars, generator, config):
    if args.books:
        books = load_books_jsonl(args.books)
        if len(books) == 1:
            return books[0]
        if len(books) != len(bars):
            raise InputError(f"{len(books)} book snapshots for {len(bars)} bars")
        return lambda t: books[t]
    if generator is not None:
        return generator
    syn = config.get("synthetic", {})
    return BookGenerator(bars, float(syn.get("impact_coeff", args.impact_coeff)))


def _report(res, gap):
    m = res.metrics
    return {"final_value": m.final_value, "annualized_return": m.annualized_return,
            "sharpe": m.sharpe, "sharpe_degenerate": m.sharpe_degenerate,
            "max_drawdown": m.max_drawdown, "relative_gap": gap,
            "shares_traded": res.shares_traded, "slippage_per_share": res.slippage_per_share}


def _backtest_one(args, config, seed, out):
    bars, gen = _load_bars(args, config, seed_offset=seed - args.seed)
    base = _env_config(config)
    book = _book_source(args, bars, gen, config) if args.impact == "on" else None
    rows = []
    for scale in args.volume_scale:
        cfg = base.scaled(scale)
        make = _actor_factory(args.policy, cfg, cfg.lookback)
        off = run_backtest(make(), bars, cfg, "nominal")
        runs = {"nominal": off}
        if args.impact == "on":
            on = run_backtest(make(), bars, cfg, "impact", book)
            runs["impact"] = on
            gap = relative_portfolio_gap(on.metrics.final_value, off.metrics.final_value,
                                         cfg.initial_cash)
            primary = on
        else:
            gap = relative_portfolio_gap(off.metrics.final_value, off.metrics.final_value,
                                         cfg.initial_cash)
            primary = off
        d = os.path.join(out, f"seed_{seed}", f"scale_{scale:g}")
        os.makedirs(d, exist_ok=True)
        _write_json(_jsonable(_report(primary, gap)), os.path.join(d, "report.json"))
        write_equity_csv(runs, os.path.join(d, "equity.csv"))
        rows.append((scale, seed, gap, primary.metrics.sharpe, primary.metrics.final_value,
                     primary.slippage_per_share))
    return rows


def cmd_backtest(args, config):
    seeds = args.seeds or [args.seed]
    if args.data and len(seeds) > 1:
        log.info("recorded data: seeds only label the output directories")
    results = []
    for seed in seeds:
        results.extend(_backtest_one(args, config, seed, args.out))
    results.sort(key=lambda r: (r[0], r[1]))
    with open(os.path.join(args.out, "gap_vs_scale.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_scale", "seed", "relative_gap", "sharpe", "final_value",
                    "slippage_per_share"])
        for r in results:
            w.writerow([repr(r[0]), r[1]] + [repr(float(x)) for x in r[2:]])
    for scale in args.volume_scale:
        gaps = [r[2] for r in results if r[0] == scale]
        print(f"scale {scale:g}: median relative gap {float(np.median(gaps)):.6g}")
    return {"env": _env_config(config).to_dict(), "seeds": seeds,
            "volume_scale": args.volume_scale}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("--config", help="JSON file with extra settings")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ellipticrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common], help="solve one worst-case inner problem")
    p.add_argument("problem", help="problem JSON: {v, spec: {dim, p, beta, foci}, tol}")
    p.add_argument("--method", choices=DISPATCH, default="auto")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", parents=[common], help="robust policy evaluation")
    p.add_argument("mdp")
    p.add_argument("policy")
    p.add_argument("uncertainty")
    p.add_argument("--algo", choices=("vi", "td"), default="vi")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--steps", type=int, default=100_000)
    p.set_defaults(func=cmd_evaluate)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="bar CSV (timestamp,price,volume,implied_vol)")
    data.add_argument("--synthetic", action="store_true", help="generate bars from --seed")
    data.add_argument("--bars", type=int, default=1500, help="synthetic series length")
    data.add_argument("--impact-coeff", type=float, default=1.0)

    p = sub.add_parser("train", parents=[common, data], help="train a market agent")
    p.add_argument("--robust", choices=("none", "ball", "ellipse"), default="none")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--beta-grid", type=_float_list, nargs="?", const=[],
                   help="comma-separated radii (bare flag: 1e-1..1e-5)")
    p.add_argument("--p", type=float, default=1.0, help="norm exponent of the set")
    p.add_argument("--episodes", type=int)
    p.add_argument("--early-stop-patience", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", parents=[common, data], help="backtest with/without impact")
    p.add_argument("policy", help=f"policy JSON or one of {', '.join(BUILTIN_POLICIES)}")
    p.add_argument("--impact", choices=("on", "off"), default="on")
    p.add_argument("--books", help="book snapshots as JSON lines (one, or one per bar)")
    p.add_argument("--volume-scale", type=_float_list, default=[1.0])
    p.add_argument("--seeds", type=_int_list)
    p.set_defaults(func=cmd_backtest)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _read_json(args.config) if args.config else {}
        if not isinstance(config, dict):
            raise InputError("--config must hold a JSON object")
        os.makedirs(args.out, exist_ok=True)
        resolved = args.func(args, config)
        write_manifest(args.out, args, {"config": config, **(resolved or {})})
        return 0
    except EllipticRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if os.path.isdir(args.out):
            write_manifest(args.out, args, {"error": str(exc), "exit_code": exc.exit_code})
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

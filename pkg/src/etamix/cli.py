"""Command line entry point: ``etamix {predict,sweep,control,oracle}``.

Exit codes: 0 success, 1 invalid arguments, 2 every run failed numerically, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .control import ControlConfig
from .env import InvalidSpecError, MdpSpec, build_env, optimal_actions, parse_env_config, value_iteration
from .harness import (
    GRID_ALPHAS,
    GRID_ETAS,
    PlotSpec,
    SweepGrid,
    aggregate,
    best_per_eta,
    learning_curves,
    render_svg,
    run_sweep,
    write_aggregate_csv,
    write_raw_csv,
)
from .oracle import DivergenceError, SingularSystemError, problem_from_spec, proposition_check, tabular_features

EXIT_OK, EXIT_ARGS, EXIT_FAILED, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _seeds(text: str) -> tuple[int, ...]:
    """``10`` means ten seeds 2, 4, ..., 20; ``1,2,3`` lists them explicitly."""
    try:
        if "," in text:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return tuple(range(2, 2 * int(text) + 1, 2))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _env_options(p: argparse.ArgumentParser, default_env: str, choices) -> None:
    p.add_argument("--env", choices=choices, help=f"default {default_env}")
    p.set_defaults(default_env=default_env)
    p.add_argument("--n", type=int, help="number of non-terminal states (chains)")
    p.add_argument("--config", help="key=value environment file; command line flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="etamix", description="eta-mixture successor feature bootstrapping")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("predict", help="online prediction on a chain, RMSE per episode")
    _env_options(p, "random-walk", ["det-chain", "random-walk"])
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--alpha-sf", type=float)
    p.add_argument("--alpha-r", type=float)
    p.add_argument("--episodes", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="raw CSV path")

    p = sub.add_parser("sweep", help="grid over eta, alpha and seeds")
    _env_options(p, "random-walk", ["det-chain", "random-walk"])
    p.add_argument("--etas", type=_floats, default=GRID_ETAS)
    p.add_argument("--alphas", type=_floats, default=GRID_ALPHAS)
    p.add_argument("--seeds", type=_seeds, default=_seeds("10"))
    p.add_argument("--episodes", type=int, default=400)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results/sweep", help="output directory")

    p = sub.add_parser("control", help="eta-mixture Q-learning on a gridworld")
    _env_options(p, "gridworld", ["gridworld"])
    p.add_argument("--width", type=int, default=5)
    p.add_argument("--height", type=int, default=5)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--alpha", type=float, default=ControlConfig.alpha)
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--seeds", type=_seeds, default=_seeds("10"))
    p.add_argument("--fitted-q", action="store_true", help="learn from a replay buffer by SGD")
    p.add_argument("--buffer", type=int, default=10_000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--out", help="raw CSV path (undiscounted return per episode)")

    p = sub.add_parser("oracle", help="closed-form fixed points and the expected-update trace")
    _env_options(p, "random-walk", ["det-chain", "random-walk"])
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--csv", help="write the distance trace to this CSV")
    return parser


def _env_config(args) -> dict:
    cfg = {}
    if args.config:
        cfg.update(parse_env_config(Path(args.config).read_text()))
    if args.env:
        cfg["env"] = args.env
    cfg.setdefault("env", args.default_env)
    for key in ("n", "width", "height"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = str(val)
    return cfg


def _check_rates(*values) -> None:
    for v in values:
        if v is not None and not v > 0:
            raise ValueError(f"step sizes must be positive, got {v}")


def _predict(args) -> int:
    _check_rates(args.alpha, args.alpha_sf, args.alpha_r)
    grid = SweepGrid((args.eta,), (args.alpha,), (args.seed,), args.episodes, _env_config(args), args.gamma,
                     args.alpha_sf, args.alpha_r)
    build_env(grid.env)
    records = run_sweep(grid)
    if args.out:
        write_raw_csv(records, args.out)
    rec = records[0]
    if rec.failed:
        print(f"run failed: {rec.error}", file=sys.stderr)
        return EXIT_FAILED
    print(f"{rec.config_id} seed={rec.seed} final_rmse={rec.series[-1]:.6f} mean_rmse={np.mean(rec.series):.6f}")
    return EXIT_OK


def _sweep(args) -> int:
    _check_rates(*args.alphas)
    grid = SweepGrid(args.etas, args.alphas, args.seeds, args.episodes, _env_config(args), args.gamma)
    build_env(grid.env)
    records = run_sweep(grid, workers=args.workers)
    out = Path(args.out)
    rows = aggregate(records)
    best = best_per_eta(rows)
    write_raw_csv(records, out / "raw.csv")
    write_aggregate_csv(rows, out / "aggregate.csv")
    write_aggregate_csv(best, out / "best.csv")
    curves = learning_curves(records, {r.eta: r.alpha for r in best})
    render_svg(curves, out / "curves.svg", PlotSpec("RMSE per episode at the best step size", "episode", "RMSE"))
    render_svg(
        {"best alpha": ([r.eta for r in best], [r.metric_mean for r in best], [r.ci95_half for r in best])},
        out / "eta.svg",
        PlotSpec("mean RMSE over episodes against eta", "eta", "RMSE"),
    )
    for r in best:
        print(f"eta={r.eta:<5g} alpha={r.alpha:<5g} rmse={r.metric_mean:.4f} +- {r.ci95_half:.4f} (n={r.n_seeds})")
    if all(rec.failed for rec in records):
        return EXIT_FAILED
    return EXIT_OK


def _control(args) -> int:
    _check_rates(args.alpha)
    env_cfg = _env_config(args)
    spec = build_env(env_cfg)
    cfg = ControlConfig(eta=args.eta, gamma=args.gamma, alpha=args.alpha, steps=args.steps,
                        fitted_q=args.fitted_q, buffer=args.buffer, batch=args.batch)
    grid = SweepGrid((args.eta,), (args.alpha,), args.seeds, 1, env_cfg, args.gamma, control=cfg)
    records = run_sweep(grid, task="control")
    if args.out:
        write_raw_csv(records, args.out)
    ok = [r for r in records if not r.failed]
    for r in ok:
        tail = r.series[-20:]
        print(f"seed={r.seed} episodes={len(r.series)} last20_mean_return={np.mean(tail):.4f}")
    if isinstance(spec, MdpSpec):
        _, q = value_iteration(spec, args.gamma)
        print(f"optimal actions per state: {[sorted(a) for a in optimal_actions(q)]}")
    return EXIT_OK if ok else EXIT_FAILED


def _oracle(args) -> int:
    spec = build_env(_env_config(args))
    phi, d, P, R = problem_from_spec(spec, None, tabular_features(spec))
    try:
        report = proposition_check(phi, d, P, R, args.gamma, args.eta, n_iters=args.iters)
    except (DivergenceError, SingularSystemError) as exc:
        print(f"oracle failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(report.to_text())
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iteration", "distance"])
            for k, dist in enumerate(report.iteration_trace):
                out.writerow([k, format(dist, ".17g")])
    return EXIT_OK


COMMANDS = {"predict": _predict, "sweep": _sweep, "control": _control, "oracle": _oracle}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, InvalidSpecError, KeyError) as exc:
        print(f"etamix: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except OSError as exc:
        print(f"etamix: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

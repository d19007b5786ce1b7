"""Sweeps over (eta, alpha, seed), metric aggregation, CSV and SVG output."""

from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import fast
from .control import ControlConfig, greedy_policy, greedy_return, run_control
from .env import MdpSpec, MrpSpec, build_env, optimal_actions, true_values, value_iteration
from .learners import NumericOverflowError
from .oracle import tabular_features
from .records import RunRecord

log = logging.getLogger(__name__)

GRID_ALPHAS = (0.01, 0.1, 0.2, 0.3, 0.5)
GRID_ETAS = (0.0, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0)
GRID_SEEDS = tuple(range(2, 21, 2))

RAW_HEADER = ["task", "env", "eta", "gamma", "alpha", "alpha_sf", "alpha_r", "seed", "episode", "metric"]
AGG_HEADER = ["task", "env", "eta", "alpha", "metric_mean", "ci95_half", "n_seeds"]


@dataclass
class SweepGrid:
    etas: tuple[float, ...] = GRID_ETAS
    alphas: tuple[float, ...] = GRID_ALPHAS
    seeds: tuple[int, ...] = GRID_SEEDS
    episodes: int = 400
    env: dict = field(default_factory=lambda: {"env": "random-walk", "n": "19"})
    gamma: float = 1.0
    alpha_sf: float | None = None  # None: same as alpha
    alpha_r: float | None = None
    control: ControlConfig | None = None  # base config for control sweeps

    def __post_init__(self):
        if not (self.etas and self.alphas and self.seeds):
            raise ValueError("sweep grid lists must be non-empty")
        if any(not 0.0 <= e <= 1.0 for e in self.etas):
            raise ValueError("eta values must lie in [0, 1]")
        if self.episodes < 1:
            raise ValueError("episodes must be positive")


@dataclass
class AggregateRow:
    task: str
    env: str
    eta: float
    alpha: float
    metric_mean: float
    ci95_half: float
    n_seeds: int
    n_failed: int = 0
    single_seed: bool = False

    @property
    def config_id(self) -> str:
        return config_id(self.task, self.env, self.eta, self.alpha)


def config_id(task: str, env: str, eta: float, alpha: float) -> str:
    return f"{task}|{env}|eta={eta!r}|alpha={alpha!r}"


def cell_rng(seed: int, eta: float, alpha: float, task: str) -> np.random.Generator:
    """Generator keyed on the cell, so adding grid points leaves other cells untouched."""
    key = zlib.crc32(f"{task}|{float(eta)!r}|{float(alpha)!r}".encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def rmse(theta: np.ndarray, phi: np.ndarray, values: np.ndarray, mask: np.ndarray) -> float:
    """Root mean squared value error, uniform over the states selected by ``mask``."""
    err = (phi @ theta - values)[mask]
    return float(np.sqrt(np.mean(err**2)))


def run_prediction(
    spec: MrpSpec,
    eta: float,
    gamma: float,
    alpha: float,
    episodes: int,
    rng: np.random.Generator,
    alpha_sf: float | None = None,
    alpha_r: float | None = None,
) -> list[float]:
    """Online eta-mixture prediction with tabular features; RMSE after every episode."""
    phi = np.ascontiguousarray(tabular_features(spec).phi)
    v = true_values(spec, None, gamma)
    mask = spec.nonterminal
    d = phi.shape[1]
    theta, xi, w = np.zeros(d), np.eye(d), np.zeros(d)
    a_xi = alpha if alpha_sf is None else alpha_sf
    a_w = alpha if alpha_r is None else alpha_r
    out = []
    for _ in range(episodes):
        states = fast.sample_states(spec, rng)
        rewards = fast.transition_rewards(spec, states)
        if not fast.algorithm1_trajectory(phi, states, rewards, theta, xi, w, eta, gamma, alpha, a_xi, a_w):
            raise NumericOverflowError("parameters became non-finite")
        with np.errstate(over="ignore"):
            err = rmse(theta, phi, v, mask)
        if not math.isfinite(err):
            raise NumericOverflowError("value error overflowed")
        out.append(err)
    return out


def _env_name(env_cfg: dict) -> str:
    spec = build_env(dict(env_cfg))
    return spec.name


def _run_cell(args) -> RunRecord:
    task, env_cfg, eta, alpha, seed, grid = args
    spec = build_env(dict(env_cfg))
    a_sf = alpha if grid.alpha_sf is None else grid.alpha_sf
    a_r = alpha if grid.alpha_r is None else grid.alpha_r
    params = {
        "task": task, "env": spec.name, "eta": float(eta), "gamma": float(grid.gamma),
        "alpha": float(alpha), "alpha_sf": float(a_sf), "alpha_r": float(a_r),
    }
    rng = cell_rng(seed, eta, alpha, task)
    started = time.perf_counter()
    try:
        if task == "prediction":
            series = run_prediction(spec, eta, grid.gamma, alpha, grid.episodes, rng, a_sf, a_r)
        elif task == "control":
            if not isinstance(spec, MdpSpec):
                raise ValueError("control sweeps need an MDP environment")
            base = grid.control or ControlConfig()
            cfg = replace(base, eta=eta, gamma=grid.gamma, alpha=alpha, alpha_sf=a_sf, alpha_r=a_r)
            _, rec = run_control(spec, cfg, rng, tabular_features(spec))
            series = rec.series
        else:
            raise ValueError(f"unknown task {task!r}")
    except (FloatingPointError, ArithmeticError) as exc:
        log.warning("cell %s seed %s failed: %s", config_id(task, spec.name, eta, alpha), seed, exc)
        return RunRecord(config_id(task, spec.name, eta, alpha), seed, [], params,
                         time.perf_counter() - started, failed=True, error=str(exc))
    return RunRecord(config_id(task, spec.name, eta, alpha), seed, series, params, time.perf_counter() - started)


@dataclass
class ControlOutcome:
    eta: float
    seed: int
    wrong_states: int  # non-terminal states whose greedy action is not value-iteration optimal
    greedy_return: float
    final_return: float  # mean training return over the last ``tail`` episodes

    @property
    def optimal(self) -> bool:
        return self.wrong_states == 0


def evaluate_control(
    env: MdpSpec, config: ControlConfig, etas, seeds, tail: int = 20
) -> list[ControlOutcome]:
    """Train one learner per (eta, seed) and compare its greedy policy with value iteration."""
    phi = tabular_features(env)
    _, q_star = value_iteration(env, config.gamma)
    best = optimal_actions(q_star)
    states = np.flatnonzero(env.nonterminal)
    out = []
    for eta in etas:
        for seed in seeds:
            rng = cell_rng(seed, eta, config.alpha, "control")
            state, rec = run_control(env, replace(config, eta=eta), rng, phi)
            greedy = greedy_policy(state, phi)
            wrong = sum(int(greedy[s]) not in best[s] for s in states)
            ret = greedy_return(env, state, phi, rng, config.max_episode_steps)
            out.append(ControlOutcome(eta, seed, wrong, ret, float(np.mean(rec.series[-tail:]))))
    return out


def _sort_key(rec: RunRecord):
    p = rec.params
    return (p["task"], p["env"], p["eta"], p["alpha"], rec.seed)


def run_sweep(grid: SweepGrid, task: str = "prediction", workers: int = 1) -> list[RunRecord]:
    """Run every (eta, alpha, seed) cell; output order is independent of execution order."""
    if task == "control" and grid.gamma >= 1.0:
        raise ValueError("control needs gamma < 1")
    cells = [
        (task, tuple(sorted(grid.env.items())), eta, alpha, seed, grid)
        for eta in grid.etas
        for alpha in grid.alphas
        for seed in grid.seeds
    ]
    cells = [(t, dict(e), eta, a, s, g) for t, e, eta, a, s, g in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, cells))
    else:
        records = [_run_cell(c) for c in cells]
    return sorted(records, key=_sort_key)


def _ci95(values: np.ndarray) -> float:
    # spread of the observed seeds (no Bessel correction), over sqrt(n)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std() / math.sqrt(values.size))


def aggregate(records: list[RunRecord], reduce: str = "mean") -> list[AggregateRow]:
    """Per config: reduce each seed's series (mean over episodes or final value), then mean +- 1.96 SEM."""
    if reduce not in ("mean", "final"):
        raise ValueError(f"reduce must be 'mean' or 'final', got {reduce!r}")
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        p = rec.params
        groups.setdefault((p["task"], p["env"], p["eta"], p["alpha"]), []).append(rec)
    rows = []
    for (task, env, eta, alpha), recs in sorted(groups.items()):
        ok = sorted((r for r in recs if not r.failed), key=lambda r: r.seed)
        n_failed = len(recs) - len(ok)
        if not ok:
            rows.append(AggregateRow(task, env, eta, alpha, math.nan, math.nan, 0, n_failed))
            continue
        per_seed = np.array([np.mean(r.series) if reduce == "mean" else r.series[-1] for r in ok])
        if len(ok) == 1:
            log.warning("config %s has a single seed; CI half-width reported as 0", config_id(task, env, eta, alpha))
        # sorted by seed so float summation order does not depend on input order
        rows.append(AggregateRow(task, env, eta, alpha, float(np.mean(per_seed)), _ci95(per_seed),
                                 len(ok), n_failed, single_seed=len(ok) == 1))
    return rows


def best_per_eta(rows: list[AggregateRow], lower_is_better: bool = True) -> list[AggregateRow]:
    """For every eta, the row of the learning rate with the best mean metric."""
    best: dict[tuple, AggregateRow] = {}
    for row in rows:
        if math.isnan(row.metric_mean):
            continue
        key = (row.task, row.env, row.eta)
        cur = best.get(key)
        better = cur is None or (
            row.metric_mean < cur.metric_mean if lower_is_better else row.metric_mean > cur.metric_mean
        )
        if better:
            best[key] = row
    return [best[k] for k in sorted(best)]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_raw_csv(records: list[RunRecord], path) -> None:
    """One row per (config, seed, episode); failed runs get a single row with episode -1 and metric nan."""
    with _open_for_write(path) as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(RAW_HEADER)
        for rec in records:
            p = rec.params
            head = [p["task"], p["env"], _fmt(p["eta"]), _fmt(p["gamma"]), _fmt(p["alpha"]),
                    _fmt(p["alpha_sf"]), _fmt(p["alpha_r"]), rec.seed]
            if rec.failed:
                out.writerow(head + [-1, "nan"])
                continue
            for ep, value in enumerate(rec.series):
                out.writerow(head + [ep, _fmt(value)])


def read_raw_csv(path) -> list[RunRecord]:
    try:
        fh = Path(path).open(newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    records: dict[tuple, RunRecord] = {}
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RAW_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            params = {
                "task": row["task"], "env": row["env"], "eta": float(row["eta"]), "gamma": float(row["gamma"]),
                "alpha": float(row["alpha"]), "alpha_sf": float(row["alpha_sf"]), "alpha_r": float(row["alpha_r"]),
            }
            seed = int(row["seed"])
            key = (params["task"], params["env"], params["eta"], params["alpha"], seed)
            rec = records.get(key)
            if rec is None:
                rec = records[key] = RunRecord(
                    config_id(params["task"], params["env"], params["eta"], params["alpha"]), seed, [], params
                )
            if int(row["episode"]) < 0:
                rec.failed = True
            else:
                rec.series.append(float(row["metric"]))
    return list(records.values())


def write_aggregate_csv(rows: list[AggregateRow], path) -> None:
    with _open_for_write(path) as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(AGG_HEADER)
        for r in rows:
            out.writerow([r.task, r.env, _fmt(r.eta), _fmt(r.alpha), _fmt(r.metric_mean), _fmt(r.ci95_half), r.n_seeds])


def read_aggregate_csv(path) -> list[AggregateRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AGG_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            AggregateRow(r["task"], r["env"], float(r["eta"]), float(r["alpha"]), float(r["metric_mean"]),
                         float(r["ci95_half"]), int(r["n_seeds"]), single_seed=int(r["n_seeds"]) == 1)
            for r in reader
        ]


# --- SVG ------------------------------------------------------------------

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")


@dataclass
class PlotSpec:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 420


def render_svg(series: dict[str, tuple], path, plot: PlotSpec | None = None) -> None:
    """Line chart, one polyline per series; ``series[name] = (xs, ys)`` or ``(xs, ys, half_widths)``."""
    plot = plot or PlotSpec()
    W, H = plot.width, plot.height
    left, right, top, bottom = 70, 150, 40, 50
    pts = [(float(x), float(y)) for s in series.values() for x, y in zip(s[0], s[1]) if math.isfinite(y)]
    for s in series.values():
        if len(s) > 2:
            pts += [(float(x), float(y) + sgn * float(e)) for x, y, e in zip(*s) for sgn in (-1, 1) if math.isfinite(y)]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return left + (x - x0) / (x1 - x0) * (W - left - right)

    def sy(y):
        return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(plot.title)}</text>',
        f'<line x1="{left}" y1="{H - bottom}" x2="{W - right}" y2="{H - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{H - bottom}" stroke="black"/>',
    ]
    for i in range(5):
        xv = x0 + i * (x1 - x0) / 4
        yv = y0 + i * (y1 - y0) / 4
        parts.append(f'<text x="{sx(xv):.1f}" y="{H - bottom + 16}" text-anchor="middle" font-size="11">{xv:.3g}</text>')
        parts.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" font-size="11">{yv:.3g}</text>')
    parts.append(f'<text x="{(left + W - right) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-size="12">{escape(plot.xlabel)}</text>')
    parts.append(
        f'<text x="16" y="{(top + H - bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {(top + H - bottom) / 2:.1f})">{escape(plot.ylabel)}</text>'
    )
    for k, (name, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(s[0], s[1]) if math.isfinite(y))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        if len(s) > 2:
            for x, y, e in zip(*s):
                if math.isfinite(y) and e > 0:
                    parts.append(
                        f'<line x1="{sx(x):.2f}" y1="{sy(y - e):.2f}" x2="{sx(x):.2f}" y2="{sy(y + e):.2f}" stroke="{color}"/>'
                    )
        ly = top + 16 * k + 8
        parts.append(f'<line x1="{W - right + 12}" y1="{ly}" x2="{W - right + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{W - right + 38}" y="{ly + 4}" font-size="11">{escape(str(name))}</text>')
    parts.append("</svg>")
    with _open_for_write(path) as fh:
        fh.write("\n".join(parts) + "\n")


def learning_curves(records: list[RunRecord], alphas: dict[float, float] | None = None) -> dict[str, tuple]:
    """Seed-averaged metric per episode, one series per eta (at ``alphas[eta]`` if given)."""
    by_eta: dict[float, list[list[float]]] = {}
    for rec in records:
        eta, alpha = rec.params["eta"], rec.params["alpha"]
        if rec.failed or (alphas is not None and alphas.get(eta) != alpha):
            continue
        by_eta.setdefault(eta, []).append(rec.series)
    out = {}
    for eta in sorted(by_eta):
        arr = np.array(by_eta[eta])
        half = 1.96 * arr.std(axis=0, ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else np.zeros(arr.shape[1])
        out[f"eta={eta:g}"] = (np.arange(1, arr.shape[1] + 1), arr.mean(axis=0), half)
    return out

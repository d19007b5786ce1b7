"""19-state random walk: best-over-learning-rate RMSE as a function of eta.

Runs the full learning-rate by eta grid (10 seeds, 400 episodes by default)
and writes raw and aggregate CSVs, learning curves and the eta profile.
"""

import argparse
from pathlib import Path

from etamix.harness import (
    GRID_ALPHAS,
    GRID_ETAS,
    GRID_SEEDS,
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


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=19)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--episodes", type=int, default=400)
    ap.add_argument("--etas", type=_floats, default=GRID_ETAS)
    ap.add_argument("--alphas", type=_floats, default=GRID_ALPHAS)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/random_walk")
    args = ap.parse_args()

    grid = SweepGrid(args.etas, args.alphas, GRID_SEEDS, args.episodes,
                     {"env": "random-walk", "n": str(args.n)}, args.gamma)
    records = run_sweep(grid, workers=args.workers)
    rows = aggregate(records)
    best = best_per_eta(rows)

    out = Path(args.out)
    write_raw_csv(records, out / "raw.csv")
    write_aggregate_csv(rows, out / "aggregate.csv")
    write_aggregate_csv(best, out / "best.csv")
    render_svg(learning_curves(records, {r.eta: r.alpha for r in best}), out / "curves.svg",
               PlotSpec("RMSE per episode, best step size per eta", "episode", "RMSE"))
    render_svg({"best alpha": ([r.eta for r in best], [r.metric_mean for r in best], [r.ci95_half for r in best])},
               out / "eta_profile.svg", PlotSpec("RMSE averaged over episodes", "eta", "RMSE"))
    for r in best:
        print(f"eta={r.eta:<5g} alpha={r.alpha:<5g} rmse={r.metric_mean:.4f} +- {r.ci95_half:.4f}")
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()

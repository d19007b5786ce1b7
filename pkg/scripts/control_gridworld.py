"""5x5 gridworld: does eta-mixture Q-learning recover the optimal greedy policy?

For each eta and seed, trains for a fixed number of steps and compares the
greedy policy with value iteration. Prints per-eta counts and mean returns.
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from etamix.control import ControlConfig
from etamix.env import build_gridworld
from etamix.harness import GRID_SEEDS, evaluate_control


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=5)
    ap.add_argument("--etas", default="0,0.5,1")
    ap.add_argument("--steps", type=int, default=50_000)
    ap.add_argument("--fitted-q", action="store_true")
    ap.add_argument("--out", default="results/control")
    args = ap.parse_args()

    env = build_gridworld(args.size, args.size, (args.size - 1, args.size - 1))
    cfg = replace(ControlConfig(), steps=args.steps, fitted_q=args.fitted_q)
    etas = tuple(float(e) for e in args.etas.split(","))
    outcomes = evaluate_control(env, cfg, etas, GRID_SEEDS)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "control.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "seed", "wrong_states", "greedy_return", "final_return"])
        for o in outcomes:
            w.writerow([o.eta, o.seed, o.wrong_states, f"{o.greedy_return:.17g}", f"{o.final_return:.17g}"])
    for eta in etas:
        mine = [o for o in outcomes if o.eta == eta]
        print(f"eta={eta:<4g} optimal in {sum(o.optimal for o in mine)}/{len(mine)} seeds, "
              f"greedy return {np.mean([o.greedy_return for o in mine]):.3f}, "
              f"training return {np.mean([o.final_return for o in mine]):.3f}")


if __name__ == "__main__":
    main()

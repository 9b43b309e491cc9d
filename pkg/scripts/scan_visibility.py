#!/usr/bin/env python3
"""Scan visibility-map parameters for searcher separation.

For each (d0, e_half, beta) combo, runs a small paired battery of the MAP
and lookahead searchers and reports the per-saccade PC gap with its paired
z-score, plus the z-score projected to a full-size battery.  Used to pick
defaults where the lookahead advantage is decisive at every saccade count.

  python3 scripts/scan_visibility.py --trials 250 --combos 4,2,1 4,3,3
"""

import argparse
import sys
import time

import numpy as np

from fovsearch.evaluate import paired_difference, run_battery
from fovsearch.searchers import IdealSearcher, MAPSearcher
from fovsearch.task import TaskConfig, VisibilityMap, build_location_grid


def scan_combo(d0, e_half, beta, trials, seed, n, radius, full_trials):
    vmap = VisibilityMap(params=(("beta", beta), ("d0", d0), ("e_half", e_half)))
    locs = build_location_grid(n, radius)
    task = TaskConfig(locations=locs, visibility=vmap,
                      prior=np.full(locs.n, 1.0 / locs.n), saccade_budget=3,
                      initial_fixation=locs.center_index(), seed=seed)
    t0 = time.perf_counter()
    logs = {"map": run_battery(task, MAPSearcher(), trials, seed),
            "is": run_battery(task, IdealSearcher(), trials, seed)}
    wall = time.perf_counter() - t0
    gaps, zs, zproj = [], [], []
    for c in range(1, task.saccade_budget + 1):
        diff, se, _, _ = paired_difference(logs["is"], logs["map"], c)
        gaps.append(diff)
        z = diff / max(se, 1e-12)
        zs.append(z)
        zproj.append(z * np.sqrt(full_trials / trials))
    print(f"d0={d0:g} e_half={e_half:g} beta={beta:g}: {wall:5.0f}s | "
          f"gap {np.round(gaps, 3)} z {np.round(zs, 1)} "
          f"z@{full_trials} {np.round(zproj, 1)}")


def main(argv) -> int:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=250)
    ap.add_argument("--full-trials", type=int, default=3400)
    ap.add_argument("--seed", type=int, default=0x5EED)
    ap.add_argument("--n", type=int, default=85)
    ap.add_argument("--radius", type=float, default=8.0)
    ap.add_argument("--combos", nargs="+", default=["4,2,1", "4,3,3", "4,4,1.5"],
                    help="each combo as d0,e_half,beta")
    args = ap.parse_args(argv)
    for combo in args.combos:
        d0, e_half, beta = (float(v) for v in combo.split(","))
        scan_combo(d0, e_half, beta, args.trials, args.seed, args.n,
                   args.radius, args.full_trials)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

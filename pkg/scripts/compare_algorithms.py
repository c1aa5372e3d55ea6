"""Q, mean accuracy and status of every algorithm on a few seeds.

    python scripts/compare_algorithms.py --users 100 --servers 10 --seeds 42 43 44
"""
import argparse
import time

import numpy as np

from edgemar.harness import SWEEP_ALGORITHMS, settings_from, solve
from edgemar.scenario import ExperimentConfig, generate_scenario
from edgemar.solver_core import InfeasibleScenarioError


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=100)
    ap.add_argument("--servers", type=int, default=10)
    ap.add_argument("--lambda2", type=float, default=500.0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[42, 43, 44])
    a = ap.parse_args()
    cfg = ExperimentConfig().with_params(users=a.users, servers=a.servers, lambda2=a.lambda2)
    st = settings_from(cfg)
    print(f"{'seed':>5} {'algorithm':>9} {'Q':>12} {'acc':>7} {'status':>11} {'sec':>6}")
    Q = {alg: [] for alg in SWEEP_ALGORITHMS}
    for seed in a.seeds:
        scn = generate_scenario(cfg, seed=seed)
        for alg in SWEEP_ALGORITHMS:
            t0 = time.perf_counter()
            try:
                rep = solve(alg, scn, seed, st)
            except InfeasibleScenarioError as e:
                print(f"{seed:>5} {alg:>9}  infeasible: {e}")
                Q[alg].append(np.nan)
                continue
            Q[alg].append(rep.Q)
            print(f"{seed:>5} {alg:>9} {rep.Q:12.4f} {rep.breakdown.mean_accuracy:7.4f} "
                  f"{rep.status:>11} {time.perf_counter() - t0:6.1f}")
    print("mean Q: " + "  ".join(f"{k}={np.nanmean(v):.3f}" for k, v in Q.items()))


if __name__ == "__main__":
    main()

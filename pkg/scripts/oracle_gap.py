"""LEAO against the brute-force oracle on tiny instances.

    python scripts/oracle_gap.py --users 3 --servers 2 --seeds 20
"""
import argparse

import numpy as np

from edgemar.leao import leao_solve
from edgemar.oracle import brute_force_solve
from edgemar.scenario import ExperimentConfig, generate_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=3)
    ap.add_argument("--servers", type=int, default=2)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--grid", type=int, default=20)
    a = ap.parse_args()
    cfg = ExperimentConfig().with_params(users=a.users, servers=a.servers)
    gaps = []
    print(f"{'seed':>4} {'Q_oracle':>12} {'Q_leao':>12} {'rel gap':>10} {'slack':>9} same_A")
    for seed in range(a.seeds):
        scn = generate_scenario(cfg, seed=seed)
        o = brute_force_solve(scn, grid=a.grid)
        r = leao_solve(scn)
        gap = (r.Q - o.Q) / abs(o.Q)
        gaps.append(gap)
        same = bool(np.array_equal(np.argmax(r.vars.A_hat, 1), o.assignment))
        print(f"{seed:>4} {o.Q:12.5f} {r.Q:12.5f} {gap:10.2e} {o.grid_slack:9.1e} {same}")
    print(f"worst relative gap {max(gaps):.3e}, mean {np.mean(gaps):.3e}")


if __name__ == "__main__":
    main()

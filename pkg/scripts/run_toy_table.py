"""Exact, proposed and naive values on the binary confounded toy."""

import argparse
import warnings

from pomdp_ope.harness import ToyConfig, run_toy_table, write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="toy_table.csv")
    p.add_argument("--trajectories", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = run_toy_table(ToyConfig(num_trajectories=args.trajectories, master_seed=args.seed))
    write_csv(rows, args.out, ("epsilon", "truth", "proposed", "proposed_is", "naive", "n"))
    print(f"{'eps':>5} {'truth':>8} {'VM':>8} {'IS':>8} {'naive':>8}")
    for r in rows:
        print(f"{r['epsilon']:5.2f} {r['truth']:8.3f} {r['proposed']:8.3f} {r['proposed_is']:8.3f} {r['naive']:8.3f}")


if __name__ == "__main__":
    main()

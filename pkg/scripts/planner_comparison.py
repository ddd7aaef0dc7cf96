"""A* versus greedy best-first search on the clean suite."""
import argparse

from drivesafe.experiment import ExperimentConfig, format_table, planner_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-scenarios", type=int, default=600)
    args = ap.parse_args()
    rows = planner_comparison(ExperimentConfig(args.seed, args.n_scenarios))
    print(format_table(rows, ["algo", "intention", "m_suc", "m_cls", "m_saf", "mean_expanded", "mean_cost", "elapsed_s"]))


if __name__ == "__main__":
    main()

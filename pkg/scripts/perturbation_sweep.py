"""Five-level perturbation-effect sweep: AP collapses while safety stays flat."""
import argparse
import time

from drivesafe.experiment import ExperimentConfig, format_table, perturbation_sweep, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-scenarios", type=int, default=600)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    t0 = time.perf_counter()
    cfg = ExperimentConfig(args.seed, args.n_scenarios, sweep=perturbation_sweep(), jobs=args.jobs, out_dir=args.out)
    res = run_experiment(cfg)
    rows = [
        {"intention": r.intention.value, "setting": r.setting, "ap_easy": r.ap_easy, "ap_moderate": r.ap_moderate,
         "m_suc": r.m_suc, "m_cls": r.m_cls, "m_saf": r.m_saf}
        for r in res.report.sorted_rows()
    ]
    print(format_table(rows, list(rows[0])))
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()

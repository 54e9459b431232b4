"""Run the solar-design Monte Carlo studies and write one CSV/JSON pair each.

    python3 scripts/run_studies.py --reps 1000 --out-dir results

Studies: MSE over the full beta/epsilon grid, levels for the null-true
problems P0, P1, P2, power for P2*, and coverage on pure data.
"""

import argparse
import os
import time

from stepstress.montecarlo import StudyConfig, coverage_study, level_study, mse_study, power_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--cell", type=int, default=1, help="1-based contaminated cell")
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--only", nargs="*", help="subset of: mse level power coverage")
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    common = dict(reps=args.reps, seed=args.seed, threads=args.threads, contamination_cell=args.cell)

    jobs = [("mse", mse_study, StudyConfig(**common))]
    jobs += [(f"level_{p}", level_study, StudyConfig(problem=p, **common)) for p in ("P0", "P1", "P2")]
    jobs += [("power_P2star", power_study, StudyConfig(problem="P2*", **common))]
    jobs += [("coverage", coverage_study, StudyConfig(epsilons=(0.0,), **common))]
    for name, run, cfg in jobs:
        if args.only and name.split("_")[0] not in args.only:
            continue
        t = time.perf_counter()
        table = run(cfg)
        base = os.path.join(args.out_dir, name)
        table.write(base + ".csv", base + ".json")
        print(f"{name}: {len(table.rows)} rows in {time.perf_counter() - t:.1f} s -> {base}.csv")


if __name__ == "__main__":
    main()

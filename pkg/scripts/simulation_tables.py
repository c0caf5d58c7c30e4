"""Monte Carlo tables: bias, coverage and relative efficiency per estimator.

Example (the full bias and efficiency tables, no bootstrap)::

    python scripts/simulation_tables.py --reps 1000

Coverage needs bootstrap intervals and is slow (about 3 ms per bootstrap
fit); ``--B 500 --reps 500 --ci-modes combined`` takes tens of minutes.
"""
import argparse
import json

from stdmarker.experiment import ESTIMANDS, METHODS, MODES, ExperimentConfig, run_experiment
from stdmarker.simgen import load_scenario


def table(report, estimand, field, scale=1.0, fmt="{:8.3f}"):
    rows = [r for r in report.rows if r.estimand == estimand]
    cols = sorted({(r.population, r.mode, r.method) for r in rows})
    params = sorted({(r.index, r.parameter) for r in rows})
    header = "".join(f"{p}:{m[:3]}:{meth}".rjust(15) for p, m, meth in cols)
    lines = [f"{estimand} {field}" + (f" x{scale:g}" if scale != 1 else ""), " " * 8 + header]
    lookup = {(r.index, r.population, r.mode, r.method): getattr(r, field) for r in rows}
    for index, param in params:
        cells = []
        for key in cols:
            v = lookup.get((index, *key))
            cells.append("-".rjust(15) if v is None else fmt.format(v * scale).rjust(15))
        lines.append(f"{param:8.3f}" + "".join(cells))
    return "\n".join(lines)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default="default")
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--B", type=int, default=0)
    ap.add_argument("--seed", type=int, default=2013)
    ap.add_argument("--estimands", default=",".join(ESTIMANDS))
    ap.add_argument("--methods", default=",".join(METHODS))
    ap.add_argument("--ci-modes", default=None)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--json", help="also write the full report here")
    args = ap.parse_args()

    cfg = ExperimentConfig(
        reps=args.reps, bootstrap_B=args.B, seed=args.seed, methods=tuple(args.methods.split(",")),
        modes=MODES, estimands=tuple(args.estimands.split(",")), jobs=args.jobs,
        ci_modes=None if args.ci_modes is None else tuple(args.ci_modes.split(",")),
    )
    report = run_experiment(load_scenario(args.scenario), cfg)
    print(f"{report.reps_used}/{report.reps_requested} replicates, "
          f"{report.wall_clock_seconds:.1f} s\n")
    for est in cfg.estimands:
        print(table(report, est, "bias", 1000, "{:8.2f}"), "\n")
        print(table(report, est, "relative_efficiency", 1, "{:8.2f}"), "\n")
        if args.B:
            print(table(report, est, "coverage", 100, "{:8.1f}"), "\n")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(timing=True), fh, indent=2)


if __name__ == "__main__":
    main()

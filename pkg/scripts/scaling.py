"""Strong scaling of the sample loop over thread counts."""

import argparse
import sys

from rmlmc.coupling import KernelConfig
from rmlmc.estimators import LevelDistribution, single_term_posterior
from rmlmc.model import generate_data
from rmlmc.parallel import available_cores, benchmark_scaling, derive_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("-n", type=int, default=10_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    obs, dist, cfg = generate_data(0), LevelDistribution(), KernelConfig()
    if max(args.workers) > available_cores():
        print(f"# warning: only {available_cores()} core(s) available", file=sys.stderr)

    def task(i):
        return single_term_posterior(1.0, dist, cfg, obs, derive_stream(args.seed, i)).value

    task(0)  # compile
    report = benchmark_scaling(args.workers, args.n, task, args.repeats)
    print("workers,n,wall_seconds_median,speedup,efficiency,max_task_seconds")
    for row in report.rows():
        print(",".join(str(v) for v in row))


if __name__ == "__main__":
    main()

"""Meeting times, cost and variance of the coupled increments per level."""

import argparse

import numpy as np

from rmlmc.cli import fit_loglog_slope
from rmlmc.coupling import KernelConfig, unbiased_increment
from rmlmc.estimators import quadrature_increment
from rmlmc.fem import build_mesh
from rmlmc.model import generate_data
from rmlmc.parallel import derive_stream, parallel_map


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=4, help="levels 0..LEVELS")
    ap.add_argument("-n", type=int, default=2000, help="increments per level")
    ap.add_argument("--theta", type=float, default=1.0)
    ap.add_argument("--burn-in", type=int, default=KernelConfig.burn_in)
    ap.add_argument("--rho", type=float, default=KernelConfig.rho)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    obs = generate_data(0)
    cfg = KernelConfig(rho=args.rho, burn_in=args.burn_in)
    print("level,mean,std_error,oracle,variance,mean_tau,max_tau,mean_solves,truncated")
    widths, variances = [], []
    for level in range(args.levels + 1):
        incs = parallel_map(args.n, args.workers, lambda i: unbiased_increment(
            level, cfg, args.theta, obs, derive_stream(args.seed * 1000 + level, i)))
        values = np.array([inc.value for inc in incs])
        taus = [t for inc in incs for t in (inc.tau_fine, inc.tau_coarse) if t is not None]
        var = values.var(ddof=1)
        if level > 0:
            widths.append(build_mesh(level).width)
            variances.append(var)
        print(f"{level},{values.mean():.5f},{np.sqrt(var / args.n):.5f},"
              f"{quadrature_increment(args.theta, level, obs):.5f},{var:.4g},"
              f"{np.mean(taus):.1f},{max(taus)},{np.mean([inc.pde_solves for inc in incs]):.0f},"
              f"{sum(inc.truncated for inc in incs)}")
    if len(widths) > 1:
        print(f"# variance exponent {fit_loglog_slope(widths, variances):.3f}")


if __name__ == "__main__":
    main()

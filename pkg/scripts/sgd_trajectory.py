"""SGD for the MAP of theta, compared with the quadrature optimum."""

import argparse

from rmlmc.coupling import KernelConfig
from rmlmc.estimators import LevelDistribution
from rmlmc.model import generate_data
from rmlmc.sgd import SgdConfig, map_oracle, run_sgd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha1", type=float, nargs="+", default=[SgdConfig.alpha1])
    ap.add_argument("--iters", type=int, default=SgdConfig.n_iters)
    ap.add_argument("--batch", type=int, default=SgdConfig.samples_per_step)
    ap.add_argument("--parametrization", choices=["log", "theta"], default="log")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    obs = generate_data(0)
    theta_map = map_oracle(obs)
    print(f"# oracle theta_MAP {theta_map:.5f}")
    print("alpha1,n,theta")
    for alpha in args.alpha1:
        cfg = SgdConfig(alpha1=alpha, n_iters=args.iters, samples_per_step=args.batch,
                        parametrization=args.parametrization)
        traj = run_sgd(cfg, LevelDistribution(), KernelConfig(), obs, seed=args.seed, workers=args.workers)
        for n, theta in enumerate(traj.thetas):
            if n % 10 == 0 or n == args.iters:
                print(f"{alpha},{n},{theta:.6f}")
        print(f"# alpha1={alpha}: final {traj.final:.5f}, error {abs(traj.final - theta_map):.5f}")


if __name__ == "__main__":
    main()

"""MSE of the single-term estimator against the quadrature oracle, optionally plotted (needs matplotlib)."""

import argparse

from rmlmc.cli import _observations, mse_study
from rmlmc.config import load_config
from rmlmc.estimators import quadrature_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--plot", help="write a log-log plot to this file")
    args = ap.parse_args()

    cfg = load_config(args.config)
    obs = _observations(cfg, None)
    reference = quadrature_reference(cfg.run.theta, cfg.run.oracle_level, obs, cfg.run.oracle_nodes).posterior_mean
    _, n_values, mse, slope = mse_study(cfg, obs, reference)
    print("n,mse,n_times_mse")
    for n, e in zip(n_values, mse):
        print(f"{n},{e:.6e},{n * e:.4f}")
    print(f"# slope {slope:.3f}")
    if args.plot:
        import matplotlib.pyplot as plt
        plt.loglog(n_values, mse, "o-", label="single-term rMLMC")
        plt.loglog(n_values, [mse[0] * n_values[0] / n for n in n_values], "k--", label="1/N")
        plt.xlabel("N")
        plt.ylabel("MSE")
        plt.legend()
        plt.savefig(args.plot, dpi=150)


if __name__ == "__main__":
    main()

"""Observation error of the FEM hierarchy against a level-10 reference."""

import argparse

import numpy as np

from rmlmc.cli import fit_loglog_slope
from rmlmc.fem import DiffusionField, build_mesh, forward_map
from rmlmc.model import observation_points


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--draws", type=int, default=20)
    ap.add_argument("--max-level", type=int, default=5)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    field_, points = DiffusionField(), observation_points(50)
    draws = np.random.default_rng(args.seed).uniform(-1, 1, (args.draws, 2))
    ref = [forward_map(build_mesh(10), field_, u, points) for u in draws]
    widths, errs = [], []
    print("level,h,mean_sq_error")
    for level in range(args.max_level + 1):
        mesh = build_mesh(level)
        err = np.mean([np.sum((forward_map(mesh, field_, u, points) - r) ** 2) for u, r in zip(draws, ref)])
        widths.append(mesh.width)
        errs.append(err)
        print(f"{level},{mesh.width:.6g},{err:.6e}")
    print(f"# fitted exponent {fit_loglog_slope(widths, errs):.3f}")


if __name__ == "__main__":
    main()

"""Command-line driver: ``rmlmc {generate-data,estimate,mse-study,sgd,scaling}``.

Exit status is 0 on success, 1 for invalid configuration or arguments and 2
for failures while running.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import io
import math
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .estimators import (
    TruncationError,
    posterior_samples,
    quadrature_reference,
    rmlmc_estimate,
    single_term_posterior,
)
from .model import ObservationSet, dumps_observations, generate_data, load_observations, save_observations
from .parallel import available_cores, benchmark_scaling, derive_stream
from .sgd import map_oracle, run_sgd

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


# -- helpers --------------------------------------------------------------------------------

def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.run.workers = args.workers
    if getattr(args, "strict", False):
        cfg.run.strict = True
    if getattr(args, "n", None) is not None:
        cfg.run.n = args.n
    if getattr(args, "theta", None) is not None:
        cfg.run.theta = args.theta
    return cfg.validate()


def _observations(cfg: ExperimentConfig, data_path, seed: int | None = None) -> ObservationSet:
    """Load ``data_path``, or simulate with ``seed`` (default ``problem.data_seed``)."""
    if data_path is not None:
        return load_observations(data_path)
    p = cfg.problem
    return generate_data(p.data_seed if seed is None else seed, p.theta_true, tuple(p.x_true), p.gen_level, p.m,
                         offset=p.offset, field_=cfg.field_())


@contextlib.contextmanager
def _csv_sink(path):
    """CSV writer on ``path``, or stdout when no path is given."""
    if path is None:
        yield csv.writer(sys.stdout, lineterminator="\n")
        sys.stdout.flush()
        return
    with open(path, "w", newline="") as fh:
        yield csv.writer(fh, lineterminator="\n")


def _report(args, line: str):
    # keep stdout clean for the CSV when no output file was requested
    print(line, file=sys.stderr if args.output is None else sys.stdout)


def _oracle(cfg: ExperimentConfig, obs: ObservationSet, theta: float) -> float:
    return quadrature_reference(theta, cfg.run.oracle_level, obs, cfg.run.oracle_nodes).posterior_mean


def _int_list(flag: str, text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def fit_loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# -- subcommands ----------------------------------------------------------------------------

def cmd_generate_data(cfg: ExperimentConfig, args) -> int:
    obs = _observations(cfg, None, seed=cfg.run.seed)
    if args.output is None:
        text = dumps_observations(obs)
        sys.stdout.write(text)
        digest = hashlib.sha256(text.encode()).hexdigest()
        print(f"sha256 {digest}", file=sys.stderr)
        return EXIT_OK
    digest = save_observations(obs, args.output)
    print(f"wrote {obs.m} observations to {args.output}")
    print(f"sha256 {digest}")
    return EXIT_OK


def cmd_estimate(cfg: ExperimentConfig, args) -> int:
    obs = _observations(cfg, args.data)
    r = cfg.run
    summary = rmlmc_estimate(r.theta, r.n, cfg.level_distribution(), cfg.kernel_config(), obs,
                             seed=r.seed, workers=r.workers, strict=r.strict)
    with _csv_sink(args.output) as out:
        out.writerow(["i", "level", "increment", "z_value", "pde_solves", "kernel_steps"])
        for i, s in enumerate(summary.samples):
            out.writerow([i, s.level, repr(s.increment), repr(s.value), s.pde_solves, s.kernel_steps])
    _report(args, (f"mean={summary.mean!r} std_error={summary.std_error!r} n={summary.n} "
                   f"pde_solves={summary.total_cost['pde_solves']} "
                   f"kernel_steps={summary.total_cost['kernel_steps']} "
                   f"truncation_count={summary.truncation_count}"))
    if args.oracle:
        ref = _oracle(cfg, obs, r.theta)
        z = (summary.mean - ref) / summary.std_error if summary.n > 1 else math.nan
        _report(args, f"oracle={ref!r} level={r.oracle_level} z_score={z:.3f}")
    return EXIT_OK


def mse_study(cfg: ExperimentConfig, obs: ObservationSet, reference: float):
    """Rows ``(N, rep, estimate, sq_error)``; repetition ``rep`` uses root seed ``seed + rep``.

    Within a repetition the estimates for the different ``N`` are nested prefixes of
    one sample sequence, so each repetition costs ``max(N)`` samples.
    """
    r = cfg.run
    dist, kcfg = cfg.level_distribution(), cfg.kernel_config()
    n_values = sorted(cfg.mse.n_values)
    rows = []
    for rep in range(cfg.mse.repetitions):
        samples = posterior_samples(r.theta, n_values[-1], dist, kcfg, obs,
                                    seed=r.seed + rep, workers=r.workers)
        trunc = sum(s.truncated for s in samples)
        if r.strict and trunc:
            raise TruncationError(f"repetition {rep}: {trunc} increments hit max_iters")
        values = np.array([s.value for s in samples])
        prefix = np.cumsum(values)
        for n in n_values:
            est = float(prefix[n - 1] / n)
            rows.append((n, rep, est, (est - reference) ** 2))
    mse = [np.mean([row[3] for row in rows if row[0] == n]) for n in n_values]
    return rows, n_values, mse, fit_loglog_slope(n_values, mse)


def cmd_mse_study(cfg: ExperimentConfig, args) -> int:
    if args.n_values:
        cfg.mse.n_values = _int_list("--n-values", args.n_values)
    if args.repetitions is not None:
        cfg.mse.repetitions = args.repetitions
    cfg.validate()
    obs = _observations(cfg, args.data)
    reference = _oracle(cfg, obs, cfg.run.theta)
    rows, n_values, mse, slope = mse_study(cfg, obs, reference)
    with _csv_sink(args.output) as out:
        out.writerow(["n", "repetition", "estimate", "squared_error"])
        for n, rep, est, err in rows:
            out.writerow([n, rep, repr(est), repr(err)])
    for n, v in zip(n_values, mse):
        _report(args, f"N={n} mse={v:.6g}")
    _report(args, f"oracle={reference!r} slope={slope:.4f}")
    return EXIT_OK


def cmd_sgd(cfg: ExperimentConfig, args) -> int:
    obs = _observations(cfg, args.data)
    r = cfg.run
    traj = run_sgd(cfg.sgd_config(), cfg.level_distribution(), cfg.kernel_config(), obs,
                   seed=r.seed, workers=r.workers, strict=r.strict)
    with _csv_sink(args.output) as out:
        out.writerow(["n", "theta", "grad_estimate", "step_cost"])
        out.writerow([0, repr(traj.thetas[0]), "", 0])
        for n, (theta, grad, cost) in enumerate(zip(traj.thetas[1:], traj.grad_estimates,
                                                    traj.costs), start=1):
            out.writerow([n, repr(theta), repr(grad), cost])
    ref = map_oracle(obs, r.oracle_level, r.oracle_nodes)
    _report(args, f"final_theta={traj.final!r} oracle_theta_map={ref!r} "
                  f"abs_error={abs(traj.final - ref):.4g} truncations={traj.truncations}")
    return EXIT_OK


def cmd_scaling(cfg: ExperimentConfig, args) -> int:
    if args.worker_list:
        cfg.scaling.workers = _int_list("--worker-list", args.worker_list)
        cfg.validate()
    cores = available_cores()
    if max(cfg.scaling.workers) > cores:
        print(f"warning: {max(cfg.scaling.workers)} workers requested on {cores} core(s); "
              "efficiency will be bounded by 1/oversubscription", file=sys.stderr)
    obs = _observations(cfg, args.data)
    r = cfg.run
    dist, kcfg = cfg.level_distribution(), cfg.kernel_config()

    def task(i):
        return single_term_posterior(r.theta, dist, kcfg, obs, derive_stream(r.seed, i)).value

    report = benchmark_scaling(cfg.scaling.workers, cfg.scaling.n, task, cfg.scaling.repeats)
    if args.output is None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["workers", "n", "wall_seconds_median", "speedup", "efficiency",
                         "max_task_seconds"])
        writer.writerows(report.rows())
        sys.stdout.write(buf.getvalue())
    else:
        report.write_csv(args.output)
    for m, e in zip(report.worker_counts, report.efficiency):
        _report(args, f"workers={m} efficiency={e:.3f}")
    return EXIT_OK


COMMANDS = {
    "generate-data": cmd_generate_data,
    "estimate": cmd_estimate,
    "mse-study": cmd_mse_study,
    "sgd": cmd_sgd,
    "scaling": cmd_scaling,
}


# -- argument parsing -----------------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # accepted before or after the subcommand; SUPPRESS keeps the subparser from
    # overwriting a value given before it
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="YAML experiment configuration")
    p.add_argument("--seed", type=int, default=d(None), help="root seed (overrides run.seed)")
    p.add_argument("--workers", type=int, default=d(None), help="worker threads (overrides run.workers)")
    p.add_argument("--strict", action="store_true", default=d(False),
                   help="fail if any increment hits max_iters")
    p.add_argument("--oracle", action="store_true", default=d(False),
                   help="print the quadrature reference next to the result")
    p.add_argument("--output", default=d(None), help="output file (default: stdout)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmlmc", parents=[_global_flags(False)],
                                     description="Unbiased multilevel MCMC for an elliptic inverse problem.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    sub.add_parser("generate-data", parents=[common], help="simulate and write observations")

    for name, helptext in [("estimate", "single-term rMLMC posterior mean of the theta-score"),
                           ("mse-study", "MSE against the oracle over N and repetitions"),
                           ("sgd", "stochastic gradient ascent for theta_MAP"),
                           ("scaling", "strong-scaling benchmark")]:
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--data", help="observation file (default: generate from the config)")
        sp.add_argument("--theta", type=float, help="overrides run.theta")
        sp.add_argument("-n", "--n", type=int, help="overrides run.n")
        if name == "mse-study":
            sp.add_argument("--n-values", help="comma-separated N grid")
            sp.add_argument("--repetitions", type=int)
        if name == "scaling":
            sp.add_argument("--worker-list", help="comma-separated worker counts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        print(f"cannot read config {args.config}: {err.strerror}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        print(f"I/O error on {err.filename}: {err.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    except (TruncationError, ArithmeticError, RuntimeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

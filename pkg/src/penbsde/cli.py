"""Experiment harness: subcommands solve, policy, facelift, oracle-compare, validate.

Outputs are CSV files (column orders are a public contract, see README) plus
matplotlib figures rendered alongside.  Exit codes: 0 success, 2 config
error, 3 numerical failure, 4 precondition violation.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import figures
from .bsde import RegressionBasis, solve_bsde, solve_penalized_sequence
from .config import ExperimentConfig, load_config, serialize_config
from .errors import ConfigError, NumericalError, PreconditionError
from .facelift import FaceliftConfig, terminal_jump_diagnostic
from .model import builtin_model, validate_model
from .oracle import brute_force_dp, coarse_lattice_value, default_grid1d, solve_hjb_fd
from .policy import evaluate_policy_strong, evaluate_policy_weak, extract_feedback
from .simulate import TimeGrid, euler_uncontrolled, gen_brownian


def _build(cfg: ExperimentConfig):
    model = builtin_model(cfg.model_name, **cfg.model_params)
    grid = TimeGrid.uniform(cfg.T, cfg.m)
    if cfg.basis_path_features:
        basis = RegressionBasis.with_path_stats(model.dims.d, cfg.basis_degree)
    else:
        basis = RegressionBasis.polynomial(model.dims.d, cfg.basis_degree)
    return model, grid, basis


def _facelift_config(cfg: ExperimentConfig) -> FaceliftConfig:
    return FaceliftConfig(
        l_max=cfg.facelift_l_max,
        coarse_points=cfg.facelift_coarse_points,
        refine_iters=cfg.facelift_refine_iters,
    )


def _write_rows(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_solve(cfg: ExperimentConfig, out_dir: str, threads: int) -> int:
    model, grid, basis = _build(cfg)
    report = solve_penalized_sequence(
        model, grid, cfg.N, cfg.seed,
        basis=basis, j_schedule=cfg.j_schedule, x0=cfg.x0, threads=threads,
        bandwidth=cfg.basis_bandwidth,
    )
    report.write_csv(os.path.join(out_dir, "penalty_report.csv"))
    with open(os.path.join(out_dir, "solve_summary.txt"), "w") as fh:
        fh.write(f"model = {cfg.model_name}\n")
        fh.write(f"limit_estimate = {report.limit_estimate!r}\n")
        fh.write(f"extrapolated = {str(report.extrapolated).lower()}\n")
        fh.write(f"monotone_ok = {str(report.monotone_ok).lower()}\n")
        fh.write(f"last_increment = {report.y0_by_j[-1] - report.y0_by_j[-2]!r}\n"
                 if len(cfg.j_schedule) > 1 else "last_increment = nan\n")
    if cfg.figures:
        figures.save(
            figures.penalty_convergence(report),
            os.path.join(out_dir, "penalty_convergence.png"),
        )
    print(f"limit_estimate = {report.limit_estimate:.6f} (monotone_ok={report.monotone_ok})")
    return 0


def cmd_policy(cfg: ExperimentConfig, out_dir: str, threads: int) -> int:
    model, grid, basis = _build(cfg)
    bw = gen_brownian(grid, cfg.N, model.dims.n, cfg.seed)
    paths = euler_uncontrolled(model, grid, bw, cfg.x0)
    sol = solve_bsde(
        model, grid, paths, bw, driver="penalized", j=cfg.policy_j, basis=basis,
        bandwidth=cfg.basis_bandwidth,
    )
    policy = extract_feedback(model, sol)
    strong = evaluate_policy_strong(model, grid, policy, cfg.N, cfg.seed, x0=cfg.x0)
    weak = evaluate_policy_weak(model, grid, policy, cfg.N, cfg.seed, x0=cfg.x0)
    rows = [
        [cfg.model_name, repr(float(cfg.policy_j)), mode, repr(pv.estimate),
         repr(pv.stderr), cfg.N, cfg.seed, cfg.m]
        for mode, pv in (("strong", strong), ("weak", weak))
    ]
    _write_rows(
        os.path.join(out_dir, "policy_report.csv"),
        ["model", "j", "mode", "estimate", "stderr", "N", "seed", "m"],
        rows,
    )
    gap = strong.estimate - sol.y0
    with open(os.path.join(out_dir, "policy_summary.txt"), "w") as fh:
        fh.write(f"model = {cfg.model_name}\n")
        fh.write(f"j = {cfg.policy_j!r}\n")
        fh.write(f"y0 = {sol.y0!r}\n")
        fh.write(f"y0_stderr = {sol.y0_stderr!r}\n")
        fh.write(f"strong = {strong.estimate!r}\n")
        fh.write(f"weak = {weak.estimate!r}\n")
        fh.write(f"sandwich_gap = {gap!r}\n")
        fh.write(f"combined_stderr = {sol.y0_stderr + strong.stderr!r}\n")
    if cfg.figures:
        figures.save(
            figures.policy_gap(cfg.model_name, cfg.policy_j, sol.y0, sol.y0_stderr, strong, weak),
            os.path.join(out_dir, "policy_gap.png"),
        )
    print(
        f"y0(j={cfg.policy_j:g}) = {sol.y0:.6f}, strong = {strong.estimate:.6f}, "
        f"weak = {weak.estimate:.6f}"
    )
    return 0


def cmd_facelift(cfg: ExperimentConfig, out_dir: str, threads: int) -> int:
    model, _, basis = _build(cfg)
    fl_cfg = _facelift_config(cfg)
    rows = []
    gaps_h, gaps_lift = [], []
    for m in cfg.facelift_m_values:
        grid = TimeGrid.uniform(cfg.T, m)
        diag = terminal_jump_diagnostic(
            model, grid, cfg.N, cfg.seed,
            j_large=cfg.facelift_j_scale * m, basis=basis, config=fl_cfg, x0=cfg.x0,
            bandwidth=cfg.basis_bandwidth,
        )
        rows.append([m, "h", repr(diag.y0_h), repr(diag.stderr_h), repr(diag.gap_h)])
        rows.append(
            [m, "facelift", repr(diag.y0_lift), repr(diag.stderr_lift), repr(diag.gap_lift)]
        )
        gaps_h.append(diag.gap_h)
        gaps_lift.append(diag.gap_lift)
    _write_rows(
        os.path.join(out_dir, "facelift_report.csv"),
        ["m", "terminal_kind", "y0", "stderr", "gap_at_T_minus"],
        rows,
    )
    if cfg.figures:
        figures.save(
            figures.facelift_gaps(cfg.model_name, cfg.facelift_m_values, gaps_h, gaps_lift),
            os.path.join(out_dir, "facelift_gaps.png"),
        )
    print(f"gap_h = {gaps_h}, gap_lift = {gaps_lift}")
    return 0


def cmd_oracle_compare(cfg: ExperimentConfig, out_dir: str, threads: int) -> int:
    model, grid, basis = _build(cfg)
    report = solve_penalized_sequence(
        model, grid, cfg.N, cfg.seed,
        basis=basis, j_schedule=cfg.j_schedule, x0=cfg.x0, threads=threads,
        bandwidth=cfg.basis_bandwidth,
    )
    grid1d = default_grid1d(model, cfg.T, cfg.x0, nx=cfg.oracle_nx,
                            width_std=cfg.oracle_width_std)
    hjb = solve_hjb_fd(model, cfg.T, grid1d).value_at(cfg.x0)
    dp = brute_force_dp(model, cfg.T, cfg.oracle_dp_m, cfg.x0, cfg.oracle_dp_b_grid)
    coarse, coarse_se = coarse_lattice_value(
        model, cfg.T, cfg.oracle_dp_m, cfg.oracle_dp_b_grid,
        N=cfg.N, seed=cfg.seed, x0=cfg.x0,
    )
    rel_gap = abs(report.limit_estimate - hjb) / (1.0 + abs(hjb))
    dp_gap = abs(coarse - dp)
    _write_rows(
        os.path.join(out_dir, "oracle_compare.csv"),
        ["bsde_limit", "hjb_value", "dp_value", "coarse_bsde_value",
         "rel_gap_bsde_hjb", "abs_gap_coarse_dp"],
        [[repr(report.limit_estimate), repr(hjb), repr(dp), repr(coarse),
          repr(rel_gap), repr(dp_gap)]],
    )
    if cfg.figures:
        figures.save(
            figures.oracle_compare(cfg.model_name, report.limit_estimate, hjb, dp, coarse),
            os.path.join(out_dir, "oracle_compare.png"),
        )
    print(
        f"bsde_limit = {report.limit_estimate:.6f}, hjb = {hjb:.6f} "
        f"(rel gap {rel_gap:.4f}), dp = {dp:.6f} (|coarse_bsde - dp| = {dp_gap:.4f})"
    )
    return 0


def cmd_validate(cfg: ExperimentConfig, out_dir: str, threads: int) -> int:
    model = builtin_model(cfg.model_name, **cfg.model_params)
    report = validate_model(model, trials=100, seed=cfg.seed)
    print(report.summary())
    with open(os.path.join(out_dir, "validation_report.txt"), "w") as fh:
        fh.write(report.summary() + "\n")
    if not report.passed:
        raise PreconditionError("model validation failed; see validation_report.txt")
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "policy": cmd_policy,
    "facelift": cmd_facelift,
    "oracle-compare": cmd_oracle_compare,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="penbsde",
        description="Penalized-BSDE solver for combined regular/singular stochastic control",
    )
    parser.add_argument("--config", help="experiment config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out-dir", help="override the config output directory")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker threads for independent penalty levels (never changes numerics)",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg.validate()
        if args.seed is not None:
            cfg.seed = args.seed
        out_dir = args.out_dir or cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config_used.txt"), "w") as fh:
            fh.write(serialize_config(cfg))
        return _COMMANDS[args.command](cfg, out_dir, max(args.threads, 1))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PreconditionError as exc:
        print(f"precondition violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Batch front door: tabulate, solve, verify, report.

Exit codes: 0 success; 2 configuration errors; 3 numeric failures; 4
conductivity-window exits; 5 stalled or unconverged solves; 6 verification
suite failures.  All written artifacts are deterministic functions of the
configuration hash and seed (timing is printed, never written).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import flowfn, nashmoser, propagators, verify
from .background import ConfigurationError
from .config import load_config
from .flowfn import TableRangeError
from .graded import CompatibilityError, GridError, field_to_csv
from .linsolve import PositivityError
from .nashmoser import NewtonDivergenceError, StallError, WindowExitError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_WINDOW = 4
EXIT_STALL = 5
EXIT_VERIFY = 6


def _write_json(path, payload):
    with open(path, "w", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_window(report):
    status = "pass" if report.passed else "FAIL"
    print(
        f"sigma window [{-report.window:.3g}, {report.window:.3g}]: "
        f"min {report.sigma_min:.6g} (floor {report.floor:.6g}), "
        f"|dlog sigma| {report.max_log_slope:.6g} "
        f"(budget {report.log_slope_budget:.6g}) -> {status}"
    )
    if report.remedy:
        print(f"hint: {report.remedy}")


def run_tabulate(config_path, out_dir):
    """Tabulate the flow function; write flow_table.csv and the kernel cache."""
    cfg = load_config(config_path)
    bg = cfg.background()
    os.makedirs(out_dir, exist_ok=True)
    try:
        table = flowfn.tabulate(
            bg, cfg["m2_max"], cfg["n_m2"], background_hash=cfg.hash
        )
    except (ValueError, RuntimeError) as exc:
        if isinstance(exc, (GridError, ConfigurationError)):
            raise
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    table.to_csv(os.path.join(out_dir, "flow_table.csv"))
    cache = propagators.KernelCache(
        os.path.join(out_dir, "kernel_cache"), cfg.hash
    )
    for n in range(bg.n_modes + 1):
        cache.get_or_build(bg, n, 0.0)

    window = flowfn.check_sigma_window(
        table, cfg["sigma_floor"], cfg["log_slope_budget"], cfg["window"]
    )
    _print_window(window)
    print(f"flow table written to {out_dir} (config hash {cfg.hash})")
    return EXIT_OK


def run_solve(config_path, method, out_dir):
    """Solve the flow; write solution.csv, residuals.csv, report.json."""
    cfg = load_config(config_path)
    bg = cfg.background()
    grid = cfg.flow_grid()
    psi, beta = cfg.boundary_data(grid)
    params = cfg.solver_params()
    os.makedirs(out_dir, exist_ok=True)

    table = flowfn.tabulate(bg, cfg["m2_max"], cfg["n_m2"], background_hash=cfg.hash)
    solvers = {
        "nash-moser": nashmoser.nash_moser_solve,
        "newton": nashmoser.newton_solve,
        "march": nashmoser.march_solve,
    }
    try:
        solution, report = solvers[method](
            table, grid, psi, beta, params=params, config_hash=cfg.hash
        )
    except WindowExitError as exc:
        print(f"window exit: {exc}", file=sys.stderr)
        return EXIT_WINDOW
    except (StallError, NewtonDivergenceError) as exc:
        print(f"solver stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    except (PositivityError, TableRangeError) as exc:
        print(f"window exit: {exc}", file=sys.stderr)
        return EXIT_WINDOW

    field_to_csv(solution, os.path.join(out_dir, "solution.csv"))
    with open(os.path.join(out_dir, "residuals.csv"), "w", newline="") as fh:
        fh.write("t,res0,res2\n")
        for t, r0, r2 in report.residual_history:
            fh.write(f"{t:.17g},{r0:.17g},{r2:.17g}\n")
    _write_json(os.path.join(out_dir, "report.json"), report.to_dict())
    _write_log(os.path.join(out_dir, "run.jsonl"), cfg, report)

    print(
        f"{method}: {report.termination} after {report.iterations} iterations, "
        f"final res0 {report.final_res0:.6g} (wall {report.wall_clock:.2f} s)"
    )
    if report.termination == "converged":
        return EXIT_OK
    if report.termination == "window_exit":
        print(report.diagnostics.get("reason", ""), file=sys.stderr)
        return EXIT_WINDOW
    print(report.diagnostics.get("reason", ""), file=sys.stderr)
    return EXIT_STALL


def _write_log(path, cfg, report):
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps({"event": "start", "config_hash": cfg.hash,
                             "seed": cfg.seed}, sort_keys=True) + "\n")
        for t, r0, r2 in report.residual_history:
            fh.write(json.dumps({"event": "step", "t": t, "res0": r0, "res2": r2},
                                sort_keys=True) + "\n")
        fh.write(json.dumps({"event": "end",
                             "termination": report.termination}, sort_keys=True) + "\n")


def run_verify(config_path, suite, out_dir, inject_sigma_violation=False):
    """Run the named invariant suites; write verify.json with fitted constants."""
    cfg = load_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    names = list(verify.SUITES) if suite == "all" else [suite]
    rng = np.random.default_rng(cfg.seed)

    table = None
    if "graded" in names or "linsolve" in names:
        bg = cfg.background()
        table = flowfn.tabulate(
            bg, cfg["m2_max"], cfg["n_m2"], background_hash=cfg.hash
        )

    reports = {}
    for name in names:
        kwargs = {}
        if name in ("graded", "linsolve"):
            kwargs["table"] = table
        if name == "linsolve":
            kwargs["inject_sigma_violation"] = inject_sigma_violation
        rep = verify.SUITES[name](cfg.values, rng, **kwargs)
        reports[name] = rep
        for check in rep.checks:
            mark = "pass" if check.passed else "FAIL"
            print(f"[{name}] {check.name}: {mark} (value {check.value:.6g}, "
                  f"threshold {check.threshold:.6g})")

    payload = {
        "schema_version": "v1",
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "suites": {k: v.to_dict() for k, v in reports.items()},
        "passed": all(v.passed for v in reports.values()),
    }
    _write_json(os.path.join(out_dir, "verify.json"), payload)
    return EXIT_OK if payload["passed"] else EXIT_VERIFY


def run_report(out_dir):
    """Render gnuplot-ready data files and a plain-text summary from artifacts."""
    found = False
    table_path = os.path.join(out_dir, "flow_table.csv")
    if os.path.exists(table_path):
        found = True
        rows = np.loadtxt(table_path, delimiter=",", skiprows=1)
        with open(os.path.join(out_dir, "flow_curves.dat"), "w", newline="") as fh:
            fh.write("# m2 G sigma A2\n")
            for row in np.atleast_2d(rows):
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    resid_path = os.path.join(out_dir, "residuals.csv")
    if os.path.exists(resid_path):
        found = True
        rows = np.loadtxt(resid_path, delimiter=",", skiprows=1)
        with open(os.path.join(out_dir, "residual_decay.dat"), "w", newline="") as fh:
            fh.write("# t res0 res2\n")
            for row in np.atleast_2d(rows):
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    sol_path = os.path.join(out_dir, "solution.csv")
    if os.path.exists(sol_path):
        found = True
        raw = np.loadtxt(sol_path, delimiter=",", skiprows=1)
        phis = np.unique(raw[:, 0])
        ks = np.unique(raw[:, 1])
        values = raw[:, 2].reshape(phis.size, ks.size)
        slice_idx = np.unique(np.linspace(0, ks.size - 1, 9).astype(int))
        with open(os.path.join(out_dir, "solution_slices.dat"), "w", newline="") as fh:
            fh.write("# phi u(phi, k) blocks at fixed k\n")
            for j in slice_idx:
                fh.write(f"# k = {ks[j]:.17g}\n")
                for i, phi in enumerate(phis):
                    fh.write(f"{phi:.17g} {values[i, j]:.17g}\n")
                fh.write("\n\n")

    summary_lines = []
    report_path = os.path.join(out_dir, "report.json")
    if os.path.exists(report_path):
        found = True
        with open(report_path) as fh:
            rep = json.load(fh)
        summary_lines += [
            f"method: {rep['method']}",
            f"termination: {rep['termination']}",
            f"iterations: {rep['iterations']}",
            f"final res0: {rep['final_res0']:.6g}",
            f"final res2: {rep['final_res2']:.6g}",
            f"max ||u||_4: {rep['seminorm4_max']:.6g}",
            f"config hash: {rep['config_hash']}",
        ]
    verify_path = os.path.join(out_dir, "verify.json")
    if os.path.exists(verify_path):
        found = True
        with open(verify_path) as fh:
            ver = json.load(fh)
        summary_lines.append(f"verification passed: {ver['passed']}")
        for sname, suite in sorted(ver["suites"].items()):
            for key, val in sorted(suite["fitted_constants"].items()):
                summary_lines.append(f"fitted {sname}.{key}: {val:.6g}")

    if not found:
        print(f"no artifacts found in {out_dir}", file=sys.stderr)
        return EXIT_CONFIG

    if summary_lines:
        with open(os.path.join(out_dir, "summary.txt"), "w", newline="") as fh:
            fh.write("\n".join(summary_lines) + "\n")
        print("\n".join(summary_lines))
    print(f"report files written to {out_dir}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="csflow",
        description="Flow-equation tabulation, solving, and verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_tab = sub.add_parser("tabulate", help="tabulate the flow function")
    p_tab.add_argument("config")
    p_tab.add_argument("--out", default="csflow_out")

    p_solve = sub.add_parser("solve", help="solve the flow problem")
    p_solve.add_argument("config")
    p_solve.add_argument(
        "--method",
        choices=("nash-moser", "newton", "march"),
        default="nash-moser",
    )
    p_solve.add_argument("--out", default="csflow_out")

    p_ver = sub.add_parser("verify", help="run invariant suites")
    p_ver.add_argument("config")
    p_ver.add_argument(
        "--suite",
        choices=("propagators", "flowfn", "graded", "linsolve", "all"),
        default="all",
    )
    p_ver.add_argument("--out", default="csflow_out")
    p_ver.add_argument(
        "--inject-sigma-violation",
        action="store_true",
        help="sabotage hook: feed a negative conductivity into the linsolve suite",
    )

    p_rep = sub.add_parser("report", help="render plots data and a summary")
    p_rep.add_argument("out_dir")

    args = parser.parse_args(argv)
    try:
        if args.command == "tabulate":
            return run_tabulate(args.config, args.out)
        if args.command == "solve":
            return run_solve(args.config, args.method, args.out)
        if args.command == "verify":
            return run_verify(
                args.config,
                args.suite,
                args.out,
                inject_sigma_violation=args.inject_sigma_violation,
            )
        if args.command == "report":
            return run_report(args.out_dir)
    except (ConfigurationError, GridError, CompatibilityError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

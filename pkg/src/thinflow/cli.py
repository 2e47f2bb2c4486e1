"""Command-line entry point: run, reconstruct, audit and closure-table.

Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 numerical
failure (the message carries the failing step and time).  All outputs are CSV
with 17-significant-digit floats, so repeated runs of the same config are
byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import audit, closures, stepping
from .config import ConfigError, Scenario, parse_config
from .reconstruct import extrude, write_extrusion
from .state import Model, write_snapshot
from .stepping import SolverAbort


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that raises instead of exiting, for exit-code control."""

    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="thinflow", description=__doc__)
    parser.add_argument(
        "--threads", type=int, default=None, metavar="N",
        help="worker thread budget (results are independent of N)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    p_run = sub.add_parser("run", help="integrate a configured scenario")
    p_run.add_argument("config")
    p_rec = sub.add_parser("reconstruct", help="run, then write the 3D extrusion")
    p_rec.add_argument("config")
    p_rec.add_argument("--at", type=float, default=None, metavar="T",
                       help="reconstruction time (default: t_end)")
    p_aud = sub.add_parser("audit", help="run the coherence sweep")
    p_aud.add_argument("config")
    p_tab = sub.add_parser("closure-table", help="tabulate the model closure")
    p_tab.add_argument("config")
    return parser


def _ensure_outdir(scenario: Scenario) -> str:
    os.makedirs(scenario.outdir, exist_ok=True)
    return scenario.outdir


def _run_scenario(scenario: Scenario, t_end=None):
    return stepping.run(
        scenario.state, scenario.conf, scenario.topo, scenario.forcing,
        scenario.params, scenario.grid, scenario.control,
        theta_small=scenario.theta_small,
        t_end=t_end,
        output_times=scenario.output_times,
        log_path=os.path.join(scenario.outdir, "run_log.csv"),
        log_every=scenario.log_every,
    )


def cmd_run(scenario: Scenario) -> int:
    outdir = _ensure_outdir(scenario)
    result = _run_scenario(scenario)
    for i, (t, state, conf) in enumerate(result.snapshots):
        path = os.path.join(outdir, f"snapshot_{i:03d}.csv")
        write_snapshot(path, scenario.grid, state, conf)
        print(f"wrote {path} (t={t:.6g})")
    print(
        f"done: {result.steps} steps to t={result.t:.6g}, "
        f"relative mass drift {result.mass_drift:.3e}"
    )
    return 0


def cmd_reconstruct(scenario: Scenario, at=None) -> int:
    outdir = _ensure_outdir(scenario)
    t_end = scenario.control.t_end if at is None else at
    result = _run_scenario(scenario, t_end=t_end)
    ext = extrude(
        result.state, result.conf, scenario.topo, scenario.forcing,
        scenario.params, scenario.grid, theta_small=scenario.theta_small,
    )
    path = os.path.join(outdir, f"extrusion_t{t_end:.6g}.csv")
    write_extrusion(path, scenario.grid, ext)
    print(f"wrote {path} ({ext.nz} layers at t={result.t:.6g})")
    return 0


def cmd_audit(scenario: Scenario) -> int:
    outdir = _ensure_outdir(scenario)
    opts = scenario.audit_options
    fit = audit.epsilon_sweep(
        opts.get("family", "newtonian-inertial"),
        tuple(opts.get("eps", audit.DEFAULT_EPS)),
        nz=int(opts.get("nz", 12)),
        dt_pair=float(opts.get("dt_pair", 1e-5)),
    )
    sweep_path = os.path.join(outdir, "audit_sweep.csv")
    summary_path = os.path.join(outdir, "audit_summary.csv")
    audit.write_sweep_csv(sweep_path, fit)
    audit.write_summary_csv(summary_path, fit)
    for name in audit.RESIDUAL_NAMES:
        flag = "PASS" if fit.passed[name] else "FAIL"
        print(
            f"{name:18s} fitted {fit.orders[name]:8.3f} "
            f"expected {fit.expected[name]:.1f} {flag}"
        )
    print(f"wrote {sweep_path} and {summary_path}")
    return 0


def cmd_closure_table(scenario: Scenario) -> int:
    """Tabulate the depth-dependence of the model closure.

    Viscous models: discharge magnitude under unit in-plane driving.
    Inertial models: effective bed slip factor of the velocity correction.
    """
    outdir = _ensure_outdir(scenario)
    opts = scenario.closure_table_options
    h_min = float(opts.get("h_min", 0.01))
    h_max = float(opts.get("h_max", 1.0))
    n_pts = int(opts.get("n_points", 50))
    hs = np.linspace(h_min, h_max, n_pts)
    p = scenario.params
    unit = np.zeros((n_pts, 2))
    unit[:, 0] = 1.0
    if p.model is Model.NEWTONIAN_VISCOUS:
        name = "discharge"
        vals = -closures.newtonian_discharge(hs, p.re, p.k_friction, unit)[:, 0]
    elif p.model is Model.POWERLAW_VISCOUS:
        name = "discharge"
        e_x = np.array([1.0, 0.0])
        vals = np.array(
            [-closures.powerlaw_discharge(float(h), p.re, p.k_friction, p.n_power, e_x)[0]
             for h in hs]
        )
    elif p.model is Model.VISCOELASTIC_VISCOUS:
        name = "discharge"
        vals = closures.viscoelastic_viscous_flux(
            hs, p.re, p.de, p.theta_ve, unit, np.zeros((n_pts, 2))
        )[:, 0]
    else:
        name = "slip_factor"
        c = 1.0 / (1.0 - p.theta_ve) if p.theta_ve > 0 else 1.0
        vals = 1.0 - c * p.re * p.k_friction * hs / 3.0
    path = os.path.join(outdir, "closure_table.csv")
    with open(path, "w") as fh:
        fh.write(f"h,{name}\n")
        for h, v in zip(hs, vals):
            fh.write("%.17g,%.17g\n" % (h, v))
    print(f"wrote {path} ({name} over h in [{h_min:g}, {h_max:g}])")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        scenario = parse_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            return cmd_run(scenario)
        if args.command == "reconstruct":
            return cmd_reconstruct(scenario, at=args.at)
        if args.command == "audit":
            return cmd_audit(scenario)
        if args.command == "closure-table":
            return cmd_closure_table(scenario)
    except SolverAbort as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    raise AssertionError(f"unhandled command {args.command}")


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

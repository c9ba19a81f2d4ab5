"""Command-line interface for calibration, terminal synthesis, and experiments."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, scenario
from .ambiguity import calibrate, min_samples, optimize_epsilon


def _load_config(args) -> scenario.ScenarioConfig:
    if args.config:
        cfg = scenario.load(args.config)
    else:
        cfg = scenario.paper_scenario()
    updates = {}
    if getattr(args, "runs", None):
        updates["runs"] = args.runs
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return cfg.with_updates(**updates) if updates else cfg


def _emit(obj, args, csv_text: str | None = None) -> None:
    fmt = getattr(args, "format", "json")
    if fmt == "csv" and csv_text is not None:
        text = csv_text
    else:
        text = json.dumps(obj, indent=2, default=harness._json_default)
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text)


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    spec = cfg.spec
    eps = cfg.epsilon if cfg.epsilon is not None else optimize_epsilon(cfg.beta, spec)
    n_min = min_samples(cfg.beta, eps, spec)
    out = {"beta": cfg.beta, "epsilon": eps, "min_samples": n_min}
    if cfg.n_samples >= n_min:
        calib = calibrate(cfg.beta, spec, cfg.n_samples, epsilon=cfg.epsilon)
        out.update({"n_samples": cfg.n_samples, "gamma": calib.gamma,
                    "kappa": calib.kappa})
    else:
        out.update({"n_samples": cfg.n_samples,
                    "note": f"n_samples below the minimum {n_min}"})
    _emit(out, args)
    return 0


def cmd_terminal(args) -> int:
    cfg = _load_config(args)
    term = scenario.terminal_for(cfg)
    _emit(term.to_dict(), args)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    cc = scenario.build_controller_config(cfg)
    report, _ = harness.monte_carlo(cfg, cc, n_runs=cfg.runs)
    _emit(report.to_dict(), args, csv_text=harness.report_to_csv(report))
    return 0


def _progress_printer(args):
    if not getattr(args, "verbose", False):
        return None

    def cb(row):
        print(json.dumps(row, default=harness._json_default), file=sys.stderr)

    return cb


def cmd_sweep_ns(args) -> int:
    cfg = _load_config(args)
    rows = harness.sweep_ns_experiment(cfg, runs=cfg.runs,
                                       progress=_progress_printer(args))
    cols = ["n_samples", "kappa", "mean_cost", "stderr_cost", "worst_case_rate"]
    _emit(rows, args, csv_text=harness.rows_to_csv(rows, cols))
    return 0


def cmd_fig1(args) -> int:
    cfg = _load_config(args)
    rows, baseline = harness.fig1_experiment(cfg, runs=cfg.runs,
                                             progress=_progress_printer(args))
    cols = ["n_samples", "kappa", "mean_cost", "stderr_cost"]
    all_rows = rows + [baseline]
    _emit({"sweep": rows, "exact_moment_baseline": baseline}, args,
          csv_text=harness.rows_to_csv(all_rows, cols))
    return 0


def cmd_table1(args) -> int:
    cfg = _load_config(args)
    probabilities = [float(p) for p in args.levels.split(",")]
    ns_list = [int(float(v)) for v in args.sizes.split(",")]
    results = harness.table1_experiment(cfg, probabilities, ns_list, runs=cfg.runs,
                                        progress=_progress_printer(args))
    rows = [{"p": p, "n_samples": ns, "worst_case_rate": rate}
            for (p, ns), rate in results.items()]
    _emit(rows, args, csv_text=harness.rows_to_csv(
        rows, ["p", "n_samples", "worst_case_rate"]))
    return 0


def cmd_sweep_c(args) -> int:
    cfg = _load_config(args)
    if cfg.unmodeled is None:
        cfg = cfg.with_updates(unmodeled=scenario.UnmodeledSpec(hits_state_at=5,
                                                                scale=6.0))
    rows = harness.table2_experiment(cfg, runs=cfg.runs,
                                     progress=_progress_printer(args))
    cols = ["lambda_penalty", "mean_cost", "stderr_cost", "satisfaction_at_step"]
    _emit(rows, args, csv_text=harness.rows_to_csv(rows, cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drmpc",
        description="Data-driven distributionally robust MPC experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario JSON (defaults to the built-in benchmark)")
        p.add_argument("--runs", type=int, help="Monte-Carlo run count override")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output file (stdout when omitted)")
        p.add_argument("--format", choices=["csv", "json"], default="json")
        p.add_argument("--verbose", action="store_true")

    common(sub.add_parser("calibrate", help="ambiguity calibration summary"))
    common(sub.add_parser("terminal", help="synthesize terminal ingredients"))
    common(sub.add_parser("run", help="closed-loop Monte-Carlo at the configured size"))
    common(sub.add_parser("sweep-ns", help="closed-loop sweep over sample sizes"))
    p1 = sub.add_parser("table1", help="worst-case satisfaction vs level and size")
    common(p1)
    p1.add_argument("--levels", default="0.7,0.8,0.9")
    p1.add_argument("--sizes", default="520,800,1e5,1e6")
    common(sub.add_parser("sweep-c", help="lam-penalty sweep with unmodeled disturbance"))
    common(sub.add_parser("table2", help="alias of sweep-c"))
    common(sub.add_parser("fig1", help="cost curve plus exact-moment baseline"))
    return parser


_HANDLERS = {
    "calibrate": cmd_calibrate,
    "terminal": cmd_terminal,
    "run": cmd_run,
    "sweep-ns": cmd_sweep_ns,
    "fig1": cmd_fig1,
    "table1": cmd_table1,
    "sweep-c": cmd_sweep_c,
    "table2": cmd_sweep_c,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())

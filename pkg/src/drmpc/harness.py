"""Closed-loop Monte-Carlo simulation and the benchmark experiment recipes.

Per-run randomness comes from `numpy.random.SeedSequence(master, spawn_key=(run,))`
so runs are reproducible individually and independent of execution order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .controller import Controller, ControllerConfig, cost_decrease_check
from .scenario import ScenarioConfig, build_controller_config, terminal_for


@dataclass
class RunRecord:
    seed_key: int
    states: np.ndarray          # (steps+1, n_x), x(0..T)
    inputs: np.ndarray          # (steps+1, n_u), u(0..T)
    lams: np.ndarray
    taus: np.ndarray
    cost: float
    violations: np.ndarray      # (steps+1, n_constraints) realized indicator
    solve_iterations: np.ndarray
    solve_time: float
    decrease_residuals: np.ndarray | None = None


@dataclass
class SimulationReport:
    config: dict
    n_runs: int
    steps: int
    mean_cost: float
    stderr_cost: float
    per_step_rates: np.ndarray      # satisfaction frequency per step (1..T)
    worst_case_rate: float
    lam_histogram: dict
    mean_solve_time: float
    total_solves: int
    rates_by_tau: dict = field(default_factory=dict)
    costs: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "steps": self.steps,
            "mean_cost": self.mean_cost,
            "stderr_cost": self.stderr_cost,
            "per_step_rates": self.per_step_rates.tolist(),
            "worst_case_rate": self.worst_case_rate,
            "lam_histogram": self.lam_histogram,
            "mean_solve_time": self.mean_solve_time,
            "total_solves": self.total_solves,
            "rates_by_tau": self.rates_by_tau,
        }


def run_seed(master_seed: int, run_index: int) -> np.random.Generator:
    """Documented child-seed rule: spawn_key = (run_index,) under the master."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(run_index),))
    return np.random.Generator(np.random.PCG64(seq))


def _violation_row(config: ScenarioConfig, x: np.ndarray) -> np.ndarray:
    out = np.zeros(len(config.constraints), dtype=bool)
    for i, c in enumerate(config.constraints):
        if c.kind == "state":
            out[i] = float(np.asarray(c.normal) @ x) > c.rhs
    return out


def run_closed_loop(config: ScenarioConfig, controller: Controller,
                    run_index: int, master_seed: int | None = None,
                    collect_decrease: bool = False) -> RunRecord:
    """Simulate one closed-loop sample path; deterministic given the seed."""
    rng = run_seed(config.seed if master_seed is None else master_seed, run_index)
    sys = config.system
    T = config.steps
    root = np.linalg.cholesky(config.sigma_true + 1e-18 * np.eye(sys.n_w))
    x = config.x0.copy()
    states = np.zeros((T + 1, sys.n_x))
    inputs = np.zeros((T + 1, sys.n_u))
    lams = np.zeros(T + 1)
    taus = np.zeros(T + 1, dtype=int)
    iters = np.zeros(T + 1, dtype=int)
    violations = np.zeros((T + 1, len(config.constraints)), dtype=bool)
    residuals = [] if collect_decrease else None
    solve_time = 0.0
    states[0] = x
    violations[0] = _violation_row(config, x)
    for k in range(T + 1):
        try:
            u, diag = controller.step(x)
        except Exception as exc:
            raise type(exc)(f"run {run_index}, step {k}: {exc}") from exc
        inputs[k] = u
        lams[k] = diag.lam
        taus[k] = diag.tau
        iters[k] = diag.iterations
        solve_time += diag.solve_time
        if collect_decrease:
            residuals.append(cost_decrease_check(controller.state,
                                                 controller.config))
        w = rng.standard_normal(sys.n_w) @ root.T
        if config.unmodeled is not None and k + 1 == config.unmodeled.hits_state_at:
            w = w * np.sqrt(config.unmodeled.scale)
        x = sys.A @ x + sys.B @ u + sys.E @ w
        if k + 1 <= T:
            states[k + 1] = x
            violations[k + 1] = _violation_row(config, x)
    lo, hi = config.cost_window
    hi = min(int(hi), T)
    cost = 0.0
    for k in range(int(lo), hi + 1):
        cost += float(states[k] @ config.Q @ states[k])
        cost += float(inputs[k] @ config.R @ inputs[k])
    return RunRecord(seed_key=run_index, states=states, inputs=inputs, lams=lams,
                     taus=taus, cost=cost, violations=violations,
                     solve_iterations=iters, solve_time=solve_time,
                     decrease_residuals=(np.array([r["residual"] for r in residuals])
                                         if collect_decrease else None))


def monte_carlo(config: ScenarioConfig, controller_config: ControllerConfig,
                n_runs: int | None = None, master_seed: int | None = None,
                collect_decrease: bool = False):
    """Aggregate independent closed-loop runs into a report.

    Each run gets a fresh controller instance (they share the immutable
    compiled templates through the config) and its own child seed; the
    reduction is ordered by run index, so the report is deterministic.
    """
    n_runs = int(n_runs if n_runs is not None else config.runs)
    seed = config.seed if master_seed is None else master_seed
    records = []
    template = Controller(controller_config)
    for r in range(n_runs):
        records.append(run_closed_loop(config, template.spawn(), r,
                                       master_seed=seed,
                                       collect_decrease=collect_decrease))
    return aggregate(config, records), records


def aggregate(config: ScenarioConfig, records) -> SimulationReport:
    T = config.steps
    n_runs = len(records)
    costs = np.array([r.cost for r in records])
    sat = np.zeros(T)
    for k in range(1, T + 1):
        ok = np.array([not r.violations[k].any() for r in records])
        sat[k - 1] = ok.mean()
    lam_all = np.concatenate([r.lams for r in records])
    hist_edges = [0.0, 1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-9, np.inf]
    hist_labels = ["=0", "(0,0.1]", "(0.1,0.5]", "(0.5,0.9]", "(0.9,1)", "=1"]
    lam_hist = {}
    for lo, hi, lab in zip(hist_edges[:-1], hist_edges[1:], hist_labels):
        lam_hist[lab] = int(np.sum((lam_all > lo) & (lam_all <= hi))) if lab != "=0" \
            else int(np.sum(lam_all <= 1e-6))
    taus = np.concatenate([r.taus[1:] for r in records])
    viol_step = np.concatenate([r.violations[1:].any(axis=1) for r in records])
    rates_by_tau = {}
    for tau in np.unique(taus):
        mask = taus == tau
        rates_by_tau[int(tau)] = float(1.0 - viol_step[mask].mean())
    total_solves = sum(r.solve_iterations.size for r in records)
    mean_solve = float(np.mean([r.solve_time / r.solve_iterations.size
                                for r in records]))
    return SimulationReport(
        config=config.to_dict(), n_runs=n_runs, steps=T,
        mean_cost=float(costs.mean()),
        stderr_cost=(float(costs.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1
                     else 0.0),
        per_step_rates=sat, worst_case_rate=float(sat.min()),
        lam_histogram=lam_hist, mean_solve_time=mean_solve,
        total_solves=total_solves, rates_by_tau=rates_by_tau, costs=costs)


# ---- experiment recipes ----

def sweep_ns_experiment(config: ScenarioConfig, ns_list=None, runs=None,
                        terminal=None, progress=None):
    """Closed-loop statistics for a range of sample sizes (shared terminal set)."""
    ns_list = list(ns_list if ns_list is not None else config.ns_sweep)
    term = terminal if terminal is not None else terminal_for(config)
    rows = []
    for branch, ns in enumerate(ns_list):
        cc = build_controller_config(config, n_samples=int(ns), branch=branch,
                                     terminal=term)
        report, _ = monte_carlo(config, cc, n_runs=runs)
        rows.append({"n_samples": int(ns), "kappa": cc.calib.kappa,
                     "mean_cost": report.mean_cost,
                     "stderr_cost": report.stderr_cost,
                     "worst_case_rate": report.worst_case_rate,
                     "per_step_rates": report.per_step_rates.tolist()})
        if progress:
            progress(rows[-1])
    return rows


def fig1_experiment(config: ScenarioConfig, ns_list=None, runs=None, progress=None):
    """Cost-vs-sample-size curve plus the exact-moment baseline row."""
    rows = sweep_ns_experiment(config, ns_list=ns_list, runs=runs,
                               progress=progress)
    base_cfg = config.with_updates(exact_moments=True)
    term = terminal_for(config)  # keep the data-driven terminal set fixed
    cc = build_controller_config(base_cfg, terminal=term)
    report, _ = monte_carlo(base_cfg, cc, n_runs=runs)
    baseline = {"n_samples": None, "kappa": 1.0, "mean_cost": report.mean_cost,
                "stderr_cost": report.stderr_cost,
                "worst_case_rate": report.worst_case_rate,
                "per_step_rates": report.per_step_rates.tolist()}
    if progress:
        progress(baseline)
    return rows, baseline


def table1_experiment(config: ScenarioConfig, probabilities, ns_list, runs=None,
                      progress=None):
    """Worst-case empirical satisfaction rate per (probability, sample size)."""
    from .scenario import ConstraintSpec

    results = {}
    for p in probabilities:
        new_cons = []
        for c in config.constraints:
            new_cons.append(ConstraintSpec(kind=c.kind, normal=c.normal, rhs=c.rhs,
                                           probability=float(p), stages=c.stages))
        cfg_p = config.with_updates(constraints=tuple(new_cons))
        term = terminal_for(cfg_p)
        for branch, ns in enumerate(ns_list):
            cc = build_controller_config(cfg_p, n_samples=int(ns), branch=branch,
                                         terminal=term)
            report, _ = monte_carlo(cfg_p, cc, n_runs=runs)
            results[(float(p), int(ns))] = report.worst_case_rate
            if progress:
                progress({"p": float(p), "n_samples": int(ns),
                          "worst_case_rate": report.worst_case_rate})
    return results


def table2_experiment(config: ScenarioConfig, c_list=None, runs=None, progress=None):
    """Mean cost and satisfaction at the disturbed step for each lam penalty."""
    if config.unmodeled is None:
        raise ValueError("table2 requires an unmodeled-disturbance spec")
    c_list = list(c_list if c_list is not None else config.c_sweep)
    term = terminal_for(config)
    step = config.unmodeled.hits_state_at
    rows = []
    for c_val in c_list:
        cc = build_controller_config(config, terminal=term,
                                     lambda_penalty=float(c_val))
        report, records = monte_carlo(config, cc, n_runs=runs)
        ok = np.array([not r.violations[step].any() for r in records])
        rows.append({"lambda_penalty": float(c_val),
                     "mean_cost": report.mean_cost,
                     "stderr_cost": report.stderr_cost,
                     "satisfaction_at_step": float(ok.mean()),
                     "step": step})
        if progress:
            progress(rows[-1])
    return rows


# ---- output formatting ----

def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row.get(col, "") for col in columns])
    return buf.getvalue()


def report_to_csv(report: SimulationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    writer.writerow(["n_runs", report.n_runs])
    writer.writerow(["mean_cost", repr(report.mean_cost)])
    writer.writerow(["stderr_cost", repr(report.stderr_cost)])
    writer.writerow(["worst_case_rate", repr(report.worst_case_rate)])
    for k, rate in enumerate(report.per_step_rates, start=1):
        writer.writerow([f"rate_step_{k}", repr(float(rate))])
    return buf.getvalue()


def dump(obj, path: str | None, fmt: str = "json") -> str:
    if fmt == "json":
        text = json.dumps(obj, indent=2, default=_json_default)
    else:
        raise ValueError(f"unsupported format {fmt!r}")
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")

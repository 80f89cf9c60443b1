"""Experiment suite: convergence diagnostics, in/out-of-sample comparison,
wait-and-see benchmark, deterministic cross-check, inflow-term ablation, and
CSV report emission.

Reported "value" columns follow the first-stage estimate convention: the
in-sample and out-of-sample means average the stage-0 LP value of the frozen
policy over the respective scenario sets.  Realized simulated profits are
reported alongside because the estimate mixes learned constants into the
number while realized profit does not.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import system as sysm, training as trn
from .scenarios import ArmaSpec, ScenarioSet, shipped_price_spec, \
    terminal_price_forecasts

REPORT_HEADER = ["sweep_samples", "case", "in_sample", "out_sample", "diff_pct",
                 "ws_mean", "ws_gap_pct", "std_last5_pct", "runtime_s",
                 "realized_in", "realized_out"]


@dataclass
class RunReport:
    sweep_samples: int
    case_label: str                 # "E" | "I"
    in_sample_mean: float
    out_sample_mean: float
    wait_and_see_mean: float
    std_last5_pct: float
    runtime_s: float
    realized_in: float
    realized_out: float

    @property
    def diff_pct(self) -> float:
        return abs(self.in_sample_mean - self.out_sample_mean) \
            / abs(self.in_sample_mean) * 100.0

    @property
    def ws_gap_pct(self) -> float:
        return (self.wait_and_see_mean - self.out_sample_mean) \
            / abs(self.wait_and_see_mean) * 100.0

    def row(self) -> list:
        vals = [self.in_sample_mean, self.out_sample_mean, self.diff_pct,
                self.wait_and_see_mean, self.ws_gap_pct, self.std_last5_pct,
                self.runtime_s, self.realized_in, self.realized_out]
        return [self.sweep_samples, self.case_label] + \
            [format(v, ".17g") for v in vals]


def convergence_stats(trace: trn.TrainTrace, k: int = 5):
    """(std, mean, std_pct) of the last k first-stage value iterates."""
    if not (2 <= k <= trace.v0.size):
        raise ValueError(f"k must lie in [2, {trace.v0.size}], got {k}")
    tail = trace.v0[-k:]
    std = float(tail.std(ddof=1))
    mean = float(tail.mean())
    return std, mean, std / abs(mean) * 100.0


def wait_and_see(system: sysm.ReservoirSystem, scenarios: ScenarioSet,
                 terminal_forecasts) -> tuple[float, np.ndarray]:
    """Mean and per-sample optima of the perfect-information LPs.

    The LPs carry the same token-cost overflow columns as the policy's stage
    LPs, so every trajectory the policy can realize is feasible here and the
    per-sample optimum upper-bounds the realized profit by construction.
    """
    terminal_forecasts = np.asarray(terminal_forecasts, dtype=float)
    if scenarios.n_samples < 1:
        raise ValueError("wait_and_see needs at least one sample")
    vals = np.empty(scenarios.n_samples)
    warm = None
    for i in range(scenarios.n_samples):
        sol = sysm.solve_full_horizon(system, scenarios.prices[i],
                                      scenarios.inflows[i],
                                      terminal_forecasts[i], warm=warm,
                                      allow_spill=True)
        vals[i] = sol.value
        warm = sol
    return float(vals.mean()), vals


@dataclass
class CaseRun:
    report: RunReport
    approx: trn.ValueApproximation
    trace: trn.TrainTrace
    eval_in: trn.EvaluationResult
    eval_out: trn.EvaluationResult


def run_case(system: sysm.ReservoirSystem, scenarios_train: ScenarioSet,
             scenarios_test: ScenarioSet, cfg: trn.TrainConfig,
             tf_train, tf_test, ws_mean: float, k_last: int = 5) -> CaseRun:
    """Train on the training set, evaluate the frozen policy on both sets."""
    start = time.perf_counter()
    approx, trace = trn.train_offline(system, scenarios_train, tf_train, cfg)
    ev_in = trn.evaluate_online(system, approx, scenarios_train, tf_train)
    ev_out = trn.evaluate_online(system, approx, scenarios_test, tf_test)
    runtime = time.perf_counter() - start
    _, _, std_pct = convergence_stats(trace, min(k_last, trace.v0.size))
    label = "I" if cfg.include_inflow_term else "E"
    report = RunReport(sweep_samples=cfg.n_samples, case_label=label,
                       in_sample_mean=ev_in.mean_estimate,
                       out_sample_mean=ev_out.mean_estimate,
                       wait_and_see_mean=ws_mean, std_last5_pct=std_pct,
                       runtime_s=runtime, realized_in=ev_in.mean_realized,
                       realized_out=ev_out.mean_realized)
    return CaseRun(report=report, approx=approx, trace=trace,
                   eval_in=ev_in, eval_out=ev_out)


def compare_cases(system: sysm.ReservoirSystem, scenarios_train: ScenarioSet,
                  scenarios_test: ScenarioSet, cfg: trn.TrainConfig,
                  price_spec: ArmaSpec | None = None, k_last: int = 5):
    """Train and evaluate with the inflow term excluded (E) and included (I)
    on identical scenario data; improvement is measured on out-of-sample
    first-stage estimates.

    Returns (CaseRun E, CaseRun I, improvement_pct).
    """
    price_spec = price_spec or shipped_price_spec()
    tf_train = terminal_price_forecasts(price_spec, scenarios_train)
    tf_test = terminal_price_forecasts(price_spec, scenarios_test)
    ws_mean, _ = wait_and_see(system, scenarios_test, tf_test)
    run_e = run_case(system, scenarios_train, scenarios_test,
                     replace(cfg, include_inflow_term=False),
                     tf_train, tf_test, ws_mean, k_last)
    run_i = run_case(system, scenarios_train, scenarios_test,
                     replace(cfg, include_inflow_term=True),
                     tf_train, tf_test, ws_mean, k_last)
    improvement_pct = (run_i.report.out_sample_mean - run_e.report.out_sample_mean) \
        / abs(run_e.report.out_sample_mean) * 100.0
    return run_e, run_i, improvement_pct


def deterministic_crosscheck(system: sysm.ReservoirSystem,
                             paths: list[ScenarioSet], terminal_forecasts,
                             iterations: int = 200,
                             cfg: trn.TrainConfig | None = None):
    """Train on each single repeated path and compare the learned first-stage
    value against the exact full-horizon LP optimum.

    `paths` holds single-sample scenario sets; `terminal_forecasts` one price
    forecast per path.  Returns (mean_gap_pct, per-path gaps).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    gaps = []
    for ss, tf in zip(paths, np.asarray(terminal_forecasts, dtype=float)):
        if ss.n_samples != 1:
            raise ValueError("deterministic cross-check needs single-sample paths")
        base = cfg or trn.TrainConfig(n_samples=1, seed=ss.seed)
        run_cfg = replace(base, n_samples=1)
        _, trace = trn.train_offline(system, ss, np.array([tf]), run_cfg,
                                     n_iterations=iterations)
        opt = sysm.solve_full_horizon(system, ss.prices[0], ss.inflows[0], tf,
                                      allow_spill=True).value
        gaps.append(abs(trace.v0[-1] - opt) / abs(opt) * 100.0)
    gaps = np.array(gaps)
    return float(gaps.mean()), gaps


# ---------------------------------------------------------------------------
# report emission


def emit_report(reports, path: str | Path) -> None:
    """One CSV row per sweep point, fixed header, 17-significant-digit floats."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for r in reports:
                w.writerow(r.row())
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc


def emit_trace(trace: trn.TrainTrace, path: str | Path) -> None:
    """Per-iteration first-stage values and step sizes (convergence plots)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "v0", "alpha"])
        for n in range(trace.v0.size):
            w.writerow([n + 1, format(trace.v0[n], ".17g"),
                        format(trace.alphas[n], ".17g")])


def emit_trajectories(result: trn.EvaluationResult, path: str | Path) -> None:
    """Per-sample reservoir-level trajectories (dispatch plots)."""
    path = Path(path)
    n, steps, J = result.levels.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "t"] + [f"level_{j + 1}" for j in range(J)])
        for i in range(n):
            for t in range(steps):
                w.writerow([i, t] + [format(v, ".17g") for v in result.levels[i, t]])

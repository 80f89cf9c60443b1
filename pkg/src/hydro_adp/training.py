"""Offline training and online evaluation of affine value-function policies.

The value of water at the end of stage t is approximated by

    V_t(level, inflow) = a_t @ level + b_t @ inflow + const_t,

with coefficients learned by smoothed finite-difference (supergradient)
updates along simulated sample paths.  Each stage of a forward pass solves a
one-hour LP whose continuation term is the next stage's affine approximation;
the marginal values extracted from perturbed re-solves are blended into the
coefficients with step size alpha_n.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import lp, system as sysm
from .scenarios import ScenarioSet


class TrainingError(Exception):
    """Training or evaluation failed (infeasible stage, bad artifact file)."""


@dataclass
class TrainConfig:
    n_samples: int = 1000
    alpha_initial: float = 0.5
    alpha_damping: float = 100.0    # n0 in alpha_n = alpha_1 * n0 / (n0 + n - 1)
    fd_step: float = 1.0
    include_inflow_term: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise TrainingError("n_samples must be >= 1")
        if not (0.0 < self.alpha_initial <= 1.0):
            raise TrainingError("alpha_initial must lie in (0, 1]")
        if self.alpha_damping <= 0 or self.fd_step <= 0:
            raise TrainingError("alpha_damping and fd_step must be positive")

    def alpha(self, n: int) -> float:
        """Step size for 1-based iteration n."""
        return self.alpha_initial * self.alpha_damping / (self.alpha_damping + n - 1)


@dataclass
class ValueApproximation:
    """Per-stage affine value coefficients plus the anchors they were fit at.

    Row t of each array belongs to the post-decision state at the end of
    stage t; row 0 is unused (the initial level is given, not valued).
    """
    horizon: int
    a: np.ndarray               # (T, J)
    b: np.ndarray               # (T, J)
    const: np.ndarray           # (T,)
    anchor_level: np.ndarray    # (T, J)
    anchor_inflow: np.ndarray   # (T, J)
    system_hash: str = ""
    config: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, horizon: int, n_reservoirs: int,
              system_hash: str = "", config: dict | None = None):
        shape = (horizon, n_reservoirs)
        return cls(horizon=horizon, a=np.zeros(shape), b=np.zeros(shape),
                   const=np.zeros(horizon), anchor_level=np.zeros(shape),
                   anchor_inflow=np.zeros(shape), system_hash=system_hash,
                   config=dict(config or {}))

    def stage_value(self, t: int, level, inflow) -> float:
        """Approximate value of holding `level` after stage t with current
        inflow `inflow` still to arrive."""
        return float(self.a[t] @ np.asarray(level) + self.b[t] @ np.asarray(inflow)
                     + self.const[t])

    def save(self, path: str | Path) -> None:
        data = {
            "horizon": self.horizon,
            "system_hash": self.system_hash,
            "config": self.config,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "const": self.const.tolist(),
            "anchor_level": self.anchor_level.tolist(),
            "anchor_inflow": self.anchor_inflow.tolist(),
        }
        Path(path).write_text(json.dumps(data, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "ValueApproximation":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise TrainingError(f"value approximation not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise TrainingError(f"invalid JSON in {path}: {exc}") from exc
        try:
            return cls(horizon=int(data["horizon"]),
                       a=np.asarray(data["a"], dtype=float),
                       b=np.asarray(data["b"], dtype=float),
                       const=np.asarray(data["const"], dtype=float),
                       anchor_level=np.asarray(data["anchor_level"], dtype=float),
                       anchor_inflow=np.asarray(data["anchor_inflow"], dtype=float),
                       system_hash=data.get("system_hash", ""),
                       config=data.get("config", {}))
        except KeyError as exc:
            raise TrainingError(f"{path}: missing field {exc}") from exc


@dataclass
class TrainTrace:
    v0: np.ndarray              # first-stage value estimate per iteration
    alphas: np.ndarray
    n_solves: int
    runtime_s: float
    n_spill_events: int = 0     # stages where the strict LP had no decision


def blend(old: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    """Smoothed coefficient update (1 - alpha) * old + alpha * new."""
    return (1.0 - alpha) * old + alpha * new


def _stage_exo(scenarios: ScenarioSet, i: int, t: int) -> sysm.StageExogenous:
    # scenario column t carries the price/inflow realized with the stage-t
    # decision (the hour t+1 market)
    return sysm.StageExogenous(t=t + 1, price=scenarios.prices[i, t],
                               inflows=scenarios.inflows[i, t])


@dataclass
class _StageSolve:
    sol: lp.LpSolution
    value: float        # optimal stage value (includes any token spill cost)
    spilled: float      # total shed volume (0 in the regular case)


def _solve_stage(system, level, inflow_now, exo_next, a_next, affine_const,
                 terminal, warm, where) -> _StageSolve:
    """Solve one forward-pass stage LP.

    The LP always carries the overflow columns: their token cost leaves every
    regularly feasible solution untouched, and they shed the excess when a
    full reservoir meets an inflow spike beyond discharge capacity (where the
    strict feasible set is empty).  Because spilling is cheap rather than
    forbidden, the stage value stays monotone in the water held, which keeps
    the finite-difference marginals nonnegative up to the token cost.
    """
    prob = sysm.build_stage_lp(system, level, inflow_now, exo_next,
                               a_next=a_next, affine_const=affine_const,
                               terminal=terminal, allow_spill=True)
    try:
        sol = lp.solve(prob, warm=warm)
    except lp.LpError as exc:
        raise TrainingError(f"stage LP failed at {where}: {exc}") from exc
    if sol.status != "optimal":
        raise TrainingError(f"infeasible stage LP at {where}")
    spilled = float(sysm.stage_solution_spill(system, sol.x).sum())
    if spilled <= 1e-7:
        spilled = 0.0
    return _StageSolve(sol, sol.value, spilled)


def _continuation(approx: ValueApproximation, t_next: int, inflow_next,
                  include_inflow: bool):
    """(a_next, affine_const) encoding V_{t_next} at the realized next inflow."""
    const = float(approx.const[t_next])
    if include_inflow:
        const += float(approx.b[t_next] @ inflow_next)
    return approx.a[t_next], const


def _fd_value(system, level, inflow_now, exo_next, a_next, affine_const,
              terminal, base_value, base_sol, h, j, where, perturb="level"):
    """Upward finite difference of the stage value in coordinate j of the
    post-decision level (perturb="level") or the arriving inflow ("inflow").
    At the capacity corner the spill fallback absorbs the extra water, so the
    difference correctly reports a vanishing marginal value there.
    """
    e = np.zeros(level.size)
    e[j] = h
    dl, dv = (e, 0.0) if perturb == "level" else (0.0, e)
    up = _solve_stage(system, level + dl, inflow_now + dv, exo_next, a_next,
                      affine_const, terminal, base_sol, where)
    return (up.value - base_value) / h


def train_offline(system: sysm.ReservoirSystem, scenarios: ScenarioSet,
                  terminal_forecasts, config: TrainConfig,
                  n_iterations: int | None = None):
    """Learn per-stage affine value coefficients from simulated sample paths.

    Iterations sweep the training scenarios cyclically.  Each forward pass
    solves one base LP per stage plus, for every stage after the first,
    one perturbed LP per reservoir for the level slope (and another per
    reservoir for the inflow slope when the inflow term is enabled).

    Returns (ValueApproximation, TrainTrace).
    """
    T, J = scenarios.horizon, scenarios.n_reservoirs
    if J != system.n_reservoirs:
        raise TrainingError("scenario set does not match the system's reservoir count")
    terminal_forecasts = np.asarray(terminal_forecasts, dtype=float)
    if terminal_forecasts.shape != (scenarios.n_samples,):
        raise TrainingError("need one terminal price forecast per sample")
    if n_iterations is None:
        n_iterations = config.n_samples
    approx = ValueApproximation.zeros(
        T, J, system_hash=system.config_hash(),
        config={**asdict(config), "n_iterations": n_iterations,
                "scenario_seed": scenarios.seed})
    approx.anchor_level[:] = system.level_initial()
    h = config.fd_step
    v0 = np.empty(n_iterations)
    alphas = np.empty(n_iterations)
    n_solves = 0
    n_spills = 0
    warm_base = [None] * T
    start = time.perf_counter()
    for n in range(1, n_iterations + 1):
        i = (n - 1) % min(config.n_samples, scenarios.n_samples)
        alpha = config.alpha(n)
        alphas[n - 1] = alpha
        level = system.level_initial()
        inflow_now = np.zeros(J)
        for t in range(T):
            exo_next = _stage_exo(scenarios, i, t)
            if t == T - 1:
                a_next, affine_const, terminal = None, 0.0, terminal_forecasts[i]
            else:
                a_next, affine_const = _continuation(
                    approx, t + 1, exo_next.inflows, config.include_inflow_term)
                terminal = None
            where = f"iteration {n}, stage {t}"
            base = _solve_stage(system, level, inflow_now, exo_next, a_next,
                                affine_const, terminal, warm_base[t], where)
            n_solves += 1
            warm_base[t] = base.sol
            warm_fd = base.sol
            if base.spilled > 0.0:
                n_spills += 1
            if t == 0:
                v0[n - 1] = base.value
            else:
                fd_a = np.array([
                    _fd_value(system, level, inflow_now, exo_next, a_next,
                              affine_const, terminal, base.value, warm_fd,
                              h, j, where)
                    for j in range(J)])
                n_solves += J
                approx.a[t] = blend(approx.a[t], fd_a, alpha)
                if config.include_inflow_term:
                    fd_b = np.array([
                        _fd_value(system, level, inflow_now, exo_next,
                                  a_next, affine_const, terminal, base.value,
                                  warm_fd, h, j, where, perturb="inflow")
                        for j in range(J)])
                    n_solves += J
                    approx.b[t] = blend(approx.b[t], fd_b, alpha)
                # the stored constant always nets out the inflow value at the
                # anchor; case I restores it in the objective through b @ nu,
                # case E omits that term (the inflow marginal equals the level
                # marginal here, so case E needs no extra solves)
                inflow_marginal = (approx.b[t] if config.include_inflow_term
                                   else approx.a[t])
                approx.const[t] = (base.value - approx.a[t] @ level
                                   - inflow_marginal @ inflow_now)
                approx.anchor_level[t] = level
                approx.anchor_inflow[t] = inflow_now
            # the LP's level columns account for any forced spill
            level = sysm.stage_solution_level(system, base.sol.x)
            inflow_now = exo_next.inflows
    trace = TrainTrace(v0=v0, alphas=alphas, n_solves=n_solves,
                       runtime_s=time.perf_counter() - start,
                       n_spill_events=n_spills)
    return approx, trace


@dataclass
class EvaluationResult:
    value_estimates: np.ndarray     # first-stage LP value per sample
    realized_profits: np.ndarray    # simulated market revenue per sample
    levels: np.ndarray              # (n_samples, T + 1, J) post-decision levels
    n_solves: int
    n_spill_events: int = 0

    @property
    def mean_estimate(self) -> float:
        return float(self.value_estimates.mean())

    @property
    def mean_realized(self) -> float:
        return float(self.realized_profits.mean())


def evaluate_online(system: sysm.ReservoirSystem, approx: ValueApproximation,
                    scenarios: ScenarioSet, terminal_forecasts,
                    include_inflow_term: bool | None = None) -> EvaluationResult:
    """Run the frozen affine policy forward over a scenario set.

    Realized profit is the accumulated market revenue of the simulated
    decisions plus the terminal value of the water left at the end of the
    horizon, priced at the per-sample terminal forecast.
    """
    T, J = scenarios.horizon, scenarios.n_reservoirs
    if approx.horizon != T:
        raise TrainingError(f"approximation horizon {approx.horizon} != scenario "
                            f"horizon {T}")
    if include_inflow_term is None:
        include_inflow_term = bool(approx.config.get("include_inflow_term", True))
    terminal_forecasts = np.asarray(terminal_forecasts, dtype=float)
    if terminal_forecasts.shape != (scenarios.n_samples,):
        raise TrainingError("need one terminal price forecast per sample")
    g_end = system.terminal_conversion()
    n = scenarios.n_samples
    estimates = np.empty(n)
    realized = np.empty(n)
    levels = np.empty((n, T + 1, J))
    n_solves = 0
    n_spills = 0
    warm_base = [None] * T
    for i in range(n):
        level = system.level_initial()
        inflow_now = np.zeros(J)
        levels[i, 0] = level
        profit = 0.0
        for t in range(T):
            exo_next = _stage_exo(scenarios, i, t)
            if t == T - 1:
                a_next, affine_const, terminal = None, 0.0, terminal_forecasts[i]
            else:
                a_next, affine_const = _continuation(
                    approx, t + 1, exo_next.inflows, include_inflow_term)
                terminal = None
            base = _solve_stage(system, level, inflow_now, exo_next, a_next,
                                affine_const, terminal, warm_base[t],
                                f"evaluation sample {i}, stage {t}")
            n_solves += 1
            warm_base[t] = base.sol
            if base.spilled > 0.0:
                n_spills += 1
            if t == 0:
                estimates[i] = base.value
            decision = sysm.stage_solution_decision(system, base.sol.x)
            profit += sysm.stage_profit(system, exo_next, decision)
            level = sysm.stage_solution_level(system, base.sol.x)
            inflow_now = exo_next.inflows
            levels[i, t + 1] = level
        profit += terminal_forecasts[i] * (g_end @ (level + inflow_now))
        realized[i] = profit
    return EvaluationResult(value_estimates=estimates, realized_profits=realized,
                            levels=levels, n_solves=n_solves,
                            n_spill_events=n_spills)

"""Reservoir systems: cascade and pumped-network topologies, stage feasibility,
stage profit, level dynamics, and assembly of the per-stage and full-horizon LPs.

Units follow the case-study data: volumes in 10^3 m^3, flows in 10^3 m^3/h,
prices in $/MWh, conversion rates in MWh per 10^3 m^3.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lp

MASS_TOL = 1e-9
SPILL_COST = 1.0e-3      # $/10^3 m^3; a tie-breaker, far below any water value
SPILL_CAP = 1.0e9


class SystemConfigError(Exception):
    """Invalid reservoir-system configuration."""


@dataclass(frozen=True)
class ReservoirSpec:
    id: int
    level_min: float
    level_max: float
    discharge_min: float
    discharge_max: float
    level_initial: float
    conversion_rate: float = 0.0   # MWh / 10^3 m^3; cascade systems only

    def __post_init__(self):
        if not (0.0 <= self.level_min <= self.level_initial <= self.level_max):
            raise SystemConfigError(
                f"reservoir {self.id}: need 0 <= level_min <= level_initial <= level_max")
        if not (0.0 <= self.discharge_min <= self.discharge_max):
            raise SystemConfigError(f"reservoir {self.id}: bad discharge bounds")
        if self.conversion_rate < 0.0:
            raise SystemConfigError(f"reservoir {self.id}: negative conversion rate")


@dataclass(frozen=True)
class TunnelSpec:
    from_reservoir: int
    to_reservoir: int
    direction: str                 # "release" (downhill, generates) | "pump" (uphill)
    conversion_rate: float
    flow_max: float

    def __post_init__(self):
        if self.from_reservoir == self.to_reservoir:
            raise SystemConfigError("tunnel endpoints must differ")
        if self.direction not in ("release", "pump"):
            raise SystemConfigError(f"unknown tunnel direction {self.direction!r}")
        if self.flow_max <= 0.0 or self.conversion_rate < 0.0:
            raise SystemConfigError("tunnel needs flow_max > 0 and conversion_rate >= 0")


@dataclass(frozen=True)
class StageExogenous:
    t: int
    price: float
    inflows: np.ndarray            # per reservoir, 10^3 m^3/h

    def __post_init__(self):
        object.__setattr__(self, "inflows", np.asarray(self.inflows, dtype=float))


@dataclass(frozen=True)
class StageDecision:
    """Cascade: `discharges` per reservoir.  Network: `flows` per tunnel."""
    discharges: np.ndarray | None = None
    flows: np.ndarray | None = None

    def __post_init__(self):
        if self.discharges is not None:
            object.__setattr__(self, "discharges", np.asarray(self.discharges, dtype=float))
        if self.flows is not None:
            object.__setattr__(self, "flows", np.asarray(self.flows, dtype=float))


@dataclass(frozen=True)
class ReservoirSystem:
    kind: str                                  # "cascade" | "network"
    reservoirs: tuple[ReservoirSpec, ...]
    cascade_topology: np.ndarray | None = None  # R: |J| x |J|, entries -1/0/+1
    tunnels: tuple[TunnelSpec, ...] = ()
    pump_efficiency: float = 1.0

    def __post_init__(self):
        J = len(self.reservoirs)
        if J == 0:
            raise SystemConfigError("a system needs at least one reservoir")
        if self.kind == "cascade":
            R = np.asarray(self.cascade_topology, dtype=float)
            if R.shape != (J, J):
                raise SystemConfigError(f"cascade matrix must be {J}x{J}")
            if not np.allclose(np.diag(R), -1.0):
                raise SystemConfigError("cascade matrix needs -1 on the diagonal")
            off = R - np.diag(np.diag(R))
            if not np.all((off == 0.0) | (off == 1.0)):
                raise SystemConfigError("off-diagonal cascade entries must be 0 or 1")
            if not np.all(np.isin(R.sum(axis=0), (-1.0, 0.0))):
                raise SystemConfigError(
                    "each reservoir may feed at most one downstream reservoir")
            object.__setattr__(self, "cascade_topology", R)
        elif self.kind == "network":
            if not self.tunnels:
                raise SystemConfigError("a network system needs tunnels")
            for tun in self.tunnels:
                for end in (tun.from_reservoir, tun.to_reservoir):
                    if not (0 <= end < J):
                        raise SystemConfigError(f"tunnel endpoint {end} out of range")
            if not (0.0 < self.pump_efficiency <= 1.0):
                raise SystemConfigError("pump efficiency must lie in (0, 1]")
        else:
            raise SystemConfigError(f"unknown system kind {self.kind!r}")

    # ---- cached structural vectors/matrices -------------------------------

    @property
    def n_reservoirs(self) -> int:
        return len(self.reservoirs)

    @property
    def n_tunnels(self) -> int:
        return len(self.tunnels)

    def level_min(self) -> np.ndarray:
        return np.array([r.level_min for r in self.reservoirs])

    def level_max(self) -> np.ndarray:
        return np.array([r.level_max for r in self.reservoirs])

    def level_initial(self) -> np.ndarray:
        return np.array([r.level_initial for r in self.reservoirs])

    def discharge_min(self) -> np.ndarray:
        return np.array([r.discharge_min for r in self.reservoirs])

    def discharge_max(self) -> np.ndarray:
        return np.array([r.discharge_max for r in self.reservoirs])

    def conversion(self) -> np.ndarray:
        return np.array([r.conversion_rate for r in self.reservoirs])

    def flow_max(self) -> np.ndarray:
        return np.array([t.flow_max for t in self.tunnels])

    def tunnel_signs(self) -> np.ndarray:
        """+1 for release tunnels (revenue), -1 for pump tunnels (cost)."""
        return np.array([1.0 if t.direction == "release" else -1.0 for t in self.tunnels])

    def tunnel_conversion(self) -> np.ndarray:
        return np.array([t.conversion_rate for t in self.tunnels])

    def balance_matrix(self) -> np.ndarray:
        """Net level change per unit decision: R for cascades; for networks, a
        release moves f from source to destination, a pump moves f out of the
        source and delivers eta*f uphill."""
        if self.kind == "cascade":
            return self.cascade_topology.copy()
        J = self.n_reservoirs
        M = np.zeros((J, self.n_tunnels))
        for g, tun in enumerate(self.tunnels):
            M[tun.from_reservoir, g] -= 1.0
            gain = 1.0 if tun.direction == "release" else self.pump_efficiency
            M[tun.to_reservoir, g] += gain
        return M

    def release_incidence(self) -> np.ndarray:
        """Rows: reservoirs; columns: tunnels; 1 where the reservoir discharges."""
        J = self.n_reservoirs
        M = np.zeros((J, self.n_tunnels))
        for g, tun in enumerate(self.tunnels):
            if tun.direction == "release":
                M[tun.from_reservoir, g] = 1.0
        return M

    def pump_incidence(self) -> np.ndarray:
        """1 where the reservoir is charged by pumped water."""
        J = self.n_reservoirs
        M = np.zeros((J, self.n_tunnels))
        for g, tun in enumerate(self.tunnels):
            if tun.direction == "pump":
                M[tun.to_reservoir, g] = 1.0
        return M

    def terminal_conversion(self) -> np.ndarray:
        """Per-reservoir rate converting end-of-horizon water to energy.

        Cascades use each reservoir's own station.  Networks have no station
        per reservoir, so stored water is valued at the best single release
        step available from that reservoir (0 if it has none).
        """
        if self.kind == "cascade":
            return self.conversion()
        J = self.n_reservoirs
        g = np.zeros(J)
        for tun in self.tunnels:
            if tun.direction == "release":
                j = tun.from_reservoir
                g[j] = max(g[j], tun.conversion_rate)
        return g

    def canonical_json(self) -> str:
        return json.dumps(system_to_dict(self), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# ---------------------------------------------------------------------------
# stage operations


def _check_dim(vec, n, name):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {vec.shape}")
    return vec


def decision_reservoir_flows(system: ReservoirSystem, decision: StageDecision):
    """Network helper: per-reservoir discharged (pi_d) and charged (pi_c) totals."""
    f = _check_dim(decision.flows, system.n_tunnels, "flows")
    return system.release_incidence() @ f, system.pump_incidence() @ f


def feasible(system: ReservoirSystem, level_pre, exo_now: StageExogenous,
             exo_next_inflow, decision: StageDecision, tol: float = 1e-9) -> bool:
    """True iff the decision keeps balances, level bounds (evaluated at the
    next pre-decision level), and discharge/flow bounds."""
    J = system.n_reservoirs
    level_pre = _check_dim(level_pre, J, "level_pre")
    inflow_now = _check_dim(exo_now.inflows, J, "exo_now.inflows")
    inflow_next = _check_dim(exo_next_inflow, J, "exo_next_inflow")
    if system.kind == "cascade":
        pi = _check_dim(decision.discharges, J, "discharges")
        if np.any(pi < system.discharge_min() - tol) or np.any(pi > system.discharge_max() + tol):
            return False
        level_post = level_pre + inflow_now + system.balance_matrix() @ pi
    else:
        f = _check_dim(decision.flows, system.n_tunnels, "flows")
        if np.any(f < -tol) or np.any(f > system.flow_max() + tol):
            return False
        pi_d, pi_c = decision_reservoir_flows(system, decision)
        lo, hi = system.discharge_min(), system.discharge_max()
        if np.any(pi_d < lo - tol) or np.any(pi_d > hi + tol):
            return False
        if np.any(pi_c < lo - tol) or np.any(pi_c > hi + tol):
            return False
        level_post = level_pre + inflow_now + system.balance_matrix() @ f
    next_pre = level_post + inflow_next
    return bool(np.all(next_pre >= system.level_min() - tol)
                and np.all(next_pre <= system.level_max() + tol))


def stage_profit(system: ReservoirSystem, exo: StageExogenous,
                 decision: StageDecision) -> float:
    """Market revenue of one stage: price times net generated energy."""
    if system.kind == "cascade":
        pi = _check_dim(decision.discharges, system.n_reservoirs, "discharges")
        return float(exo.price * (system.conversion() @ pi))
    f = _check_dim(decision.flows, system.n_tunnels, "flows")
    g = system.tunnel_conversion() * system.tunnel_signs()
    return float(exo.price * (g @ f))


def advance_level(system: ReservoirSystem, level_post_prev, inflow_now,
                  decision: StageDecision) -> np.ndarray:
    """Next post-decision level: previous level plus inflow plus net decision flow."""
    J = system.n_reservoirs
    level = _check_dim(level_post_prev, J, "level_post_prev")
    inflow = _check_dim(inflow_now, J, "inflow_now")
    act = decision.discharges if system.kind == "cascade" else decision.flows
    return level + inflow + system.balance_matrix() @ np.asarray(act, dtype=float)


def build_stage_lp(system: ReservoirSystem, level_post_prev, inflow_now,
                   exo_next: StageExogenous, a_next, affine_const: float = 0.0,
                   terminal: float | None = None,
                   allow_spill: bool = False) -> lp.LpProblem:
    """One-hour stage LP.

    Variables are the stage decision (discharges or tunnel flows, plus, for
    networks, per-reservoir charge/discharge totals) and the next post-decision
    levels.  The objective is the immediate revenue at exo_next.price plus the
    affine continuation a_next @ level_next (+ affine_const).  When `terminal`
    is given it is the price forecast beyond the horizon; the continuation then
    values the final pre-decision level (level_next + exo_next.inflows) at that
    price through the terminal conversion rates.

    With `allow_spill`, overflow variables (one per reservoir, appended after
    the level columns) let water be shed when an inflow spike above discharge
    capacity meets a full reservoir; the strict stage LP has no feasible
    decision in that corner.  Spill carries a token cost so it is used only
    when forced or when stored water is genuinely worthless, which keeps the
    relaxed value monotone in the water held.
    """
    J = system.n_reservoirs
    level = _check_dim(level_post_prev, J, "level_post_prev")
    inflow = _check_dim(inflow_now, J, "inflow_now")
    inflow_next = _check_dim(exo_next.inflows, J, "exo_next.inflows")
    offset = float(affine_const)
    if terminal is None:
        a_next = _check_dim(a_next, J, "a_next")
    else:
        a_next = float(terminal) * system.terminal_conversion()
        offset += float(a_next @ inflow_next)
    lvl_lo = system.level_min() - inflow_next
    lvl_hi = system.level_max() - inflow_next
    rhs = level + inflow

    if system.kind == "cascade":
        # columns: [pi (J), level_next (J)]
        R = system.balance_matrix()
        A = np.hstack([-R, np.eye(J)])
        b = rhs
        c = np.concatenate([exo_next.price * system.conversion(), a_next])
        lo = np.concatenate([system.discharge_min(), lvl_lo])
        hi = np.concatenate([system.discharge_max(), lvl_hi])
    else:
        # network columns: [f (G), pi_d (J), pi_c (J), level_next (J)]
        G = system.n_tunnels
        M = system.balance_matrix()
        Rd, Rc = system.release_incidence(), system.pump_incidence()
        A = np.zeros((3 * J, G + 3 * J))
        A[:J, :G] = -M
        A[:J, G + 2 * J:] = np.eye(J)
        A[J:2 * J, :G] = -Rd
        A[J:2 * J, G:G + J] = np.eye(J)
        A[2 * J:, :G] = -Rc
        A[2 * J:, G + J:G + 2 * J] = np.eye(J)
        b = np.concatenate([rhs, np.zeros(2 * J)])
        g_signed = system.tunnel_conversion() * system.tunnel_signs()
        c = np.concatenate([exo_next.price * g_signed, np.zeros(2 * J), a_next])
        lo = np.concatenate([np.zeros(G), system.discharge_min(),
                             system.discharge_min(), lvl_lo])
        hi = np.concatenate([system.flow_max(), system.discharge_max(),
                             system.discharge_max(), lvl_hi])
    if allow_spill:
        # spill s_j >= 0 enters the balance row: level_next = rhs + M pi - s
        S = np.zeros((A.shape[0], J))
        S[:J, :] = np.eye(J)
        A = np.hstack([A, S])
        c = np.concatenate([c, np.full(J, -SPILL_COST)])
        lo = np.concatenate([lo, np.zeros(J)])
        hi = np.concatenate([hi, np.full(J, SPILL_CAP)])
    return lp.LpProblem(c, A, b, lo, hi, offset=offset)


def stage_solution_decision(system: ReservoirSystem, x: np.ndarray) -> StageDecision:
    """Split a stage-LP solution vector back into a StageDecision."""
    if system.kind == "cascade":
        return StageDecision(discharges=x[:system.n_reservoirs].copy())
    return StageDecision(flows=x[:system.n_tunnels].copy())


def stage_solution_level(system: ReservoirSystem, x: np.ndarray) -> np.ndarray:
    J = system.n_reservoirs
    start = J if system.kind == "cascade" else system.n_tunnels + 2 * J
    return x[start:start + J].copy()


def stage_solution_spill(system: ReservoirSystem, x: np.ndarray) -> np.ndarray:
    """Spill amounts from a solution of a stage LP built with allow_spill."""
    J = system.n_reservoirs
    start = 2 * J if system.kind == "cascade" else system.n_tunnels + 3 * J
    if x.size != start + J:
        return np.zeros(J)
    return x[start:start + J].copy()


# ---------------------------------------------------------------------------
# full-horizon (wait-and-see) LP


def build_full_horizon_lp(system: ReservoirSystem, prices, inflows,
                          terminal_price: float,
                          allow_spill: bool = False) -> lp.LpProblem:
    """Deterministic LP over the whole horizon for one known price/inflow path.

    Columns are T stage-decision blocks followed by T next-level blocks; the
    objective adds the terminal value of the final pre-decision level.  With
    `allow_spill`, per-stage overflow columns (same token cost as the stage
    LPs) follow the level blocks, which keeps the problem feasible for
    systems whose inflows can exceed discharge capacity at full reservoirs.
    """
    prices = np.asarray(prices, dtype=float)
    inflows = np.asarray(inflows, dtype=float)
    T = prices.size
    J = system.n_reservoirs
    if inflows.shape != (T, J):
        raise ValueError(f"inflows must have shape ({T}, {J})")
    M = system.balance_matrix()
    nd = M.shape[1]                      # decision width per stage
    if system.kind == "cascade":
        d_lo, d_hi = system.discharge_min(), system.discharge_max()
        g_stage = system.conversion()
    else:
        d_lo, d_hi = np.zeros(nd), system.flow_max()
        g_stage = system.tunnel_conversion() * system.tunnel_signs()
    # level variables are post-decision levels l̄_t, t = 1..T; bounds enforce
    # l_min <= l̄_t + ν_{t+1} <= l_max with ν_{T+1} = 0 beyond the horizon.
    n = T * nd + T * J
    A = np.zeros((T * J, n))
    b = np.zeros(T * J)
    c = np.zeros(n)
    lo = np.zeros(n)
    hi = np.zeros(n)
    gT = system.terminal_conversion()
    lvl0 = system.level_initial()
    for t in range(T):
        rows = slice(t * J, (t + 1) * J)
        dcol = slice(t * nd, (t + 1) * nd)
        lcol = slice(T * nd + t * J, T * nd + (t + 1) * J)
        A[rows, dcol] = -M
        A[rows, lcol] = np.eye(J)
        if t == 0:
            b[rows] = lvl0                    # l̄_0 = initial pre-decision level
        else:
            prev = slice(T * nd + (t - 1) * J, T * nd + t * J)
            A[rows, prev] = -np.eye(J)
        # inflow ν_t arrives with the stage-t decision (ν_0 is folded into l_1)
        if t >= 1:
            b[rows] += inflows[t - 1]
        c[dcol] = prices[t] * g_stage
        lo[dcol], hi[dcol] = d_lo, d_hi
        nxt = inflows[t] if t < T else np.zeros(J)
        lo[lcol] = system.level_min() - nxt
        hi[lcol] = system.level_max() - nxt
    # terminal: value the final pre-decision level l̄_T + ν_T
    last = slice(T * nd + (T - 1) * J, T * nd + T * J)
    c[last] += terminal_price * gT
    offset = float(terminal_price * (gT @ inflows[T - 1]))
    if allow_spill:
        # one spill column per balance row: l̄_t = ... - s_t
        S = np.eye(T * J)
        A = np.hstack([A, S])
        c = np.concatenate([c, np.full(T * J, -SPILL_COST)])
        lo = np.concatenate([lo, np.zeros(T * J)])
        hi = np.concatenate([hi, np.full(T * J, SPILL_CAP)])
    return lp.LpProblem(c, A, b, lo, hi, offset=offset)


def solve_full_horizon(system: ReservoirSystem, prices, inflows,
                       terminal_price: float,
                       warm: lp.LpSolution | None = None,
                       allow_spill: bool = False) -> lp.LpSolution:
    """Solve the perfect-information LP for one sample path."""
    return lp.solve(build_full_horizon_lp(system, prices, inflows,
                                          terminal_price, allow_spill=allow_spill),
                    warm=warm)


# ---------------------------------------------------------------------------
# configuration files


def system_to_dict(system: ReservoirSystem) -> dict:
    d = {
        "kind": system.kind,
        "reservoirs": [
            {"id": r.id, "level_min": r.level_min, "level_max": r.level_max,
             "discharge_min": r.discharge_min, "discharge_max": r.discharge_max,
             "level_initial": r.level_initial, "conversion_rate": r.conversion_rate}
            for r in system.reservoirs
        ],
    }
    if system.kind == "cascade":
        R = system.cascade_topology
        pairs = [[j, k] for j in range(R.shape[0]) for k in range(R.shape[1])
                 if j != k and R[j, k] == 1.0]
        d["cascade_topology"] = pairs
    else:
        d["tunnels"] = [
            {"from_reservoir": t.from_reservoir, "to_reservoir": t.to_reservoir,
             "direction": t.direction, "conversion_rate": t.conversion_rate,
             "flow_max": t.flow_max}
            for t in system.tunnels
        ]
        d["pump_efficiency"] = system.pump_efficiency
    return d


def system_from_dict(data: dict) -> ReservoirSystem:
    try:
        kind = data["kind"]
        reservoirs = tuple(
            ReservoirSpec(
                id=int(r.get("id", i)),
                level_min=float(r["level_min"]), level_max=float(r["level_max"]),
                discharge_min=float(r.get("discharge_min", 0.0)),
                discharge_max=float(r["discharge_max"]),
                level_initial=float(r["level_initial"]),
                conversion_rate=float(r.get("conversion_rate", 0.0)),
            )
            for i, r in enumerate(data["reservoirs"])
        )
    except KeyError as exc:
        raise SystemConfigError(f"missing reservoir field {exc}") from exc
    J = len(reservoirs)
    if kind == "cascade":
        R = -np.eye(J)
        for pair in data.get("cascade_topology", []):
            down, up = int(pair[0]), int(pair[1])
            if not (0 <= down < J and 0 <= up < J):
                raise SystemConfigError(f"cascade pair {pair} out of range")
            R[down, up] = 1.0
        return ReservoirSystem(kind="cascade", reservoirs=reservoirs,
                               cascade_topology=R)
    tunnels = tuple(
        TunnelSpec(from_reservoir=int(t["from_reservoir"]),
                   to_reservoir=int(t["to_reservoir"]),
                   direction=t["direction"],
                   conversion_rate=float(t["conversion_rate"]),
                   flow_max=float(t["flow_max"]))
        for t in data.get("tunnels", [])
    )
    return ReservoirSystem(kind="network", reservoirs=reservoirs, tunnels=tunnels,
                           pump_efficiency=float(data.get("pump_efficiency", 1.0)))


def load_system(path: str | Path) -> ReservoirSystem:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise SystemConfigError(f"system config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SystemConfigError(f"invalid JSON in {path}: {exc}") from exc
    return system_from_dict(data)


def shipped_config_path(name: str) -> Path:
    """Path of a packaged system config, e.g. 'norwegian_cascade' or 'kwo_network'."""
    p = Path(__file__).parent / "configs" / f"{name}.json"
    if not p.exists():
        raise SystemConfigError(f"no shipped config named {name!r}")
    return p


def load_shipped_system(name: str) -> ReservoirSystem:
    return load_system(shipped_config_path(name))

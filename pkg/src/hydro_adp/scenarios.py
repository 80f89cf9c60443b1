"""Seasonal ARMA simulation of market prices and reservoir inflows.

Models are written as products of sparse backshift-lag polynomials applied to
the series (AR/differencing side) and to the innovations (MA side).  Expansion
to dense coefficient sequences turns each model into an explicit recursion

    x_t = -sum_{k>=1} A_k x_{t-k} + sum_{k>=0} M_k w_{t-k},   A_0 = M_0 = 1.

History before the first simulated hour is held constant at the series start
value with zero innovations, which is a fixed point of the differenced models.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_EXPANDED_LAG = 400


class ScenarioError(Exception):
    """Bad ARMA configuration or malformed scenario file."""


# each factor: [(lag, coefficient), ...] with an implicit constant term of 1
LagFactor = list[tuple[int, float]]


@dataclass(frozen=True)
class ArmaSpec:
    ar_factors: tuple
    ma_factors: tuple
    noise_std: float
    initial_level: float

    def __post_init__(self):
        object.__setattr__(self, "ar_factors",
                           tuple(tuple((int(l), float(c)) for l, c in f)
                                 for f in self.ar_factors))
        object.__setattr__(self, "ma_factors",
                           tuple(tuple((int(l), float(c)) for l, c in f)
                                 for f in self.ma_factors))
        for fs in (self.ar_factors, self.ma_factors):
            for f in fs:
                for lag, _ in f:
                    if lag < 1:
                        raise ScenarioError("lags must be >= 1")
        if self.noise_std < 0:
            raise ScenarioError("noise_std must be >= 0")
        if self.max_lag() > MAX_EXPANDED_LAG:
            raise ScenarioError(f"expanded lag exceeds {MAX_EXPANDED_LAG}")

    def ar_coeffs(self) -> np.ndarray:
        return expand_polynomial(self.ar_factors)

    def ma_coeffs(self) -> np.ndarray:
        return expand_polynomial(self.ma_factors)

    def max_lag(self) -> int:
        ar = sum(max((l for l, _ in f), default=0) for f in self.ar_factors)
        ma = sum(max((l for l, _ in f), default=0) for f in self.ma_factors)
        return max(ar, ma)

    def scaled(self, factor: float) -> "ArmaSpec":
        """Linearly rescale the series (start value and innovation size)."""
        return ArmaSpec(self.ar_factors, self.ma_factors,
                        self.noise_std * factor, self.initial_level * factor)


@dataclass(frozen=True)
class NoiseModel:
    price_std: float
    inflow_stds: np.ndarray
    inflow_corr: np.ndarray

    def __post_init__(self):
        stds = np.atleast_1d(np.asarray(self.inflow_stds, dtype=float))
        corr = np.asarray(self.inflow_corr, dtype=float)
        object.__setattr__(self, "inflow_stds", stds)
        object.__setattr__(self, "inflow_corr", corr)
        if self.price_std <= 0 or np.any(stds <= 0):
            raise ScenarioError("noise standard deviations must be positive")
        J = stds.size
        if corr.shape != (J, J) or not np.allclose(corr, corr.T) \
                or not np.allclose(np.diag(corr), 1.0):
            raise ScenarioError("inflow_corr must be symmetric with unit diagonal")
        if np.min(np.linalg.eigvalsh(corr)) < -1e-10:
            raise ScenarioError("inflow_corr must be positive semidefinite")

    def chol(self) -> np.ndarray:
        # tiny jitter admits exactly-semidefinite matrices
        return np.linalg.cholesky(self.inflow_corr + 1e-12 * np.eye(self.inflow_stds.size))


@dataclass
class ScenarioSet:
    horizon: int
    n_samples: int
    prices: np.ndarray            # (n_samples, T)
    inflows: np.ndarray           # (n_samples, T, J)
    seed: int
    role: str = "training"        # "training" | "test"

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        self.inflows = np.asarray(self.inflows, dtype=float)
        if self.prices.shape != (self.n_samples, self.horizon):
            raise ScenarioError("prices shape inconsistent with horizon/n_samples")
        if self.inflows.shape[:2] != (self.n_samples, self.horizon):
            raise ScenarioError("inflows shape inconsistent with horizon/n_samples")
        if self.role not in ("training", "test"):
            raise ScenarioError(f"unknown role {self.role!r}")

    @property
    def n_reservoirs(self) -> int:
        return self.inflows.shape[2]


def expand_polynomial(factors) -> np.ndarray:
    """Dense coefficients (by lag) of the product of sparse lag polynomials."""
    out = np.array([1.0])
    for f in factors:
        max_lag = max((l for l, _ in f), default=0)
        dense = np.zeros(max_lag + 1)
        dense[0] = 1.0
        for lag, coeff in f:
            if lag < 1:
                raise ScenarioError("lags must be >= 1")
            dense[lag] += coeff
        out = np.convolve(out, dense)
    return out


def _recursion(ar, ma, history_pad, noise, out):
    """In-place series recursion; history before index 0 is history_pad."""
    T = out.size
    Ka, Km = ar.size - 1, ma.size - 1
    for t in range(T):
        acc = noise[t]
        for k in range(1, Ka + 1):
            past = out[t - k] if t - k >= 0 else history_pad
            acc -= ar[k] * past
        for k in range(1, Km + 1):
            w = noise[t - k] if t - k >= 0 else 0.0
            acc += ma[k] * w
        out[t] = acc


def _simulate_series(spec: ArmaSpec, noise: np.ndarray) -> np.ndarray:
    out = np.empty(noise.size)
    _recursion(spec.ar_coeffs(), spec.ma_coeffs(), spec.initial_level, noise, out)
    return out


def simulate(price_spec: ArmaSpec, inflow_specs, noise: NoiseModel,
             horizon: int, n_samples: int, seed: int,
             role: str = "training") -> ScenarioSet:
    """Draw correlated price/inflow sample paths.

    Each sample uses an independently derived RNG substream so that results do
    not depend on evaluation order.  Inflows are clamped at zero after
    generation; prices may go negative.
    """
    if horizon < 1:
        raise ScenarioError("horizon must be >= 1")
    inflow_specs = list(inflow_specs)
    J = len(inflow_specs)
    if noise.inflow_stds.size != J:
        raise ScenarioError("noise model dimension does not match inflow specs")
    L = noise.chol()
    prices = np.empty((n_samples, horizon))
    inflows = np.empty((n_samples, horizon, J))
    streams = np.random.SeedSequence(seed).spawn(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng(streams[i])
        eps = rng.standard_normal(horizon) * noise.price_std
        xi = (rng.standard_normal((horizon, J)) @ L.T) * noise.inflow_stds
        prices[i] = _simulate_series(price_spec, eps)
        for j in range(J):
            inflows[i, :, j] = _simulate_series(inflow_specs[j], xi[:, j])
    np.clip(inflows, 0.0, None, out=inflows)
    return ScenarioSet(horizon=horizon, n_samples=n_samples, prices=prices,
                       inflows=inflows, seed=seed, role=role)


def forecast_one_step(spec: ArmaSpec, history, recent_innovations) -> float:
    """Conditional mean of the next value given realized series and noise."""
    hist = np.asarray(history, dtype=float)
    innov = np.asarray(recent_innovations, dtype=float)
    ar, ma = spec.ar_coeffs(), spec.ma_coeffs()
    acc = 0.0
    for k in range(1, ar.size):
        past = hist[hist.size - k] if k <= hist.size else spec.initial_level
        acc -= ar[k] * past
    for k in range(1, ma.size):
        w = innov[innov.size - k] if k <= innov.size else 0.0
        acc += ma[k] * w
    return float(acc)


def implied_innovations(spec: ArmaSpec, series) -> np.ndarray:
    """Invert the MA recursion to recover the innovations that generated
    `series` under the constant-history convention."""
    x = np.asarray(series, dtype=float)
    ar, ma = spec.ar_coeffs(), spec.ma_coeffs()
    w = np.empty(x.size)
    for t in range(x.size):
        acc = 0.0
        for k in range(ar.size):
            past = x[t - k] if t - k >= 0 else spec.initial_level
            acc += ar[k] * past
        for k in range(1, ma.size):
            if t - k >= 0:
                acc -= ma[k] * w[t - k]
        w[t] = acc
    return w


def terminal_price_forecasts(price_spec: ArmaSpec, scenarios: ScenarioSet) -> np.ndarray:
    """Per-sample one-step-ahead price forecast beyond the horizon."""
    out = np.empty(scenarios.n_samples)
    for i in range(scenarios.n_samples):
        path = scenarios.prices[i]
        out[i] = forecast_one_step(price_spec, path,
                                   implied_innovations(price_spec, path))
    return out


# ---------------------------------------------------------------------------
# shipped model parameters (Norwegian price/inflow dynamics)


def shipped_price_spec() -> ArmaSpec:
    return ArmaSpec(
        ar_factors=(((1, -0.6874),), ((1, -1.0),), ((24, -1.0),), ((168, -1.0),)),
        ma_factors=(((1, -0.9234),), ((24, -0.8502),), ((168, -0.9665),)),
        noise_std=0.2369,
        initial_level=20.0,
    )


def _inflow_spec(psi, phi1, phi2, phi41, std) -> ArmaSpec:
    return ArmaSpec(
        ar_factors=(((1, -psi),), ((1, -1.0),)),
        ma_factors=(((1, -phi1), (2, -phi2)), ((41, -phi41),)),
        noise_std=std,
        initial_level=50.0,
    )


def shipped_inflow_specs() -> tuple[ArmaSpec, ArmaSpec]:
    upper = _inflow_spec(0.9899, 1.3156, -0.3504, 0.8424, 0.6549)
    lower = _inflow_spec(0.9775, 1.4442, -0.5509, 0.8304, 0.1646)
    return upper, lower


CASCADE_INFLOW_CORR = 0.0417
CASCADE_UPPER_CAPACITY = 1130.0   # reference capacity for network inflow scaling


def specs_for_system(system) -> tuple[ArmaSpec, list[ArmaSpec], NoiseModel]:
    """Shipped price/inflow models sized for a given reservoir system.

    The cascade uses the two estimated inflow models directly.  Network
    reservoirs reuse them (alternating) scaled by capacity relative to the
    cascade's upper reservoir; all inflow innovation pairs share the cascade's
    estimated correlation.
    """
    price = shipped_price_spec()
    upper, lower = shipped_inflow_specs()
    J = system.n_reservoirs
    if system.kind == "cascade" and J == 2:
        specs = [upper, lower]
    else:
        caps = system.level_max()
        specs = [(upper if j % 2 == 0 else lower).scaled(caps[j] / CASCADE_UPPER_CAPACITY)
                 for j in range(J)]
    corr = np.full((J, J), CASCADE_INFLOW_CORR)
    np.fill_diagonal(corr, 1.0)
    noise = NoiseModel(price_std=price.noise_std,
                       inflow_stds=np.array([s.noise_std for s in specs]),
                       inflow_corr=corr)
    return price, specs, noise


# ---------------------------------------------------------------------------
# persistence (CSV, lossless at 17 significant digits)


def save_scenarios(scenarios: ScenarioSet, path: str | Path) -> None:
    path = Path(path)
    J = scenarios.n_reservoirs
    header = ["sample", "t", "price"] + [f"inflow_{j + 1}" for j in range(J)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(scenarios.n_samples):
            for t in range(scenarios.horizon):
                row = [i, t + 1, format(scenarios.prices[i, t], ".17g")]
                row += [format(v, ".17g") for v in scenarios.inflows[i, t]]
                w.writerow(row)


def load_scenarios(path: str | Path, seed: int = 0,
                   role: str = "training") -> ScenarioSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"{path}: empty scenario file") from None
        expected_prefix = ["sample", "t", "price"]
        if header[:3] != expected_prefix:
            raise ScenarioError(f"{path}: header must start with {expected_prefix}, "
                                f"got {header[:3]}")
        J = len(header) - 3
        for j in range(J):
            want = f"inflow_{j + 1}"
            if header[3 + j] != want:
                raise ScenarioError(f"{path}: expected column {want!r} at position "
                                    f"{3 + j}, got {header[3 + j]!r}")
        if J == 0:
            raise ScenarioError(f"{path}: expected column 'inflow_1' missing")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + J:
                raise ScenarioError(f"{path}: row {lineno} has {len(row)} fields, "
                                    f"expected {3 + J}")
            try:
                i, t = int(row[0]), int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ScenarioError(f"{path}: row {lineno}: {exc}") from None
            rows[(i, t)] = vals
    if not rows:
        raise ScenarioError(f"{path}: no data rows")
    n = max(i for i, _ in rows) + 1
    T = max(t for _, t in rows)
    prices = np.empty((n, T))
    inflows = np.empty((n, T, J))
    for i in range(n):
        for t in range(1, T + 1):
            if (i, t) not in rows:
                raise ScenarioError(f"{path}: missing row for sample {i}, t {t}")
            vals = rows[(i, t)]
            prices[i, t - 1] = vals[0]
            inflows[i, t - 1] = vals[1:]
    return ScenarioSet(horizon=T, n_samples=n, prices=prices, inflows=inflows,
                       seed=seed, role=role)

"""Deterministic bounded-variable simplex for small dense LPs.

All problems handled here are tiny (a few to a few hundred variables), so the
implementation keeps a dense explicit basis inverse with rank-1 updates and
periodic refactorization.  Pivoting follows Bland's rule (entering: smallest
eligible index; leaving: smallest basic index among the ratio-test minimizers),
which makes every solve deterministic and cycle-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Tolerances; double precision leaves ample headroom at this problem scale.
FEAS_TOL = 1e-7       # relative primal feasibility (equality residuals)
OPT_TOL = 1e-7        # reduced-cost optimality
BOUND_TOL = 1e-9      # bound violations on variables
PIVOT_TOL = 1e-10     # smallest pivot magnitude accepted in the ratio test
REFACTOR_EVERY = 60   # basis-inverse refactorization cadence

_INF = np.inf


class LpError(Exception):
    """Contract violation: malformed problem data."""


class LpInternalError(Exception):
    """Internal inconsistency, e.g. unboundedness despite boxed variables."""


@dataclass(frozen=True)
class LpProblem:
    """max objective @ x  s.t.  eq_matrix @ x == eq_rhs,  lower <= x <= upper.

    `offset` is a constant added to the reported optimal value; it never
    affects the optimization itself.
    """

    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.objective, dtype=float))
        A = np.asarray(self.eq_matrix, dtype=float)
        if A.size == 0:
            A = A.reshape(0, c.size)
        b = np.atleast_1d(np.asarray(self.eq_rhs, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "eq_matrix", A)
        object.__setattr__(self, "eq_rhs", b)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        n = c.size
        if A.shape != (b.size, n):
            raise LpError(f"shape mismatch: A is {A.shape}, c has {n}, b has {b.size}")
        if lo.size != n or hi.size != n:
            raise LpError("bound vectors must match the number of variables")
        for name, v in (("objective", c), ("eq_matrix", A), ("eq_rhs", b),
                        ("lower", lo), ("upper", hi)):
            if not np.all(np.isfinite(v)):
                raise LpError(f"non-finite entries in {name}")
        if np.any(lo > hi + BOUND_TOL):
            raise LpError("lower bound exceeds upper bound")
        if b.size > n:
            raise LpError(f"more equalities ({b.size}) than variables ({n})")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_eqs(self) -> int:
        return self.eq_rhs.size

    def dump(self) -> str:
        """Plain-text fixed layout of the instance, for bug reports."""
        with np.printoptions(precision=17, linewidth=120, threshold=10_000):
            return (f"LpProblem n={self.n_vars} m={self.n_eqs} offset={self.offset!r}\n"
                    f"objective {self.objective!r}\n"
                    f"eq_matrix {self.eq_matrix!r}\n"
                    f"eq_rhs    {self.eq_rhs!r}\n"
                    f"lower     {self.lower!r}\n"
                    f"upper     {self.upper!r}\n")


@dataclass
class LpSolution:
    status: str                       # "optimal" | "infeasible"
    x: np.ndarray | None
    value: float
    iterations: int
    duals: np.ndarray | None = None   # equality multipliers (d value / d rhs)
    basis: np.ndarray | None = None   # basic variable indices (warm starts)
    at_upper: np.ndarray | None = None  # nonbasic-at-upper mask (warm starts)
    reduced_costs: np.ndarray | None = field(default=None, repr=False)


class _Tableau:
    """Mutable simplex state over an extended column set (structural + artificial)."""

    def __init__(self, A, lower, upper):
        self.A = A
        self.lower = lower
        self.upper = upper
        self.m, self.n = A.shape
        self.basis = np.empty(self.m, dtype=int)
        self.in_basis = np.zeros(self.n, dtype=bool)
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.x = lower.copy()
        self.Binv = np.eye(self.m)
        self.pivots_since_refactor = 0
        self.iterations = 0

    def set_basis(self, basis, at_upper):
        self.basis = np.asarray(basis, dtype=int).copy()
        self.in_basis[:] = False
        self.in_basis[self.basis] = True
        self.at_upper = at_upper.copy()
        self.at_upper[self.basis] = False
        self.refactor()
        self.reset_nonbasic()
        self.recompute_basics()

    def reset_nonbasic(self):
        nb = ~self.in_basis
        self.x[nb] = np.where(self.at_upper[nb], self.upper[nb], self.lower[nb])

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpInternalError("singular basis matrix") from exc
        self.pivots_since_refactor = 0

    def recompute_basics(self, b=None):
        rhs = self._rhs if b is None else b
        nb = ~self.in_basis
        r = rhs - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.Binv @ r

    def attach_rhs(self, b):
        self._rhs = b

    def basics_within_bounds(self, tol):
        xb = self.x[self.basis]
        return (np.all(xb >= self.lower[self.basis] - tol)
                and np.all(xb <= self.upper[self.basis] + tol))

    def pivot(self, entering, leaving_pos, w):
        """Replace basis[leaving_pos] by `entering`; rank-1 update of Binv."""
        leaving = self.basis[leaving_pos]
        self.basis[leaving_pos] = entering
        self.in_basis[leaving] = False
        self.in_basis[entering] = True
        self.at_upper[entering] = False
        piv = w[leaving_pos]
        row = self.Binv[leaving_pos, :] / piv
        correction = np.outer(w, row)
        correction[leaving_pos, :] = 0.0
        self.Binv -= correction
        self.Binv[leaving_pos, :] = row
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= REFACTOR_EVERY:
            self.refactor()

    def run(self, c, opt_tol, max_iter):
        """Primal simplex (maximize c @ x) from the current feasible basis."""
        lo, hi = self.lower, self.upper
        while True:
            self.iterations += 1
            if self.iterations > max_iter:
                raise LpInternalError("simplex iteration limit exceeded")
            y = self.Binv.T @ c[self.basis]
            d = c - y @ self.A
            nb_idx = np.flatnonzero(~self.in_basis)
            dn = d[nb_idx]
            up = self.at_upper[nb_idx]
            eligible = np.where(up, dn < -opt_tol, dn > opt_tol)
            eligible &= hi[nb_idx] > lo[nb_idx]   # fixed columns never enter
            cand = nb_idx[eligible]
            if cand.size == 0:
                return y, d
            j = int(cand[0])                     # Bland: smallest index
            sign = -1.0 if self.at_upper[j] else 1.0
            w = self.Binv @ self.A[:, j]
            delta = sign * w                      # x_B changes by -delta * t
            # ratio test against basic-variable bounds
            t_best = hi[j] - lo[j]                # bound flip distance
            leave_pos = -1
            xb = self.x[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                pos = delta > PIVOT_TOL
                neg = delta < -PIVOT_TOL
                ratios = np.full(self.m, _INF)
                ratios[pos] = (xb[pos] - lo[self.basis][pos]) / delta[pos]
                ratios[neg] = (xb[neg] - hi[self.basis][neg]) / delta[neg]
            ratios = np.maximum(ratios, 0.0)
            if ratios.size:
                rmin = ratios.min()
                if rmin < t_best:
                    # Bland tie-break: smallest basic variable index
                    ties = np.flatnonzero(ratios <= rmin + 1e-12)
                    leave_pos = int(ties[np.argmin(self.basis[ties])])
                    t_best = rmin
            if not np.isfinite(t_best):
                raise LpInternalError("unbounded direction in a boxed LP")
            # apply the step
            self.x[self.basis] = xb - delta * t_best
            self.x[j] = self.x[j] + sign * t_best
            if leave_pos < 0:
                self.at_upper[j] = not self.at_upper[j]   # bound flip
                self.x[j] = hi[j] if self.at_upper[j] else lo[j]
            else:
                leaving = self.basis[leave_pos]
                # leaving variable rests at the bound it ran into
                self.at_upper[leaving] = delta[leave_pos] < 0
                self.x[leaving] = hi[leaving] if self.at_upper[leaving] else lo[leaving]
                self.pivot(j, leave_pos, w)
                self.recompute_basics()


def _unit_column_crash(A):
    """Greedy basis of distinct signed unit columns, or None if incomplete."""
    m, n = A.shape
    basis = np.full(m, -1, dtype=int)
    nz_counts = np.count_nonzero(A, axis=0)
    for j in range(n):
        if nz_counts[j] != 1:
            continue
        i = int(np.flatnonzero(A[:, j])[0])
        if basis[i] < 0 and abs(A[i, j]) > PIVOT_TOL:
            basis[i] = j
    if np.any(basis < 0):
        return None
    return basis


def solve(p: LpProblem, warm: LpSolution | None = None,
          max_iter: int | None = None) -> LpSolution:
    """Solve a boxed-variable LP to a basic optimal point under Bland's rule.

    `warm` may carry the basis of a previously solved, structurally identical
    problem (same dimensions); it is verified and silently discarded if the
    implied basic point is infeasible.
    """
    n, m = p.n_vars, p.n_eqs
    if max_iter is None:
        max_iter = 200 * (n + m + 10)
    b_scale = 1.0 + float(np.max(np.abs(p.eq_rhs))) if m else 1.0
    feas_tol = FEAS_TOL * b_scale

    if m == 0:
        x = np.where(p.objective > 0, p.upper, p.lower)
        return LpSolution("optimal", x, float(p.objective @ x) + p.offset, 0,
                          duals=np.zeros(0), basis=np.zeros(0, dtype=int),
                          at_upper=p.objective > 0,
                          reduced_costs=p.objective.copy())

    # extended columns: structural 0..n-1, artificial n..n+m-1
    A_ext = np.hstack([p.eq_matrix, np.eye(m)])
    lo_ext = np.concatenate([p.lower, np.zeros(m)])
    hi_ext = np.concatenate([p.upper, np.full(m, _INF)])
    tab = _Tableau(A_ext, lo_ext, hi_ext)
    tab.attach_rhs(p.eq_rhs)

    def try_basis(basis, at_upper):
        basis = np.asarray(basis, dtype=int)
        if basis.size != m or np.unique(basis).size != m:
            return False
        B = A_ext[:, basis]
        if abs(np.linalg.det(B)) < 1e-12:
            return False
        tab.set_basis(basis, at_upper)
        return tab.basics_within_bounds(feas_tol)

    started = False
    if warm is not None and warm.basis is not None and warm.basis.size == m \
            and warm.at_upper is not None and warm.at_upper.size >= n:
        au = np.zeros(n + m, dtype=bool)
        au[:n] = warm.at_upper[:n]
        if try_basis(warm.basis, au):
            started = True
    if not started:
        crash = _unit_column_crash(p.eq_matrix)
        if crash is not None and try_basis(crash, np.zeros(n + m, dtype=bool)):
            started = True
    if not started:
        # phase 1: artificial basis absorbing the residual sign
        tab.in_basis[:] = False
        tab.at_upper[:] = False
        tab.x = lo_ext.copy()
        r = p.eq_rhs - p.eq_matrix @ tab.x[:n]
        signs = np.where(r < 0, -1.0, 1.0)
        A_ext[:, n:] = np.diag(signs)
        tab.basis = np.arange(n, n + m)
        tab.in_basis[n:] = True
        tab.refactor()
        tab.x[n:] = np.abs(r)
        c1 = np.concatenate([np.zeros(n), -np.ones(m)])
        tab.run(c1, OPT_TOL, max_iter)
        infeas = float(np.sum(tab.x[n:]))
        if infeas > feas_tol:
            return LpSolution("infeasible", None, -np.inf, tab.iterations)
        # drive basic artificials out where possible
        for pos in range(m):
            var = tab.basis[pos]
            if var < n:
                continue
            row = tab.Binv[pos, :] @ A_ext[:, :n]
            pivot_cols = np.flatnonzero((np.abs(row) > 1e-9) & ~tab.in_basis[:n])
            if pivot_cols.size:
                j = int(pivot_cols[0])
                w = tab.Binv @ A_ext[:, j]
                tab.pivot(j, pos, w)
        tab.recompute_basics()

    # pin artificials at zero for phase 2 regardless of how the start was found
    hi_ext[n:] = 0.0
    tab.x[n:] = 0.0
    c_ext = np.concatenate([p.objective, np.zeros(m)])
    y, d = tab.run(c_ext, OPT_TOL, max_iter)
    tab.recompute_basics()        # polish against accumulated drift
    x = tab.x[:n].copy()
    np.clip(x, p.lower, p.upper, out=x)
    value = float(p.objective @ x) + p.offset
    return LpSolution("optimal", x, value, tab.iterations,
                      duals=y.copy(), basis=tab.basis.copy(),
                      at_upper=tab.at_upper[:n].copy(),
                      reduced_costs=d[:n].copy())

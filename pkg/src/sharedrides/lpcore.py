"""Linear programs with primal and dual solutions.

Two interchangeable backends sit behind :func:`solve_lp`:

* ``"simplex"`` -- a dense revised simplex (two phases, Dantzig pricing with a
  switch to Bland's rule once pivots stall) written for this package;
* ``"highs"`` -- SciPy's HiGHS interface, used for the larger fluid programs.

``"auto"`` picks the simplex for small programs and HiGHS otherwise.
Duals are reported as the derivative of the optimal value with respect to the
right-hand side: ``>=`` rows get nonnegative duals, ``<=`` rows nonpositive
ones and equality rows free ones (for minimisation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
REL_TOL = 1e-7
#: ``auto`` uses the built-in simplex up to this many rows.
AUTO_SIMPLEX_MAX_ROWS = 400

SENSES = ("=", ">=", "<=")


class LpError(RuntimeError):
    """Base class for solver failures."""


class LpNonConvergence(LpError):
    """The iteration cap was hit before optimality was proven."""


@dataclass
class LinearProgram:
    """``min c.x`` subject to ``A x (sense) b`` and ``x >= 0``.

    ``A`` may be dense or any SciPy sparse matrix; it is stored as CSR.
    """

    c: np.ndarray
    A: sparse.csr_matrix
    senses: list[str]
    b: np.ndarray
    var_names: list[str] | None = None
    row_names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.A = sparse.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        m, n = self.A.shape
        if n < 1 or len(self.c) != n:
            raise ValueError("objective length must match the column count (>= 1)")
        if len(self.b) != m or len(self.senses) != m:
            raise ValueError("rhs and senses must have one entry per row")
        bad = [s for s in self.senses if s not in SENSES]
        if bad:
            raise ValueError(f"unknown constraint senses {sorted(set(bad))}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A.data))):
            raise ValueError("LP coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_rows(cls, c: Sequence[float], rows: Sequence[tuple[dict, str, float]]
                  ) -> "LinearProgram":
        """Build from ``(coefficients {col: value}, sense, rhs)`` triples."""
        data, ri, ci = [], [], []
        for r, (coefs, _, _) in enumerate(rows):
            for col, v in coefs.items():
                ri.append(r)
                ci.append(col)
                data.append(v)
        A = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), len(c)))
        return cls(np.asarray(c, float), A, [r[1] for r in rows], [r[2] for r in rows])


@dataclass
class LpSolution:
    status: str                     # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    method: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_lp(lp: LinearProgram, method: str = "auto", max_iter: int | None = None
             ) -> LpSolution:
    """Solve ``lp`` and return primal values, duals and the optimal value.

    Raises:
        LpNonConvergence: if the iteration cap is exceeded.
    """
    if method == "auto":
        method = "simplex" if lp.n_rows <= AUTO_SIMPLEX_MAX_ROWS else "highs"
    if method == "simplex":
        return RevisedSimplex(lp, max_iter=max_iter).solve()
    if method == "highs":
        return _solve_highs(lp, max_iter)
    raise ValueError(f"unknown LP method {method!r}")


# -- HiGHS backend ------------------------------------------------------------

def _solve_highs(lp: LinearProgram, max_iter: int | None) -> LpSolution:
    senses = np.array(lp.senses)
    eq = senses == "="
    ge = senses == ">="
    le = senses == "<="
    ub_rows = np.flatnonzero(ge | le)
    sign = np.where(ge[ub_rows], -1.0, 1.0)
    A_ub = sparse.diags(sign) @ lp.A[ub_rows] if len(ub_rows) else None
    b_ub = sign * lp.b[ub_rows] if len(ub_rows) else None
    eq_rows = np.flatnonzero(eq)
    A_eq = lp.A[eq_rows] if len(eq_rows) else None
    b_eq = lp.b[eq_rows] if len(eq_rows) else None
    options = {"presolve": True}
    if max_iter is not None:
        options["maxiter"] = max_iter
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs", options=options)
    if res.status == 4:
        # presolve can leave "infeasible or unbounded" undecided
        options["presolve"] = False
        res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=(0, None), method="highs", options=options)
    if res.status == 1:
        raise LpNonConvergence(f"HiGHS hit its iteration limit: {res.message}")
    if res.status == 2:
        return LpSolution("infeasible", method="highs", iterations=res.nit)
    if res.status == 3:
        return LpSolution("unbounded", method="highs", iterations=res.nit)
    if res.status != 0:
        raise LpError(f"HiGHS failed: {res.message}")
    duals = np.zeros(lp.n_rows)
    if len(ub_rows):
        duals[ub_rows] = sign * res.ineqlin.marginals
    if len(eq_rows):
        duals[eq_rows] = res.eqlin.marginals
    return LpSolution("optimal", np.asarray(res.x), duals, float(res.fun),
                      int(res.nit), "highs")


# -- revised simplex ----------------------------------------------------------

class RevisedSimplex:
    """Dense two-phase revised simplex on ``A x + slack = b, x >= 0``.

    The basis inverse is kept explicitly and updated by elementary row
    operations, with a fresh inversion every ``refactor_every`` pivots.
    Pricing is Dantzig's most-negative reduced cost; after
    ``stall_limit`` consecutive degenerate pivots it switches to Bland's
    smallest-index rule, which cannot cycle.
    """

    def __init__(self, lp: LinearProgram, max_iter: int | None = None,
                 tol: float = FEAS_TOL, refactor_every: int = 60, stall_limit: int = 30):
        self.lp = lp
        self.tol = tol
        self.refactor_every = refactor_every
        self.stall_limit = stall_limit
        m, n = lp.n_rows, lp.n_vars
        self.max_iter = max_iter or max(5000, 50 * (m + n))
        A = lp.A.toarray()
        b = lp.b.copy()
        slack_cols = []
        for r, s in enumerate(lp.senses):
            if s == ">=":
                slack_cols.append((r, -1.0))
            elif s == "<=":
                slack_cols.append((r, 1.0))
        S = np.zeros((m, len(slack_cols)))
        for k, (r, v) in enumerate(slack_cols):
            S[r, k] = v
        full = np.hstack([A, S])
        # flip rows so that b >= 0, then append one artificial per row
        self.row_sign = np.where(b < 0, -1.0, 1.0)
        full *= self.row_sign[:, None]
        b *= self.row_sign
        self.n_struct = n
        self.n_real = full.shape[1]
        self.A = np.hstack([full, np.eye(m)])
        self.b = b
        self.m = m
        self.iterations = 0

    def solve(self) -> LpSolution:
        m = self.m
        n_total = self.A.shape[1]
        art = np.arange(self.n_real, n_total)
        basis = art.copy()
        self.Binv = np.eye(m)
        self.basis = basis
        self._since_refactor = 0
        if m == 0:
            c = self.lp.c
            if np.any(c < -self.tol):
                return LpSolution("unbounded", method="simplex")
            return LpSolution("optimal", np.zeros(self.n_struct), np.zeros(0), 0.0, 0,
                              "simplex")
        # phase I: minimise the sum of artificials
        cost1 = np.zeros(n_total)
        cost1[art] = 1.0
        allowed = np.ones(n_total, dtype=bool)
        status = self._iterate(cost1, allowed)
        if status == "unbounded":  # cannot happen in phase I
            raise LpError("phase I reported unbounded")
        xb = self.Binv @ self.b
        infeas = float(cost1[self.basis] @ xb)
        if infeas > max(self.tol, REL_TOL * max(1.0, np.abs(self.b).max())):
            return LpSolution("infeasible", iterations=self.iterations, method="simplex")
        self._drive_out_artificials()
        # phase II on the original objective; artificials may not re-enter
        cost2 = np.zeros(n_total)
        cost2[:self.n_struct] = self.lp.c
        allowed[art] = False
        status = self._iterate(cost2, allowed)
        if status == "unbounded":
            return LpSolution("unbounded", iterations=self.iterations, method="simplex")
        self._refactor()
        xb = self.Binv @ self.b
        x_full = np.zeros(n_total)
        x_full[self.basis] = xb
        x_full[np.abs(x_full) < self.tol] = 0.0
        y = cost2[self.basis] @ self.Binv
        duals = y * self.row_sign
        x = x_full[:self.n_struct]
        return LpSolution("optimal", x, duals, float(self.lp.c @ x),
                          self.iterations, "simplex")

    def _refactor(self) -> None:
        self.Binv = np.linalg.inv(self.A[:, self.basis])
        self._since_refactor = 0

    def _iterate(self, cost: np.ndarray, allowed: np.ndarray) -> str:
        degenerate_run = 0
        while True:
            if self.iterations >= self.max_iter:
                raise LpNonConvergence(
                    f"revised simplex exceeded {self.max_iter} iterations")
            if self._since_refactor >= self.refactor_every:
                self._refactor()
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.A
            d[self.basis] = 0.0
            scale = max(1.0, np.abs(cost).max())
            candidates = np.flatnonzero(allowed & (d < -self.tol * scale))
            if candidates.size == 0:
                return "optimal"
            use_bland = degenerate_run >= self.stall_limit
            if use_bland:
                q = int(candidates[0])
            else:
                q = int(candidates[np.argmin(d[candidates])])
            alpha = self.Binv @ self.A[:, q]
            xb = self.Binv @ self.b
            pos = np.flatnonzero(alpha > self.tol)
            if pos.size == 0:
                return "unbounded"
            ratios = np.maximum(xb[pos], 0.0) / alpha[pos]
            best = ratios.min()
            ties = pos[ratios <= best + self.tol]
            if use_bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(alpha[ties])])
            degenerate_run = degenerate_run + 1 if best <= self.tol else 0
            self._pivot(r, q, alpha)
            self.iterations += 1

    def _pivot(self, r: int, q: int, alpha: np.ndarray) -> None:
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basis[r] = q
        self._since_refactor += 1

    def _drive_out_artificials(self) -> None:
        for r in range(self.m):
            if self.basis[r] < self.n_real:
                continue
            row = self.Binv[r] @ self.A[:, :self.n_real]
            nz = np.flatnonzero((np.abs(row) > 1e-7)
                                & ~np.isin(np.arange(self.n_real), self.basis))
            if nz.size:
                q = int(nz[0])
                alpha = self.Binv @ self.A[:, q]
                self._pivot(r, q, alpha)
            # otherwise the row is redundant and its artificial stays at zero


# -- diagnostics --------------------------------------------------------------

def check_solution(lp: LinearProgram, sol: LpSolution) -> dict:
    """Primal residual, duality gap and worst complementary-slackness product."""
    Ax = lp.A @ sol.x
    resid = 0.0
    for r, s in enumerate(lp.senses):
        diff = Ax[r] - lp.b[r]
        if s == "=":
            resid = max(resid, abs(diff))
        elif s == ">=":
            resid = max(resid, -diff)
        else:
            resid = max(resid, diff)
    resid = max(resid, float(-sol.x.min(initial=0.0)))
    dual_obj = float(lp.b @ sol.duals)
    gap = abs(sol.objective - dual_obj)
    slack = np.abs(Ax - lp.b)
    comp = float(np.max(slack * np.abs(sol.duals), initial=0.0))
    reduced = lp.c - lp.A.T @ sol.duals
    comp_var = float(np.max(np.abs(reduced) * sol.x, initial=0.0))
    return {"primal_residual": resid, "duality_gap": gap, "dual_objective": dual_obj,
            "complementarity": max(comp, comp_var),
            "min_reduced_cost": float(reduced.min(initial=0.0))}


def write_lp_file(lp: LinearProgram, path: str | Path) -> None:
    """Dump ``lp`` in CPLEX LP text format for cross-checking with other solvers."""
    names = lp.var_names or [f"x{k}" for k in range(lp.n_vars)]
    rnames = lp.row_names or [f"r{k}" for k in range(lp.n_rows)]

    def expr(pairs):
        parts = [f"{'+' if v >= 0 else '-'} {float(abs(v))!r} {names[k]}" for k, v in pairs]
        return " ".join(parts) if parts else "0 " + names[0]

    lines = ["Minimize", " obj: " + expr((k, v) for k, v in enumerate(lp.c) if v != 0),
             "Subject To"]
    A = lp.A.tocsr()
    for r in range(lp.n_rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        body = expr(zip(A.indices[lo:hi], A.data[lo:hi]))
        lines.append(f" {rnames[r]}: {body} {lp.senses[r]} {float(lp.b[r])!r}")
    lines += ["Bounds"] + [f" {nm} >= 0" for nm in names] + ["End"]
    Path(path).write_text("\n".join(lines) + "\n")

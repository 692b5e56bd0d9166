"""Dense two-phase primal simplex with Bland's rule.

Problems solved here are small (a few hundred variables at most), so the
solver keeps a full tableau and favours determinism over speed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
REFACTOR_EVERY = 50
HARRIS_TOL = 1e-9
STALL_LIMIT = 200


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Sense(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class Constraint:
    coeffs: np.ndarray
    relation: Relation
    rhs: float
    name: Optional[str] = None


@dataclass
class LinearProgram:
    num_vars: int
    objective: np.ndarray
    sense: Sense = Sense.MINIMIZE
    constraints: list = field(default_factory=list)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    var_names: Optional[list] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.sense = Sense(self.sense)
        if self.objective.shape != (self.num_vars,):
            raise ValueError(f"objective has shape {self.objective.shape}, expected ({self.num_vars},)")
        self.lower = np.zeros(self.num_vars) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(self.num_vars, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)

    def add_constraint(self, coeffs, relation, rhs, name=None) -> Constraint:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.num_vars,):
            raise ValueError(f"constraint has {coeffs.shape} coefficients, expected {self.num_vars}")
        if not np.isfinite(rhs):
            raise ValueError("constraint right-hand side must be finite")
        c = Constraint(coeffs, Relation(relation), float(rhs), name)
        self.constraints.append(c)
        return c

    def matrix(self):
        """Constraint matrix, relations and right-hand sides as arrays."""
        if not self.constraints:
            return np.zeros((0, self.num_vars)), [], np.zeros(0)
        A = np.array([c.coeffs for c in self.constraints])
        return A, [c.relation for c in self.constraints], np.array([c.rhs for c in self.constraints])

    def violations(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of a point."""
        worst = 0.0
        for c in self.constraints:
            lhs = float(c.coeffs @ x)
            if c.relation is Relation.LE:
                worst = max(worst, lhs - c.rhs)
            elif c.relation is Relation.GE:
                worst = max(worst, c.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - c.rhs))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.upper, initial=0.0)))
        return worst


@dataclass
class LpSolution:
    status: LpStatus
    values: np.ndarray
    objective_value: float
    iterations: int
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class _IterationCap(Exception):
    pass


class _Tableau:
    """Full tableau; the last row holds reduced costs and minus the objective."""

    def __init__(self, A, b, basis, cap, refactor_every=REFACTOR_EVERY):
        m, n = A.shape
        self.A = A
        self.b = b
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = list(basis)
        self.cost = np.zeros(n)
        self.iterations = 0
        self.cap = cap
        self.refactor_every = refactor_every

    @property
    def m(self):
        return self.T.shape[0] - 1

    def set_costs(self, c):
        n = self.T.shape[1] - 1
        self.cost = np.asarray(c, dtype=float)
        self.T[-1, :n] = c
        self.T[-1, n] = 0.0
        for r, j in enumerate(self.basis):
            if self.T[-1, j] != 0.0:
                self.T[-1] -= self.T[-1, j] * self.T[r]

    def refactor(self):
        """Rebuild the tableau from the original rows and the current basis."""
        m = self.m
        if m == 0:
            return
        n = self.T.shape[1] - 1
        try:
            rows = np.linalg.solve(self.A[:, self.basis], np.column_stack([self.A, self.b]))
        except np.linalg.LinAlgError:
            return
        if not np.all(np.isfinite(rows)):
            return
        self.T[:m] = rows
        self.T[:m, self.basis] = np.eye(m)
        self.T[:m, n] = np.clip(self.T[:m, n], 0.0, None)
        self.set_costs(self.cost)

    def drop_row(self, r):
        self.T = np.delete(self.T, r, axis=0)
        self.A = np.delete(self.A, r, axis=0)
        self.b = np.delete(self.b, r)
        del self.basis[r]

    def drop_columns(self, start):
        n = self.T.shape[1] - 1
        self.T = np.delete(self.T, np.s_[start:n], axis=1)
        self.A = self.A[:, :start]
        self.cost = self.cost[:start]

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self.iterations += 1
        if self.iterations > self.cap:
            raise _IterationCap()
        if self.iterations % self.refactor_every == 0:
            self.refactor()

    def leaving_row(self, j, strict):
        """Ratio test for entering column ``j``; None when the column is unbounded.

        Default is a Harris two-pass test (largest pivot among near-minimal
        ratios); ``strict`` uses the plain minimum ratio with Bland's
        lowest-index tie-break.
        """
        T = self.T
        col = T[:-1, j]
        rhs = np.clip(T[:-1, -1], 0.0, None)
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return None
        if strict:
            ratios = rhs[rows] / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
            return int(min(ties, key=lambda k: self.basis[k]))
        theta = np.min((rhs[rows] + HARRIS_TOL) / col[rows])
        eligible = rows[rhs[rows] / col[rows] <= theta]
        biggest = col[eligible].max()
        ties = eligible[col[eligible] >= biggest * (1 - 1e-12)]
        return int(min(ties, key=lambda k: self.basis[k]))

    def run(self, allowed: int) -> bool:
        """Simplex iterations over the first ``allowed`` columns; False if unbounded.

        Entering column: Bland's lowest index with negative reduced cost.
        After STALL_LIMIT pivots without objective progress the leaving rule
        switches to strict Bland until progress resumes, which rules out
        cycling.
        """
        verified = False
        stalled = 0
        last_obj = self.T[-1, -1]
        while True:
            T = self.T
            d = T[-1, :allowed]
            entering = np.flatnonzero(d < -PIVOT_TOL)
            if entering.size == 0:
                if verified:
                    return True
                # confirm optimality on a freshly factored tableau
                self.refactor()
                verified = True
                continue
            verified = False
            j = int(entering[0])
            r = self.leaving_row(j, strict=stalled >= STALL_LIMIT)
            if r is None:
                return False
            self.pivot(r, j)
            self.T[:-1, -1] = np.clip(self.T[:-1, -1], 0.0, None)
            obj = self.T[-1, -1]
            if abs(obj - last_obj) > 1e-12 * (1.0 + abs(last_obj)):
                stalled = 0
                last_obj = obj
            else:
                stalled += 1


def _standard_form(lp: LinearProgram):
    """Map to min c.y s.t. A y (rel) b, y >= 0.  Returns the pieces and the back-map."""
    n = lp.num_vars
    cols = []  # (orig var, sign)
    shift = np.zeros(n)
    for k in range(n):
        lo = lp.lower[k]
        if np.isfinite(lo):
            shift[k] = lo
            cols.append((k, 1.0))
        else:
            cols.append((k, 1.0))
            cols.append((k, -1.0))
    T = np.zeros((n, len(cols)))
    for idx, (k, sgn) in enumerate(cols):
        T[k, idx] = sgn
    A, rels, b = lp.matrix()
    rows, rrels, rb = [A @ T], list(rels), [b - A @ shift]
    for k in range(n):
        if np.isfinite(lp.upper[k]):
            if np.isfinite(lp.lower[k]) and lp.upper[k] < lp.lower[k]:
                rows.append(np.zeros((1, len(cols))))
                rrels.append(Relation.EQ)
                rb.append(np.array([1.0]))
                continue
            e = np.zeros(n)
            e[k] = 1.0
            rows.append((e @ T)[None, :])
            rrels.append(Relation.LE)
            rb.append(np.array([lp.upper[k] - shift[k]]))
    A_std = np.vstack(rows) if rows else np.zeros((0, len(cols)))
    b_std = np.concatenate(rb) if rb else np.zeros(0)
    c = lp.objective if lp.sense is Sense.MINIMIZE else -lp.objective
    return c @ T, A_std, rrels, b_std, T, shift


def solve_lp(lp: LinearProgram, max_iterations: Optional[int] = None) -> LpSolution:
    """Solve ``lp`` with a two-phase dense simplex (Bland's anti-cycling rule)."""
    c, A, rels, b, back, shift = _standard_form(lp)
    m, n = A.shape
    if max_iterations is None:
        max_iterations = 10 * (m + n) * 1000

    # Row scaling keeps pivot tolerances meaningful across Q and flow rows.
    scale = np.max(np.abs(A), axis=1, initial=0.0) if m else np.zeros(0)
    scale[scale == 0] = 1.0
    A = A / scale[:, None]
    b = b / scale
    rels = list(rels)
    for r in range(m):
        if b[r] < 0:
            A[r] *= -1
            b[r] *= -1
            if rels[r] is Relation.LE:
                rels[r] = Relation.GE
            elif rels[r] is Relation.GE:
                rels[r] = Relation.LE

    n_slack = sum(r is not Relation.EQ for r in rels)
    art_rows = [r for r in range(m) if rels[r] is not Relation.LE]
    n_total = n + n_slack + len(art_rows)
    full = np.zeros((m, n_total))
    full[:, :n] = A
    basis = [0] * m
    k = n
    for r in range(m):
        if rels[r] is Relation.LE:
            full[r, k] = 1.0
            basis[r] = k
            k += 1
        elif rels[r] is Relation.GE:
            full[r, k] = -1.0
            k += 1
    first_art = k
    for r in art_rows:
        full[r, k] = 1.0
        basis[r] = k
        k += 1

    tab = _Tableau(full, b, basis, max_iterations)
    try:
        if art_rows:
            cost = np.zeros(n_total)
            cost[first_art:] = 1.0
            tab.set_costs(cost)
            tab.run(n_total)
            phase1 = -tab.T[-1, -1]
            if phase1 > FEAS_TOL * max(1.0, float(np.max(np.abs(b), initial=0.0))):
                return LpSolution(LpStatus.INFEASIBLE, np.full(lp.num_vars, np.nan), np.nan,
                                  tab.iterations, f"phase 1 objective {phase1:.3g}")
            # Drive artificials out of the basis; drop redundant rows.
            r = 0
            while r < tab.m:
                if tab.basis[r] >= first_art:
                    cand = np.flatnonzero(np.abs(tab.T[r, :first_art]) > PIVOT_TOL)
                    if cand.size:
                        big = cand[np.argmax(np.abs(tab.T[r, cand]))]
                        tab.pivot(r, int(big))
                    else:
                        tab.drop_row(r)
                        continue
                r += 1
            tab.drop_columns(first_art)
        cost = np.zeros(first_art)
        cost[:n] = c
        tab.set_costs(cost)
        bounded = tab.run(first_art)
    except _IterationCap:
        return LpSolution(LpStatus.NUMERICAL_FAILURE, np.full(lp.num_vars, np.nan), np.nan,
                          tab.iterations, f"iteration cap {max_iterations} exceeded")
    if not bounded:
        return LpSolution(LpStatus.UNBOUNDED, np.full(lp.num_vars, np.nan), -np.inf if lp.sense is Sense.MINIMIZE else np.inf,
                          tab.iterations, "objective unbounded")

    y = np.zeros(first_art)
    xb = tab.T[:-1, -1]
    if tab.m:
        # Recompute basic values from the original rows to shed pivoting error.
        try:
            refined = np.linalg.solve(tab.A[:, tab.basis], tab.b)
            if np.all(np.isfinite(refined)):
                xb = refined
        except np.linalg.LinAlgError:
            pass
    y[tab.basis] = xb
    y = np.clip(y, 0.0, None)
    x = back @ y[:n] + shift
    return LpSolution(LpStatus.OPTIMAL, x, float(lp.objective @ x), tab.iterations)


def to_lp_text(lp: LinearProgram) -> str:
    """Render in a CPLEX-LP-like text format for debugging."""
    names = lp.var_names or [f"x{k}" for k in range(lp.num_vars)]

    def expr(coeffs):
        terms = [f"{'-' if v < 0 else '+'} {abs(v):.12g} {names[k]}" for k, v in enumerate(coeffs) if v != 0]
        if not terms:
            return "0"
        s = " ".join(terms)
        return s[2:] if s.startswith("+ ") else s

    lines = [lp.sense.value, f" obj: {expr(lp.objective)}", "subject to"]
    for i, c in enumerate(lp.constraints):
        label = c.name or f"c{i}"
        lines.append(f" {label}: {expr(c.coeffs)} {c.relation.value} {c.rhs:.12g}")
    lines.append("bounds")
    for k in range(lp.num_vars):
        lo, up = lp.lower[k], lp.upper[k]
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:.12g}"
        up_s = "+inf" if not np.isfinite(up) else f"{up:.12g}"
        lines.append(f" {lo_s} <= {names[k]} <= {up_s}")
    lines.append("end")
    return "\n".join(lines) + "\n"

"""Bounded-variable simplex over sparse columns with a dense basis inverse.

The primal algorithm is a two-phase method: phase 1 drives the total bound
violation of the basic variables to zero with piecewise-linear costs, phase 2
optimizes the real objective.  Pricing is Dantzig's rule with a Bland
fallback once a run of degenerate pivots trips the cycle counter.  A dual
simplex is provided for warm restarts after bound changes or appended rows
(cut rounds, branching); it is an accelerator only, every caller can fall
back to a fresh primal solve.

All ties break on the smallest column index so repeated solves are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dger

LE = "<="
GE = ">="
EQ = "="

TOL_FEAS = 1e-9
TOL_COST = 1e-9
TOL_PIVOT = 1e-10
TOL_EXPAND = 0.0       # ratio-test bound expansion; measured harmful, keep off
TOL_BLOCK = 1e-7       # classification margin; must exceed expansion drift
DEGENERATE_RUN = 50
REFACTOR_EVERY = 256

STATUS_OPTIMAL = "optimal"
STATUS_ITERATION_LIMIT = "iteration_limit"


class LpError(Exception):
    pass


class LpInfeasibleError(LpError):
    """The constraint system admits no point within the variable bounds."""


@dataclass
class LpProblem:
    """min obj @ x  s.t.  a x (sense) rhs,  lb <= x <= ub."""
    a: sp.csc_matrix
    sense: list[str]
    rhs: np.ndarray
    obj: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.a = sp.csc_matrix(self.a)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.obj = np.asarray(self.obj, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)


@dataclass
class LpResult:
    status: str
    objective: float
    primal: np.ndarray
    dual: np.ndarray
    basis: list[int] = field(default_factory=list)
    iterations: int = 0


class SimplexSolver:
    """Stateful working form: columns = structural variables then one logical
    per row (LE rows get a nonnegative surplus, EQ rows a fixed-at-zero one)."""

    def __init__(self, problem: LpProblem):
        m, n = problem.a.shape
        self.m = m
        self.n_struct = n
        self.row_flip = np.array([s == GE for s in problem.sense])
        a = problem.a.tocsr(copy=True)
        rhs = problem.rhs.copy()
        if self.row_flip.any():
            flip = np.where(self.row_flip, -1.0, 1.0)
            a = sp.diags(flip) @ a
            rhs = flip * rhs
        senses = [EQ if s == EQ else LE for s in problem.sense]

        logical = sp.identity(m, format="csc")
        self.W = sp.hstack([a.tocsc(), logical], format="csc")
        self.WT = self.W.T.tocsr()
        self.rhs = rhs
        self.lb = np.concatenate([problem.lb, np.zeros(m)])
        ub_log = np.array([0.0 if s == EQ else np.inf for s in senses])
        self.ub = np.concatenate([problem.ub, ub_log])
        self.cost = np.concatenate([problem.obj, np.zeros(m)])
        if np.any(self.lb[:n] == -np.inf):
            raise LpError("structural variables need finite lower bounds")

        k = self.W.shape[1]
        self.basis = np.arange(n, n + m, dtype=np.int64)
        self.in_basis = np.full(k, -1, dtype=np.int64)
        self.in_basis[self.basis] = np.arange(m)
        self.at_ub = np.zeros(k, dtype=bool)
        fixed = np.isfinite(self.ub) & (self.ub - self.lb <= 0)
        self.at_ub[fixed] = False
        self.Binv = np.eye(m)
        self.xB = np.zeros(m)
        self.iterations = 0
        self._since_refactor = 0
        self._devex = np.ones(k)
        self._bland = False
        self._recompute_xB()

    # -- working-state helpers ------------------------------------------------

    def _col(self, j: int) -> np.ndarray:
        out = np.zeros(self.m)
        lo, hi = self.W.indptr[j], self.W.indptr[j + 1]
        out[self.W.indices[lo:hi]] = self.W.data[lo:hi]
        return out

    def _nonbasic_values(self) -> np.ndarray:
        vals = np.where(self.at_ub, self.ub, self.lb)
        vals[self.basis] = 0.0
        return vals

    def _recompute_xB(self) -> None:
        vals = self._nonbasic_values()
        r = self.rhs - self.W @ vals
        self.xB = self.Binv @ r

    def _refactor(self) -> None:
        B = self.W[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpError("singular basis") from exc
        self._since_refactor = 0
        self._recompute_xB()

    def _maybe_refactor(self) -> None:
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()

    def set_bounds(self, j: int, lb: float, ub: float) -> None:
        """Change one variable's bounds; caller refreshes with sync_values()."""
        self.lb[j] = lb
        self.ub[j] = ub
        if self.in_basis[j] < 0:
            if self.at_ub[j] and not np.isfinite(ub):
                self.at_ub[j] = False
            if ub - lb <= 0:
                self.at_ub[j] = False

    def sync_values(self) -> None:
        self._recompute_xB()

    def snapshot(self) -> dict:
        return {
            "basis": self.basis.copy(), "at_ub": self.at_ub.copy(),
            "Binv": self.Binv.copy(), "lb": self.lb.copy(), "ub": self.ub.copy(),
        }

    def restore(self, snap: dict) -> None:
        self.basis = snap["basis"].copy()
        self.at_ub = snap["at_ub"].copy()
        self.Binv = snap["Binv"].copy()
        self.lb = snap["lb"].copy()
        self.ub = snap["ub"].copy()
        self.in_basis = np.full(self.W.shape[1], -1, dtype=np.int64)
        self.in_basis[self.basis] = np.arange(self.m)
        self._since_refactor = 0
        self._recompute_xB()

    def add_rows(self, rows: sp.csr_matrix, rhs: np.ndarray) -> None:
        """Append LE rows over current working columns; logicals enter the basis."""
        rows = sp.csr_matrix(rows)
        p, k_old = rows.shape
        assert k_old == self.W.shape[1]
        # W_new = [[W, 0], [rows, I]]
        top = sp.hstack([self.W, sp.csc_matrix((self.m, p))], format="csc")
        bottom = sp.hstack([rows.tocsc(), sp.identity(p, format="csc")], format="csc")
        self.W = sp.vstack([top, bottom], format="csc")
        self.WT = self.W.T.tocsr()
        self.rhs = np.concatenate([self.rhs, np.asarray(rhs, dtype=float)])
        self.lb = np.concatenate([self.lb, np.zeros(p)])
        self.ub = np.concatenate([self.ub, np.full(p, np.inf)])
        self.cost = np.concatenate([self.cost, np.zeros(p)])
        self.at_ub = np.concatenate([self.at_ub, np.zeros(p, dtype=bool)])
        self._devex = np.concatenate([self._devex, np.ones(p)])

        # extend the basis with the new logicals and patch the inverse:
        # Binv_new = [[Binv, 0], [-R_B Binv, I]] with R_B the new rows on basics
        rb = rows[:, self.basis].toarray() if p else np.zeros((0, self.m))
        top = np.hstack([self.Binv, np.zeros((self.m, p))])
        bot = np.hstack([-rb @ self.Binv, np.eye(p)])
        self.Binv = np.vstack([top, bot])
        k_new = self.W.shape[1]
        new_basis_cols = np.arange(k_new - p, k_new, dtype=np.int64)
        self.basis = np.concatenate([self.basis, new_basis_cols])
        self.in_basis = np.full(k_new, -1, dtype=np.int64)
        self.in_basis[self.basis] = np.arange(self.m + p)
        self.m += p
        self._recompute_xB()

    def install_basis(self, basic_cols: np.ndarray, x_struct: np.ndarray,
                      tol: float = 1e-7) -> bool:
        """Adopt a caller-built basis at a known structural point.

        `basic_cols` must contain exactly m invertible columns; nonbasic
        structural variables sit at whichever bound matches `x_struct`.
        Returns True when the resulting basic point is feasible.
        """
        basic_cols = np.asarray(basic_cols, dtype=np.int64)
        if len(basic_cols) != self.m or len(set(basic_cols.tolist())) != self.m:
            return False
        v = np.asarray(x_struct, dtype=float)
        if np.any(v < self.lb[:self.n_struct] - tol) or            np.any(v > self.ub[:self.n_struct] + tol):
            return False
        old = (self.basis.copy(), self.at_ub.copy())
        self.basis = basic_cols.copy()
        self.in_basis = np.full(self.W.shape[1], -1, dtype=np.int64)
        self.in_basis[self.basis] = np.arange(self.m)
        near_ub = np.isfinite(self.ub[:self.n_struct]) &             (np.abs(v - self.ub[:self.n_struct]) <= np.abs(v - self.lb[:self.n_struct]))
        self.at_ub[:] = False
        self.at_ub[:self.n_struct] = near_ub
        self.at_ub[self.basis] = False
        try:
            self._refactor()
        except LpError:
            self.basis, self.at_ub = old
            self.in_basis = np.full(self.W.shape[1], -1, dtype=np.int64)
            self.in_basis[self.basis] = np.arange(self.m)
            self._refactor()
            return False
        l = self.lb[self.basis]
        u = self.ub[self.basis]
        return bool(np.all(self.xB >= l - tol)
                    and np.all(self.xB <= np.where(np.isfinite(u), u, np.inf) + tol))

    def crash_from(self, x_struct: np.ndarray, tol: float = 1e-7) -> bool:
        """Start from a known structural point with the all-logical basis.

        Returns True when the point is basic-feasible (no phase 1 needed).
        """
        for j in range(self.n_struct):
            if self.in_basis[j] >= 0:
                return False
        v = np.asarray(x_struct, dtype=float)
        if np.any(v < self.lb[:self.n_struct] - tol) or np.any(v > self.ub[:self.n_struct] + tol):
            return False
        near_ub = np.isfinite(self.ub[:self.n_struct]) & \
            (np.abs(v - self.ub[:self.n_struct]) <= np.abs(v - self.lb[:self.n_struct]))
        self.at_ub[:self.n_struct] = near_ub
        self._recompute_xB()
        l = self.lb[self.basis]
        u = self.ub[self.basis]
        ok = np.all(self.xB >= l - tol) and np.all(self.xB <= u + tol)
        if not ok:
            # leave state valid: phase 1 will repair it
            return False
        return True

    # -- measurements ---------------------------------------------------------

    def infeasibility(self) -> float:
        l = self.lb[self.basis]
        u = self.ub[self.basis]
        return float(np.maximum(l - self.xB, 0).sum()
                     + np.maximum(np.where(np.isfinite(u), self.xB - u, 0.0), 0).sum())

    def full_solution(self) -> np.ndarray:
        vals = self._nonbasic_values()
        vals[self.basis] = self.xB
        return vals

    def primal_solution(self) -> np.ndarray:
        return self.full_solution()[:self.n_struct]

    def objective(self) -> float:
        return float(self.cost @ self.full_solution())

    def duals(self) -> np.ndarray:
        y = self.cost[self.basis] @ self.Binv
        out = y.copy()
        flip = np.where(self.row_flip, -1.0, 1.0)
        out[:len(flip)] *= flip
        return out

    # -- primal simplex -------------------------------------------------------

    def _phase1_cost_basis(self) -> np.ndarray:
        l = self.lb[self.basis]
        u = self.ub[self.basis]
        c = np.zeros(self.m)
        c[self.xB < l - TOL_FEAS] = -1.0
        above = np.isfinite(u) & (self.xB > u + TOL_FEAS)
        c[above] = 1.0
        return c

    def _reduced_costs(self, cB: np.ndarray, cost_all: np.ndarray) -> np.ndarray:
        y = cB @ self.Binv
        return cost_all - self.WT @ y

    def _price(self, d: np.ndarray, bland: bool) -> int:
        nonbasic = self.in_basis < 0
        free = (self.ub - self.lb) > TOL_FEAS
        lo_elig = nonbasic & free & ~self.at_ub & (d < -TOL_COST)
        hi_elig = nonbasic & free & self.at_ub & (d > TOL_COST)
        elig = lo_elig | hi_elig
        if not elig.any():
            return -1
        idx = np.nonzero(elig)[0]
        if bland:
            return int(idx[0])
        # Devex pricing: reference weights curb the degenerate crawling that
        # plain largest-violation pricing suffers on these flow polytopes
        score = d[idx] ** 2 / self._devex[idx]
        return int(idx[np.argmax(score)])

    def _ratio_primal(self, j: int, alpha: np.ndarray, phase1: bool):
        """Returns (t, leaving basis position or -1 for a bound flip, target_is_ub)."""
        sigma = -1.0 if self.at_ub[j] else 1.0
        delta = -sigma * alpha
        l = self.lb[self.basis]
        u = self.ub[self.basis]
        ufin = np.isfinite(u)
        below = self.xB < l - TOL_BLOCK
        above = ufin & (self.xB > u + TOL_BLOCK)
        inside = ~below & ~above
        pos = delta > TOL_PIVOT
        neg = delta < -TOL_PIVOT

        t = np.full(self.m, np.inf)
        tgt_ub = np.zeros(self.m, dtype=bool)
        exp = 0.0 if self._bland else TOL_EXPAND
        if phase1:
            mask = below & pos
            t[mask] = (l[mask] - self.xB[mask]) / delta[mask]
            mask = above & neg
            t[mask] = (u[mask] - self.xB[mask]) / delta[mask]
            tgt_ub[mask] = True
        mask = inside & pos & ufin
        t[mask] = (u[mask] + exp - self.xB[mask]) / delta[mask]
        tgt_ub[mask] = True
        mask = inside & neg
        t[mask] = (l[mask] - exp - self.xB[mask]) / delta[mask]
        np.maximum(t, 0.0, out=t)

        t_flip = self.ub[j] - self.lb[j]
        t_min = min(float(t.min()), t_flip) if self.m else t_flip
        if not np.isfinite(t_min):
            return np.inf, -1, False
        cand = np.nonzero(t <= t_min + 1e-12)[0]
        if len(cand) == 0 or t_flip < t.min() - 1e-12:
            return t_flip, -1, False
        if self._bland:
            # strict Bland: smallest variable index among the blockers
            r = int(cand[np.argmin(self.basis[cand])])
        else:
            # stability first (largest pivot), then smallest column id
            mags = np.abs(delta[cand])
            best = cand[mags >= mags.max() * 0.5]
            r = int(best[np.argmin(self.basis[best])])
        bound_r = (u[r] if tgt_ub[r] else l[r])
        t_true = (bound_r - self.xB[r]) / delta[r]
        return float(max(t_true, 0.0)), r, bool(tgt_ub[r])

    def _pivot(self, j: int, r: int, t: float, leave_to_ub: bool,
               alpha: np.ndarray) -> tuple[np.ndarray, float]:
        piv = alpha[r]
        # Devex reference-weight update from the outgoing tableau row
        arow = self.WT @ self.Binv[r]
        wq = max(self._devex[j], 1.0)
        cand = np.maximum(1.0, (arow / piv) ** 2 * wq)
        np.maximum(self._devex, cand, out=self._devex)
        if self._devex.max() > 1e7:
            self._devex[:] = 1.0

        sigma = -1.0 if self.at_ub[j] else 1.0
        enter_val = (self.ub[j] if self.at_ub[j] else self.lb[j]) + sigma * t
        self.xB = self.xB - sigma * t * alpha
        leaving = self.basis[r]
        self.in_basis[leaving] = -1
        self.at_ub[leaving] = leave_to_ub
        self.basis[r] = j
        self.in_basis[j] = r
        self.xB[r] = enter_val
        self._devex[leaving] = max(wq / max(piv * piv, 1e-12), 1.0)
        # eta update of the inverse, in place (dger on the transposed view)
        row = self.Binv[r] / piv
        dger(-1.0, row, alpha, a=self.Binv.T, overwrite_a=1)
        self.Binv[r] = row
        self._maybe_refactor()
        return arow, piv

    def _flip(self, j: int, t: float, alpha: np.ndarray) -> None:
        sigma = -1.0 if self.at_ub[j] else 1.0
        self.xB = self.xB - sigma * t * alpha
        self.at_ub[j] = not self.at_ub[j]

    def _primal_loop(self, phase1: bool, iter_limit: int) -> str:
        degenerate_run = 0
        self._bland = False
        self._devex[:] = 1.0
        zeros = np.zeros(self.W.shape[1])
        d = None                      # phase-2 reduced costs, updated in place
        refactor_mark = self._since_refactor
        while True:
            if phase1 and self.infeasibility() <= 2 * TOL_EXPAND * max(1, self.m):
                return STATUS_OPTIMAL
            if self.iterations >= iter_limit:
                return STATUS_ITERATION_LIMIT
            if phase1:
                d = self._reduced_costs(self._phase1_cost_basis(), zeros)
            elif d is None or self._since_refactor < refactor_mark:
                d = self._reduced_costs(self.cost[self.basis], self.cost)
            refactor_mark = self._since_refactor
            j = self._price(d, self._bland)
            if j < 0:
                if phase1 and self.infeasibility() > 1e-7 * max(1, self.m):
                    raise LpInfeasibleError("phase 1 ended with positive infeasibility")
                return STATUS_OPTIMAL
            alpha = self.Binv @ self._col(j)
            t, r, to_ub = self._ratio_primal(j, alpha, phase1)
            if not np.isfinite(t):
                if phase1:
                    raise LpError("phase 1 direction unbounded")
                raise LpError("LP unbounded; slack-completed models should be bounded")
            self.iterations += 1
            if r < 0:
                self._flip(j, t, alpha)
            else:
                if abs(alpha[r]) < TOL_PIVOT:
                    self._refactor()
                    d = None
                    continue
                dq = float(d[j])
                arow, piv = self._pivot(j, r, t, to_ub, alpha)
                if not phase1 and self._since_refactor != 0:
                    d -= (dq / piv) * arow
                elif not phase1:
                    d = None          # refactor happened inside the pivot
            if t <= 1e-9:
                degenerate_run += 1
                if degenerate_run >= DEGENERATE_RUN:
                    self._bland = True
            else:
                degenerate_run = 0
                self._bland = False

    def solve_primal(self, iter_limit: int = 100_000,
                     crash: np.ndarray | None = None,
                     basis: np.ndarray | None = None) -> str:
        """Two-phase primal; `crash`/`basis` give a feasible starting point."""
        feasible_start = False
        if basis is not None and crash is not None:
            feasible_start = self.install_basis(basis, crash)
        if not feasible_start and crash is not None:
            feasible_start = self.crash_from(crash)
        if not feasible_start and self.infeasibility() > TOL_FEAS * max(1, self.m):
            status = self._primal_loop(phase1=True, iter_limit=iter_limit)
            if status != STATUS_OPTIMAL:
                return status
        status = self._primal_loop(phase1=False, iter_limit=iter_limit)
        if status == STATUS_OPTIMAL:
            self._refactor()
            if self.infeasibility() > TOL_FEAS * max(1, self.m):
                # expansion drift: the basis is dual feasible, so a short
                # dual cleanup restores the exact optimum
                status = self.solve_dual(
                    iter_limit=max(iter_limit, self.iterations + 20_000))
                self._refactor()
        return status

    # -- dual simplex ---------------------------------------------------------

    def solve_dual(self, iter_limit: int = 100_000) -> str:
        """Requires a dual-feasible basis (e.g. any previously optimal one)."""
        degenerate_run = 0
        bland = False
        while True:
            if self.iterations >= iter_limit:
                return STATUS_ITERATION_LIMIT
            l = self.lb[self.basis]
            u = self.ub[self.basis]
            ufin = np.isfinite(u)
            below = l - self.xB
            above = np.where(ufin, self.xB - u, -np.inf)
            viol = np.maximum(below, above)
            r = -1
            if viol.max(initial=-np.inf) > TOL_FEAS:
                if bland:
                    cand = np.nonzero(viol > TOL_FEAS)[0]
                    r = int(cand[np.argmin(self.basis[cand])])
                else:
                    r = int(np.argmax(viol))
            if r < 0:
                return STATUS_OPTIMAL
            leaving_low = below[r] >= above[r]     # variable sits below its lb

            rho = self.Binv[r]
            arow = self.WT @ rho
            y = self.cost[self.basis] @ self.Binv
            d = self.cost - self.WT @ y

            nonbasic = self.in_basis < 0
            free = (self.ub - self.lb) > TOL_FEAS
            at_lo = nonbasic & free & ~self.at_ub
            at_hi = nonbasic & free & self.at_ub
            if leaving_low:
                elig = (at_lo & (arow < -TOL_PIVOT)) | (at_hi & (arow > TOL_PIVOT))
            else:
                elig = (at_lo & (arow > TOL_PIVOT)) | (at_hi & (arow < -TOL_PIVOT))
            if not elig.any():
                raise LpInfeasibleError("dual simplex: no entering column")
            idx = np.nonzero(elig)[0]
            ratios = np.abs(d[idx] / arow[idx])
            if bland:
                e = int(idx[0])
            else:
                rmin = ratios.min()
                cand = idx[ratios <= rmin + 1e-12]
                mags = np.abs(arow[cand])
                best = cand[mags >= mags.max() * 0.5]
                e = int(best[0])

            alpha = self.Binv @ self._col(e)
            if abs(alpha[r]) < TOL_PIVOT:
                self._refactor()
                continue
            target = self.lb[self.basis[r]] if leaving_low else self.ub[self.basis[r]]
            t_primal = (self.xB[r] - target) / alpha[r]
            enter_from = self.ub[e] if self.at_ub[e] else self.lb[e]
            self.iterations += 1
            leaving = self.basis[r]
            self.in_basis[leaving] = -1
            self.at_ub[leaving] = not leaving_low
            self.basis[r] = e
            self.in_basis[e] = r
            self.xB = self.xB - t_primal * alpha
            self.xB[r] = enter_from + t_primal
            piv = alpha[r]
            row = self.Binv[r] / piv
            dger(-1.0, row, alpha, a=self.Binv.T, overwrite_a=1)
            self.Binv[r] = row
            self._maybe_refactor()
            if abs(t_primal) <= 1e-11:
                degenerate_run += 1
                if degenerate_run >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

    # -- tableau access for cut generation -------------------------------------

    def tableau_row(self, r: int) -> tuple[np.ndarray, float]:
        """Row r of the simplex tableau over all working columns, plus x_B[r]."""
        rho = self.Binv[r]
        return self.WT @ rho, float(self.xB[r])


def solve_lp(problem: LpProblem, iter_limit: int = 100_000,
             crash: np.ndarray | None = None) -> LpResult:
    """Two-phase primal solve of an explicit LP."""
    solver = SimplexSolver(problem)
    status = solver.solve_primal(iter_limit=iter_limit, crash=crash)
    return LpResult(
        status=status,
        objective=solver.objective(),
        primal=solver.primal_solution(),
        dual=solver.duals()[:problem.a.shape[0]],
        basis=[int(b) for b in solver.basis],
        iterations=solver.iterations,
    )

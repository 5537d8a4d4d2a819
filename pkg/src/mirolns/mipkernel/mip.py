"""Subproblem solving: LP relaxations, root cutting planes, branch and bound.

A subproblem frees the arc variables of one or two vessels (plus every slack)
and fixes all other vessels to their incumbent paths.  Assembly folds the
frozen contributions into the right-hand sides, drops joint rows no free
action can violate (berth rows use the fact that a unit of path flow passes
each node at most once), and turns rows without free columns into a constant
objective offset.

Branch and bound re-solves each node from the root basis with the dual
simplex after bound propagation over the flow structure; when the dual pass
fails for numerical reasons the node falls back to a fresh primal solve, so
results never depend on the warm path.  Everything is deterministic: no
randomness, ties by index, and time limits checked only when enabled.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass
from heapq import heappop, heappush

import numpy as np
import scipy.sparse as sp

from .. import tsn as tsnmod
from ..model import BERTH_KINDS, FeasModel, Schedule, make_schedule
from .cuts import separate
from .lp import (EQ, LE, LpError, LpInfeasibleError, LpProblem, SimplexSolver,
                 STATUS_ITERATION_LIMIT, STATUS_OPTIMAL)

INT_TOL = 1e-6
BOUND_TOL = 1e-9
DEFAULT_CUT_ROUNDS = 5
CUT_STALL_REL = 1e-5
LP_ITER_LIMIT = 200_000

STATUS_NODE_LIMIT = "node_limit"
STATUS_TIME_LIMIT = "time_limit"


class KernelError(Exception):
    pass


@dataclass(frozen=True)
class Subproblem:
    """One- or two-vessel neighborhood around a base schedule."""
    model: FeasModel
    free: tuple[int, ...]          # vessel ids with free variables
    base: Schedule                 # paths for every vessel; non-free ones are fixed

    def __post_init__(self):
        if len(self.free) not in (1, 2) or len(set(self.free)) != len(self.free):
            raise ValueError(f"free vessel set must be 1 or 2 distinct ids, got {self.free}")
        vmap = self.model.instance.vessel_index()
        for v in self.free:
            if v not in vmap:
                raise ValueError(f"unknown vessel id {v}")

    @property
    def free_positions(self) -> list[int]:
        vmap = self.model.instance.vessel_index()
        return sorted(vmap[v] for v in self.free)


@dataclass
class MipResult:
    status: str
    objective: float
    paths: tuple[tuple[int, ...], ...]
    dual_bound: float
    nodes_explored: int
    root_bound: float
    lp_bound: float
    cuts_added: int


# ---------------------------------------------------------------------------
# LP assembly
# ---------------------------------------------------------------------------

class _SubLp:
    """Assembled LP plus the bookkeeping to move between spaces."""

    def __init__(self, model: FeasModel, free_pos: list[int], base_paths):
        self.model = model
        self.free_pos = list(free_pos)
        self.base_paths = tuple(tuple(p) for p in base_paths)
        nets = [model.tsns[vp] for vp in self.free_pos]
        self.nets = nets
        sizes = [net.n_arcs for net in nets]
        self.x_off = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_x = int(self.x_off[-1])

        # frozen activity folded into the joint rhs
        x_all = model.path_to_x(self.base_paths)
        for vp in self.free_pos:
            lo, hi = model.vessel_columns(vp)
            x_all[lo:hi] = 0.0
        const = model.jmat @ x_all

        free_blocks = [model.jmat_csc[:, slice(*model.vessel_columns(vp))]
                       for vp in self.free_pos]
        jfree = sp.hstack(free_blocks, format="csr") if free_blocks else \
            sp.csr_matrix((model.n_rows, 0))

        # per-row largest achievable free activity
        maxact = np.zeros(model.n_rows)
        pos_sum = np.asarray(jfree.maximum(0).sum(axis=1)).ravel()
        berth = np.array([k in BERTH_KINDS for k in model.kinds])
        maxact[~berth] = pos_sum[~berth]
        if berth.any():
            per_vessel = np.zeros(model.n_rows)
            for b, vp in enumerate(self.free_pos):
                blk = jfree[:, self.x_off[b]:self.x_off[b + 1]]
                per_vessel += (np.diff(blk.indptr) > 0).astype(float)
            maxact[berth] = per_vessel[berth]

        slack_need = (const + maxact - model.rhs) / model.rho
        nnz_rows = np.diff(jfree.indptr) > 0
        keep = (slack_need > BOUND_TOL) & nnz_rows
        folded = (slack_need > BOUND_TOL) & ~nnz_rows
        self.offset = float(np.maximum(0.0, (const - model.rhs) / model.rho)[folded].sum())
        self.keep_rows = np.nonzero(keep)[0]
        self.jkeep = jfree[self.keep_rows]
        self.const = const[self.keep_rows]
        self.rhs_keep = model.rhs[self.keep_rows]
        self.rho_keep = model.rho[self.keep_rows]
        self.slack_ub = np.maximum(slack_need[self.keep_rows], 0.0)
        n_s = len(self.keep_rows)
        self.n_s = n_s

        # flow rows: node-arc incidence per free vessel
        inc_blocks = []
        flow_rhs = []
        for net in nets:
            rows = np.concatenate([net.arc_from, net.arc_to])
            cols = np.concatenate([np.arange(net.n_arcs)] * 2)
            vals = np.concatenate([np.ones(net.n_arcs), -np.ones(net.n_arcs)])
            inc_blocks.append(sp.coo_matrix((vals, (rows, cols)),
                                            shape=(net.n_nodes, net.n_arcs)))
            b = np.zeros(net.n_nodes)
            b[net.source] = 1.0
            b[net.sink] = -1.0
            flow_rhs.append(b)
        inc = sp.block_diag(inc_blocks, format="csc") if inc_blocks else \
            sp.csc_matrix((0, 0))
        n_flow = inc.shape[0]

        joint_block = sp.hstack(
            [self.jkeep, -sp.diags(self.rho_keep, format="csc")], format="csc"
        ) if n_s else sp.csr_matrix((0, self.n_x + 0)).tocsc()
        flow_block = sp.hstack(
            [inc, sp.csc_matrix((n_flow, n_s))], format="csc")
        a = sp.vstack([flow_block, joint_block], format="csc")

        self.lp = LpProblem(
            a=a,
            sense=[EQ] * n_flow + [LE] * n_s,
            rhs=np.concatenate([np.concatenate(flow_rhs) if flow_rhs else np.zeros(0),
                                self.rhs_keep - self.const]),
            obj=np.concatenate([np.zeros(self.n_x), np.ones(n_s)]),
            lb=np.zeros(self.n_x + n_s),
            ub=np.concatenate([np.ones(self.n_x), self.slack_ub]),
        )
        self.n_flow = n_flow

    # -- space conversions --

    def free_x(self, paths_all) -> np.ndarray:
        x = np.zeros(self.n_x)
        for b, vp in enumerate(self.free_pos):
            off = self.x_off[b]
            for a in paths_all[vp]:
                x[off + int(a)] = 1.0
        return x

    def crash_point(self, paths_all) -> np.ndarray:
        x = self.free_x(paths_all)
        act = self.const + self.jkeep @ x
        s = np.maximum(0.0, (act - self.rhs_keep) / self.rho_keep)
        return np.concatenate([x, np.minimum(s, self.slack_ub)])

    def crash_basis(self, paths_all) -> tuple[np.ndarray, np.ndarray]:
        """Warm-vertex start: per-vessel spanning-tree columns plus one flow
        logical each (the flow blocks have one redundant row), and per joint
        row its slack when positive, else the row logical."""
        from collections import deque

        x0 = self.crash_point(paths_all)
        n_struct = self.n_x + self.n_s
        basic: list[int] = []
        row_off = 0
        for b, net in enumerate(self.nets):
            seen = np.zeros(net.n_nodes, dtype=bool)
            seen[net.source] = True
            queue = deque([net.source])
            while queue:
                nd = queue.popleft()
                for a in net.arcs_leaving(nd):
                    to = int(net.arc_to[a])
                    if not seen[to]:
                        seen[to] = True
                        basic.append(int(self.x_off[b]) + int(a))
                        queue.append(to)
                for a in net.arcs_entering(nd):
                    fr = int(net.arc_from[a])
                    if not seen[fr]:
                        seen[fr] = True
                        basic.append(int(self.x_off[b]) + int(a))
                        queue.append(fr)
            basic.append(n_struct + row_off + net.source)   # source-row logical
            row_off += net.n_nodes
        slacks = x0[self.n_x:]
        for k in range(self.n_s):
            if slacks[k] > 1e-9:
                basic.append(self.n_x + k)
            else:
                basic.append(n_struct + self.n_flow + k)
        return np.asarray(sorted(basic), dtype=np.int64), x0

    def eval_free_paths(self, free_paths) -> float:
        """Total scaled slack of the merged schedule, kept rows + offset."""
        x = np.zeros(self.n_x)
        for b, path in enumerate(free_paths):
            off = self.x_off[b]
            for a in path:
                x[off + int(a)] = 1.0
        act = self.const + self.jkeep @ x
        return float(np.maximum(0.0, (act - self.rhs_keep) / self.rho_keep).sum()
                     + self.offset)

    def decode(self, x: np.ndarray) -> list[tuple[int, ...]]:
        """Per-free-vessel paths from an integral assignment over x columns."""
        paths = []
        for b, net in enumerate(self.nets):
            off = self.x_off[b]
            vals = x[off:off + net.n_arcs]
            if np.any(np.abs(vals - np.round(vals)) > INT_TOL):
                raise KernelError(f"vessel {net.vessel}: fractional assignment")
            chosen = set(np.nonzero(np.round(vals) > 0.5)[0].tolist())
            path = []
            node = net.source
            while node != net.sink:
                step = [int(a) for a in net.arcs_leaving(node) if int(a) in chosen]
                if len(step) != 1:
                    raise KernelError(
                        f"vessel {net.vessel}: assignment is not a path at node {node}")
                path.append(step[0])
                chosen.discard(step[0])
                node = int(net.arc_to[step[0]])
            if chosen:
                raise KernelError(f"vessel {net.vessel}: arcs off the selected path")
            paths.append(tuple(path))
        return paths

    def greedy_paths(self, x: np.ndarray) -> list[tuple[int, ...]]:
        """Follow the largest-fraction outgoing arc per node, ties canonical."""
        paths = []
        for b, net in enumerate(self.nets):
            off = self.x_off[b]
            path = []
            node = net.source
            while node != net.sink:
                arcs = net.arcs_leaving(node)
                vals = x[off + arcs]
                a = int(arcs[int(np.argmax(vals))])
                path.append(a)
                node = int(net.arc_to[a])
            paths.append(tuple(path))
        return paths

    def merge(self, free_paths) -> tuple[tuple[int, ...], ...]:
        merged = [tuple(p) for p in self.base_paths]
        for b, vp in enumerate(self.free_pos):
            merged[vp] = tuple(int(a) for a in free_paths[b])
        return tuple(merged)


def _propagate(state: _SubLp, lb: np.ndarray, ub: np.ndarray) -> bool:
    """Flow-row interval propagation; tightens lb/ub in place.

    Returns False when some node equation became unsatisfiable.
    """
    for b, net in enumerate(state.nets):
        off = state.x_off[b]
        pending = set(range(net.n_nodes))
        while pending:
            node = pending.pop()
            out = off + net.arcs_leaving(node)
            inn = off + net.arcs_entering(node)
            bval = 1.0 if node == net.source else (-1.0 if node == net.sink else 0.0)
            actmin = lb[out].sum() - ub[inn].sum()
            actmax = ub[out].sum() - lb[inn].sum()
            if actmin > bval + 1e-9 or actmax < bval - 1e-9:
                return False
            changed: list[int] = []
            if abs(actmin - bval) <= 1e-9:
                for a in out:
                    if ub[a] > lb[a]:
                        ub[a] = lb[a]
                        changed.append(a)
                for a in inn:
                    if lb[a] < ub[a]:
                        lb[a] = ub[a]
                        changed.append(a)
            elif abs(actmax - bval) <= 1e-9:
                for a in out:
                    if lb[a] < ub[a]:
                        lb[a] = ub[a]
                        changed.append(a)
                for a in inn:
                    if ub[a] > lb[a]:
                        ub[a] = lb[a]
                        changed.append(a)
            for a in changed:
                arc = int(a - off)
                pending.add(int(net.arc_from[arc]))
                pending.add(int(net.arc_to[arc]))
    return True


# ---------------------------------------------------------------------------
# root solve and cut loop
# ---------------------------------------------------------------------------

def _rebuild(state: _SubLp, cut_batches, crash=None) -> SimplexSolver:
    solver = SimplexSolver(state.lp)
    for rows, rhs in cut_batches:
        solver.add_rows(rows, rhs)
    status = solver.solve_primal(iter_limit=LP_ITER_LIMIT, crash=crash)
    if status != STATUS_OPTIMAL:
        raise KernelError("LP iteration limit in rebuild")
    return solver


def _root_solve(state: _SubLp, max_cut_rounds: int, start_paths=None):
    """Returns (solver, lp_bound, root_bound, cut_batches)."""
    solver = SimplexSolver(state.lp)
    crash = basis = None
    if start_paths is not None:
        basis, crash = state.crash_basis(start_paths)
    status = solver.solve_primal(iter_limit=LP_ITER_LIMIT, crash=crash, basis=basis)
    if status != STATUS_OPTIMAL:
        raise KernelError("LP iteration limit at root")
    lp_bound = solver.objective() + state.offset
    bound = lp_bound
    cut_batches: list[tuple[sp.csr_matrix, np.ndarray]] = []
    for _ in range(max(0, max_cut_rounds)):
        batch = separate(solver, state.n_x)
        if batch is None:
            break
        solver.add_rows(batch[0], batch[1])
        cut_batches.append(batch)
        try:
            status = solver.solve_dual(iter_limit=LP_ITER_LIMIT)
            if status != STATUS_OPTIMAL:
                raise LpError("dual iteration limit")
        except LpInfeasibleError:
            # numerically bad batch: drop it and stop cutting
            cut_batches.pop()
            solver = _rebuild(state, cut_batches, crash=crash)
            break
        except LpError:
            solver = _rebuild(state, cut_batches, crash=crash)
        if solver.infeasibility() > 1e-6 * max(1, solver.m):
            solver = _rebuild(state, cut_batches, crash=crash)
        new_bound = solver.objective() + state.offset
        if new_bound <= bound + CUT_STALL_REL * max(1.0, abs(bound)):
            bound = max(bound, new_bound)
            break
        bound = new_bound
    return solver, lp_bound, max(bound, lp_bound), cut_batches


def _state_of(sub: Subproblem) -> _SubLp:
    return _SubLp(sub.model, sub.free_positions, sub.base.paths)


def solve_lp_bound(sub: Subproblem) -> float:
    """Plain LP relaxation value of the subproblem."""
    state = _state_of(sub)
    solver = SimplexSolver(state.lp)
    basis, crash = state.crash_basis(state.base_paths)
    status = solver.solve_primal(iter_limit=LP_ITER_LIMIT, crash=crash, basis=basis)
    if status != STATUS_OPTIMAL:
        raise KernelError("LP iteration limit")
    return solver.objective() + state.offset


def root_bound(sub: Subproblem, max_cut_rounds: int = DEFAULT_CUT_ROUNDS) -> float:
    """Dual bound after presolve and root cutting planes, no branching."""
    state = _state_of(sub)
    _, _, bound, _ = _root_solve(state, max_cut_rounds,
                                 start_paths=state.base_paths)
    return bound


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------

def solve_mip(sub: Subproblem, node_limit: int = 1000,
              time_limit: float | None = None,
              warm: Schedule | None = None,
              max_cut_rounds: int = DEFAULT_CUT_ROUNDS) -> MipResult:
    """Best-bound branch and bound over the free vessels' arc variables."""
    return _branch_and_bound(_state_of(sub), node_limit, time_limit, warm,
                             max_cut_rounds)


def solve_full(model: FeasModel, node_limit: int = 50_000,
               time_limit: float | None = None,
               warm: Schedule | None = None,
               max_cut_rounds: int = DEFAULT_CUT_ROUNDS) -> MipResult:
    """Solve the whole model (every vessel free), e.g. for refinement."""
    if warm is not None:
        base = warm.paths
    else:
        base = tuple(
            tuple(tsnmod.waiting_only_path(net) or tsnmod.fewest_sailing_path(net))
            for net in model.tsns
        )
    state = _SubLp(model, list(range(len(model.tsns))), base)
    return _branch_and_bound(state, node_limit, time_limit, warm, max_cut_rounds)


def _branch_and_bound(state: _SubLp, node_limit: int,
                      time_limit: float | None,
                      warm: Schedule | None,
                      max_cut_rounds: int) -> MipResult:
    t0 = _time.monotonic()

    incumbent_paths: tuple[tuple[int, ...], ...] | None = None
    incumbent_obj = np.inf
    if warm is not None:
        wfree = [tuple(warm.paths[vp]) for vp in state.free_pos]
        incumbent_paths = state.merge(wfree)
        incumbent_obj = state.eval_free_paths(wfree)

    start_paths = warm.paths if warm is not None else state.base_paths
    solver, lp_bound, rb, _ = _root_solve(state, max_cut_rounds,
                                          start_paths=start_paths)
    nodes = 1

    def try_heuristic(xs: np.ndarray) -> None:
        nonlocal incumbent_paths, incumbent_obj
        paths = state.greedy_paths(xs)
        val = state.eval_free_paths(paths)
        if val < incumbent_obj - BOUND_TOL:
            incumbent_obj = val
            incumbent_paths = state.merge(paths)

    def integral(xs: np.ndarray) -> bool:
        xx = xs[:state.n_x]
        return bool(np.all(np.abs(xx - np.round(xx)) <= INT_TOL))

    n_cuts_root = solver.m - state.lp.a.shape[0]
    xs = solver.primal_solution()
    if integral(xs):
        paths = state.decode(np.round(xs[:state.n_x]))
        val = state.eval_free_paths(paths)
        if val < incumbent_obj - BOUND_TOL or incumbent_paths is None:
            incumbent_obj = val
            incumbent_paths = state.merge(paths)
        return MipResult(STATUS_OPTIMAL, float(incumbent_obj), incumbent_paths,
                         dual_bound=float(min(incumbent_obj, max(rb, 0.0))),
                         nodes_explored=nodes, root_bound=float(rb),
                         lp_bound=float(lp_bound), cuts_added=n_cuts_root)
    try_heuristic(xs)   # guarantees an incumbent even without a warm start

    base_lb = state.lp.lb.copy()
    base_ub = state.lp.ub.copy()
    snapshot = solver.snapshot()

    counter = 0
    heap: list[tuple[float, int, int, tuple[tuple[int, int], ...]]] = []

    def push(bound: float, depth: int, fixings: tuple[tuple[int, int], ...]) -> None:
        nonlocal counter
        heappush(heap, (bound, -depth, counter, fixings))
        counter += 1

    def branch(xs: np.ndarray, bound: float, depth: int,
               fixings: tuple[tuple[int, int], ...]) -> None:
        xx = xs[:state.n_x]
        frac = np.abs(xx - np.round(xx))
        j = int(np.argmax(frac))        # most fractional, ties at smallest index
        if frac[j] <= INT_TOL:
            return
        push(bound, depth + 1, fixings + ((j, 0),))
        push(bound, depth + 1, fixings + ((j, 1),))

    branch(xs, max(rb, lp_bound), 0, ())
    status = STATUS_OPTIMAL

    while heap:
        if incumbent_obj <= BOUND_TOL:
            break   # slack objectives cannot go below zero
        best_open = heap[0][0]
        if best_open >= incumbent_obj - BOUND_TOL:
            break
        if nodes >= node_limit:
            status = STATUS_NODE_LIMIT
            break
        if time_limit is not None and _time.monotonic() - t0 > time_limit:
            status = STATUS_TIME_LIMIT
            break
        _, ndepth, _, fixings = heappop(heap)
        depth = -ndepth

        lb = base_lb.copy()
        ub = base_ub.copy()
        for col, val in fixings:
            lb[col] = float(val)
            ub[col] = float(val)
        if not _propagate(state, lb, ub):
            nodes += 1
            continue

        solver.restore(snapshot)
        changed = np.nonzero((lb != base_lb) | (ub != base_ub))[0]
        for col in changed:
            solver.set_bounds(int(col), float(lb[col]), float(ub[col]))
        solver.sync_values()
        nodes += 1
        node_solver = solver
        try:
            st = solver.solve_dual(iter_limit=LP_ITER_LIMIT)
            if st != STATUS_OPTIMAL:
                raise LpError("dual iteration limit at node")
        except LpInfeasibleError:
            continue
        except LpError:
            # fresh primal without the cut rows: weaker but valid relaxation
            lp_node = LpProblem(state.lp.a, list(state.lp.sense), state.lp.rhs,
                                state.lp.obj, lb, ub)
            fallback = SimplexSolver(lp_node)
            try:
                if fallback.solve_primal(iter_limit=LP_ITER_LIMIT) != STATUS_OPTIMAL:
                    raise KernelError("node LP iteration limit")
            except LpInfeasibleError:
                continue
            node_solver = fallback

        bound = node_solver.objective() + state.offset
        if bound >= incumbent_obj - BOUND_TOL:
            continue
        xs = node_solver.primal_solution()
        if integral(xs):
            paths = state.decode(np.round(xs[:state.n_x]))
            val = state.eval_free_paths(paths)
            if val < incumbent_obj - BOUND_TOL:
                incumbent_obj = val
                incumbent_paths = state.merge(paths)
            continue
        try_heuristic(xs)
        branch(xs, bound, depth, fixings)

    open_bounds = [h[0] for h in heap]
    dual_bound = min(open_bounds) if (status != STATUS_OPTIMAL and open_bounds) \
        else incumbent_obj
    dual_bound = min(dual_bound, incumbent_obj)
    dual_bound = max(dual_bound, 0.0)

    return MipResult(
        status=status, objective=float(incumbent_obj), paths=incumbent_paths,
        dual_bound=float(dual_bound), nodes_explored=nodes,
        root_bound=float(rb), lp_bound=float(lp_bound), cuts_added=int(n_cuts_root),
    )


# ---------------------------------------------------------------------------
# schedule conversion and export
# ---------------------------------------------------------------------------

def encode_assignment(sub: Subproblem, schedule: Schedule) -> np.ndarray:
    """Free-column 0/1 vector for a schedule (warm-start encoding)."""
    return _state_of(sub).free_x(schedule.paths)


def extract_schedule(sub: Subproblem, assignment: np.ndarray) -> Schedule:
    """Decode an integral free-column assignment into a full schedule."""
    state = _state_of(sub)
    free_paths = state.decode(np.asarray(assignment, dtype=float))
    return make_schedule(sub.model, state.merge(free_paths))


def result_schedule(sub: Subproblem, result: MipResult) -> Schedule:
    return make_schedule(sub.model, result.paths)


def export_lp_text(sub: Subproblem, fh) -> None:
    """Write the subproblem in LP text format for external cross-checks."""
    state = _state_of(sub)
    lp = state.lp
    a = lp.a.tocsr()
    names = [f"x{j}" for j in range(state.n_x)] + [f"s{j}" for j in range(state.n_s)]
    fh.write("Minimize\n obj:")
    terms = [f" + {lp.obj[j]:g} {names[j]}" for j in range(len(names)) if lp.obj[j]]
    fh.write("".join(terms) or " 0 x0")
    if state.offset:
        fh.write(f" + {state.offset:g}")
    fh.write("\nSubject To\n")
    for i in range(a.shape[0]):
        lo, hi = a.indptr[i], a.indptr[i + 1]
        row = "".join(
            f" {'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}"
            for j, v in zip(a.indices[lo:hi], a.data[lo:hi])
        )
        op = "=" if lp.sense[i] == EQ else "<="
        fh.write(f" c{i}:{row} {op} {lp.rhs[i]:.12g}\n")
    fh.write("Bounds\n")
    for j, name in enumerate(names):
        fh.write(f" {lp.lb[j]:.12g} <= {name} <= {lp.ub[j]:.12g}\n")
    fh.write("Binaries\n")
    fh.write(" " + " ".join(names[:state.n_x]) + "\nEnd\n")

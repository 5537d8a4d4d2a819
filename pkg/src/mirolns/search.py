"""Two-vessel large neighborhood search with pluggable pair selection.

The search keeps one incumbent schedule and repeatedly frees the variables of
a selected vessel pair (all slacks stay free), solves that restriction with
the MIP kernel warm-started from the incumbent, and accepts strictly
improving candidates.  A pair becomes tabu once tried; the tabu set clears on
every improvement, so the search stops after at most one full sweep of pairs
without progress.

Selection policies: `random` shuffles pairs, `lp`/`root`/`exact` rank them by
their relaxation/root/primal bounds (lower bound first: more slack to
recover), and `gnn` ranks by a trained scoring network without solving
anything.  Hybrid instances get a second phase that reinstates the inventory
rows and re-solves the full model warm-started from the phase-1 schedule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import model as modmod
from . import tsn as tsnmod
from .instance import Instance, instance_hash
from .mipkernel import (MipResult, Subproblem, root_bound, solve_full,
                        solve_lp_bound, solve_mip)

ACCEPT_TOL = 1e-9

POLICY_VARIANTS = ("random", "lp", "root", "exact", "gnn")


@dataclass
class Policy:
    variant: str
    params: object | None = None    # trained scorer for the gnn variant

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if self.variant == "gnn" and self.params is None:
            raise ValueError("gnn policy needs trained parameters")


@dataclass
class SearchLimits:
    max_iterations: int = 50
    node_limit: int = 1000
    time_limit: float | None = 1000.0    # None disables wall-clock limits
    cut_rounds: int = 5
    refine_node_limit: int = 50_000


@dataclass
class IterationRecord:
    iteration: int
    pair: tuple[int, ...]
    score: float
    objective_before: float
    objective_after: float
    nodes: int
    status: str
    selection_solves: int
    accepted: bool

    def to_json(self) -> dict:
        return {
            "type": "iteration", "iteration": self.iteration,
            "pair": list(self.pair), "score": self.score,
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "nodes": self.nodes, "status": self.status,
            "selection_solves": self.selection_solves, "accepted": self.accepted,
        }


@dataclass
class RunLog:
    header: dict
    records: list[IterationRecord] = field(default_factory=list)
    refine_record: dict | None = None
    status: str = "running"
    final_objective: float = float("nan")
    converged: bool = False

    def iterations(self) -> int:
        return len(self.records)

    def to_lines(self) -> list[str]:
        lines = [json.dumps({"type": "header", **self.header}, sort_keys=True)]
        lines += [json.dumps(r.to_json(), sort_keys=True) for r in self.records]
        if self.refine_record is not None:
            lines.append(json.dumps({"type": "refine", **self.refine_record},
                                    sort_keys=True))
        lines.append(json.dumps({
            "type": "result", "status": self.status,
            "final_objective": self.final_objective,
            "converged": self.converged, "iterations": self.iterations(),
        }, sort_keys=True))
        return lines

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")


@dataclass
class SearchState:
    model: modmod.FeasModel
    incumbent: modmod.Schedule
    z_best: float
    tabu: set[tuple[int, ...]] = field(default_factory=set)
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    limits: SearchLimits = field(default_factory=SearchLimits)

    def candidate_pairs(self) -> list[tuple[int, int]]:
        ids = [v.id for v in self.model.instance.vessels]
        return [p for p in combinations(sorted(ids), 2) if p not in self.tabu]


class PolicyExhausted(Exception):
    """Every pair is tabu; the search cannot continue without an improvement."""


# ---------------------------------------------------------------------------
# initial solution
# ---------------------------------------------------------------------------

def initial_paths(model: modmod.FeasModel) -> list[tuple[int, ...]]:
    """Idle at the start port when possible, else the fewest-sailing route."""
    paths = []
    for net in model.tsns:
        p = tsnmod.waiting_only_path(net)
        if p is None:
            p = tsnmod.fewest_sailing_path(net)
        paths.append(tuple(p))
    return paths


def initial_solution(model: modmod.FeasModel,
                     limits: SearchLimits | None = None) -> modmod.Schedule:
    """Feasible starting point plus one single-vessel improvement sweep."""
    limits = limits or SearchLimits()
    incumbent = modmod.make_schedule(model, initial_paths(model))
    z = incumbent.objective
    for v in model.instance.vessels:
        if z <= modmod.FEAS_TOL:
            break
        sub = Subproblem(model, (v.id,), incumbent)
        res = solve_mip(sub, node_limit=limits.node_limit,
                        time_limit=limits.time_limit, warm=incumbent,
                        max_cut_rounds=limits.cut_rounds)
        if res.objective < z - ACCEPT_TOL:
            incumbent = modmod.make_schedule(model, res.paths)
            z = incumbent.objective
    return incumbent


# ---------------------------------------------------------------------------
# pair ranking
# ---------------------------------------------------------------------------

def rank_pairs(state: SearchState, policy: Policy) -> tuple[list[tuple[tuple[int, int], float]], int]:
    """Ordered (pair, score) covering all non-tabu pairs, plus solves spent."""
    pairs = state.candidate_pairs()
    if not pairs:
        raise PolicyExhausted("all vessel pairs are tabu")
    if policy.variant == "random":
        keys = state.rng.random(len(pairs))
        order = np.argsort(keys, kind="stable")
        return [(pairs[i], float(keys[i])) for i in order], 0
    if policy.variant in ("lp", "root", "exact"):
        scored = []
        for pair in pairs:
            sub = Subproblem(state.model, pair, state.incumbent)
            if policy.variant == "lp":
                bound = solve_lp_bound(sub)
            elif policy.variant == "root":
                bound = root_bound(sub, max_cut_rounds=state.limits.cut_rounds)
            else:
                bound = solve_mip(sub, node_limit=state.limits.node_limit,
                                  time_limit=state.limits.time_limit,
                                  warm=state.incumbent,
                                  max_cut_rounds=state.limits.cut_rounds).objective
            scored.append((pair, float(bound)))
        scored.sort(key=lambda ps: (ps[1], ps[0]))
        return scored, len(pairs)
    # gnn: probabilities over the candidate pairs, best first, no solves
    from .gnn import score_pairs
    probs = score_pairs(policy.params, state.model, state.incumbent, pairs)
    order = sorted(range(len(pairs)), key=lambda i: (-probs[i], pairs[i]))
    return [(pairs[i], float(probs[i])) for i in order], 0


# ---------------------------------------------------------------------------
# the local search (phase 1)
# ---------------------------------------------------------------------------

def local_search(model: modmod.FeasModel, policy: Policy,
                 limits: SearchLimits | None = None, seed: int = 0,
                 start: modmod.Schedule | None = None,
                 observer=None) -> tuple[modmod.Schedule, RunLog]:
    """Iterated two-vessel improvement over the combinatorial model."""
    limits = limits or SearchLimits()
    state = SearchState(
        model=model,
        incumbent=start if start is not None else initial_solution(model, limits),
        z_best=0.0,
        rng=np.random.default_rng(seed),
        limits=limits,
    )
    state.z_best = state.incumbent.objective
    log = RunLog(header={
        "instance_hash": instance_hash(model.instance),
        "policy": policy.variant, "seed": seed,
        "max_iterations": limits.max_iterations,
        "node_limit": limits.node_limit,
        "time_limit": limits.time_limit,
        "cut_rounds": limits.cut_rounds,
        "include_inventory": model.include_inventory,
        "initial_objective": state.z_best,
    })

    while True:
        if state.z_best <= modmod.FEAS_TOL:
            log.status = "converged"
            break
        if state.iteration >= limits.max_iterations:
            log.status = "iteration_limit"
            break
        try:
            ranked, selection_solves = rank_pairs(state, policy)
        except PolicyExhausted:
            log.status = "exhausted"
            break
        pair, score = ranked[0]
        if observer is not None:
            observer(state, ranked, selection_solves)
        sub = Subproblem(model, pair, state.incumbent)
        res = solve_mip(sub, node_limit=limits.node_limit,
                        time_limit=limits.time_limit, warm=state.incumbent,
                        max_cut_rounds=limits.cut_rounds)
        accepted = res.objective < state.z_best - ACCEPT_TOL
        before = state.z_best
        state.tabu.add(pair)
        if accepted:
            state.incumbent = modmod.make_schedule(model, res.paths)
            state.z_best = state.incumbent.objective
            state.tabu.clear()
        log.records.append(IterationRecord(
            iteration=state.iteration, pair=pair, score=score,
            objective_before=before, objective_after=state.z_best,
            nodes=res.nodes_explored, status=res.status,
            selection_solves=selection_solves, accepted=accepted,
        ))
        state.iteration += 1

    log.final_objective = state.z_best
    log.converged = state.z_best <= modmod.FEAS_TOL
    return state.incumbent, log


# ---------------------------------------------------------------------------
# phase 2: inventory refinement
# ---------------------------------------------------------------------------

def refine(instance: Instance, phase1: modmod.Schedule,
           limits: SearchLimits | None = None,
           allow_reposition: bool = False,
           full_model: modmod.FeasModel | None = None,
           ) -> tuple[modmod.Schedule, MipResult]:
    """Reinstate inventory rows and re-solve the full model, warm-started."""
    limits = limits or SearchLimits()
    full = full_model if full_model is not None else modmod.build(
        instance, include_inventory=True, allow_reposition=allow_reposition)
    warm = modmod.make_schedule(full, phase1.paths)
    res = solve_full(full, node_limit=limits.refine_node_limit,
                     time_limit=limits.time_limit, warm=warm,
                     max_cut_rounds=limits.cut_rounds)
    return modmod.make_schedule(full, res.paths), res


# ---------------------------------------------------------------------------
# the two-phase driver
# ---------------------------------------------------------------------------

def two_phase(instance: Instance, policy: Policy,
              limits: SearchLimits | None = None, seed: int = 0,
              allow_reposition: bool = False) -> tuple[modmod.Schedule, RunLog]:
    """Phase-1 local search; hybrid instances get inventory refinement."""
    limits = limits or SearchLimits()
    combinatorial = modmod.build(instance, include_inventory=False,
                                 allow_reposition=allow_reposition)
    schedule, log = local_search(combinatorial, policy, limits, seed)
    if instance.is_hybrid:
        full = modmod.build(instance, include_inventory=True,
                            allow_reposition=allow_reposition)
        warm_objective = modmod.objective(full, modmod.make_schedule(full, schedule.paths))
        refined, res = refine(instance, schedule, limits, allow_reposition,
                              full_model=full)
        log.refine_record = {
            "objective_before": warm_objective,
            "objective_after": refined.objective,
            "nodes": res.nodes_explored,
            "status": res.status,
        }
        schedule = refined
        log.final_objective = refined.objective
        log.converged = refined.objective <= modmod.FEAS_TOL
        log.status = "converged" if log.converged else log.status
    return schedule, log

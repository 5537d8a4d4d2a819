"""Slack-minimizing feasibility model over per-vessel path variables.

The model couples each vessel's path polytope (flow conservation over its
time-space network) through joint constraints: berth capacities per port and
period, contract ratability windows, and (optionally) tankfarm inventory
bounds with the inventory levels projected out into pure load-count rows.
Every joint row is normalized to `lhs <= rhs + scale * slack`; the objective
is the total scaled slack, so an objective of zero certifies feasibility.

Loading/discharging indicators are linear aliases of arc variables: a vessel
loads at a port when it departs on a sailing arc, and delivers when it
arrives on one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import tsn as tsnmod
from .instance import ContractKind, Instance, PortKind, instance_hash, validate

FEAS_TOL = 1e-6

KIND_BERTH_LOAD = "berth_load"
KIND_BERTH_DISCHARGE = "berth_discharge"
KIND_RATABILITY_LB = "ratability_lb"
KIND_RATABILITY_UB = "ratability_ub"
KIND_INVENTORY_LB = "inventory_lb"
KIND_INVENTORY_UB = "inventory_ub"

BERTH_KINDS = (KIND_BERTH_LOAD, KIND_BERTH_DISCHARGE)


@dataclass(frozen=True)
class VarRef:
    vessel: int    # vessel id
    arc: int       # arc id within that vessel's network


@dataclass(frozen=True)
class JointConstraint:
    id: int
    kind: str
    rhs: float
    slack_scale: float
    term_cols: np.ndarray      # global column ids
    term_coeffs: np.ndarray

    def terms(self, model: "FeasModel") -> list[tuple[VarRef, float]]:
        return [
            (VarRef(model.instance.vessels[model.col_vessel[c]].id,
                    int(model.col_arc[c])), float(f))
            for c, f in zip(self.term_cols, self.term_coeffs)
        ]


@dataclass(frozen=True)
class Schedule:
    paths: tuple[tuple[int, ...], ...]   # per vessel, in instance vessel order
    slacks: np.ndarray

    @property
    def objective(self) -> float:
        return float(self.slacks.sum())


@dataclass(frozen=True)
class Violation:
    kind: str
    entity: str
    period: int
    amount: float       # raw constraint excess
    residual: float     # excess scaled like the objective

    def __str__(self) -> str:
        at = f" at period {self.period}" if self.period else ""
        return f"{self.kind} {self.entity}{at}: excess {self.amount:g} (scaled {self.residual:g})"


class FeasModel:
    """Assembled model: joint rows over the concatenated arc-variable vector."""

    def __init__(self, instance: Instance, tsns: list[tsnmod.TimeSpaceNetwork],
                 include_inventory: bool, jmat: sp.csr_matrix,
                 rhs: np.ndarray, rho: np.ndarray, kinds: list[str],
                 row_entity: list[tuple], allow_reposition: bool):
        self.instance = instance
        self.tsns = tsns
        self.include_inventory = include_inventory
        self.jmat = jmat
        self.rhs = rhs
        self.rho = rho
        self.kinds = kinds
        self.row_entity = row_entity       # (entity description, period) per row
        self.allow_reposition = allow_reposition

        sizes = [net.n_arcs for net in tsns]
        self.col_offset = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_cols = int(self.col_offset[-1])
        self.col_vessel = np.concatenate(
            [np.full(n, i, dtype=np.int64) for i, n in enumerate(sizes)]
        ) if sizes else np.zeros(0, dtype=np.int64)
        self.col_arc = np.concatenate(
            [np.arange(n, dtype=np.int64) for n in sizes]
        ) if sizes else np.zeros(0, dtype=np.int64)
        self.jmat_csc = jmat.tocsc()

    @property
    def n_rows(self) -> int:
        return self.jmat.shape[0]

    @cached_property
    def joints(self) -> list[JointConstraint]:
        out = []
        for i in range(self.n_rows):
            lo, hi = self.jmat.indptr[i], self.jmat.indptr[i + 1]
            out.append(JointConstraint(
                id=i, kind=self.kinds[i], rhs=float(self.rhs[i]),
                slack_scale=float(self.rho[i]),
                term_cols=self.jmat.indices[lo:hi].astype(np.int64),
                term_coeffs=self.jmat.data[lo:hi].copy(),
            ))
        return out

    @cached_property
    def slack_big_m(self) -> np.ndarray:
        """Worst-case scaled violation per joint row over the variable box."""
        if self.n_rows == 0:
            return np.zeros(0)
        pos = np.asarray(self.jmat.maximum(0).sum(axis=1)).ravel()
        return np.maximum(0.0, (pos - self.rhs) / self.rho)

    def vessel_columns(self, vessel_pos: int) -> tuple[int, int]:
        return int(self.col_offset[vessel_pos]), int(self.col_offset[vessel_pos + 1])

    def path_to_x(self, paths) -> np.ndarray:
        x = np.zeros(self.n_cols)
        for vp, path in enumerate(paths):
            off = self.col_offset[vp]
            for a in path:
                x[off + int(a)] = 1.0
        return x

    def x_to_paths(self, x: np.ndarray, tol: float = 1e-6) -> tuple[tuple[int, ...], ...]:
        """Decode an integral assignment into per-vessel paths (source to sink)."""
        paths = []
        for vp, net in enumerate(self.tsns):
            off = self.col_offset[vp]
            vals = x[off:off + net.n_arcs]
            if np.any(np.abs(vals - np.round(vals)) > tol):
                raise ValueError(f"vessel {net.vessel}: assignment not integral")
            chosen = set(np.nonzero(np.round(vals) > 0.5)[0].tolist())
            path = []
            node = net.source
            while node != net.sink:
                nxt = [int(a) for a in net.arcs_leaving(node) if int(a) in chosen]
                if len(nxt) != 1:
                    raise ValueError(
                        f"vessel {net.vessel}: assignment does not trace a path at node {node}"
                    )
                path.append(nxt[0])
                chosen.discard(nxt[0])
                node = int(net.arc_to[nxt[0]])
            if chosen:
                raise ValueError(f"vessel {net.vessel}: spurious arcs off the path")
            paths.append(tuple(path))
        return tuple(paths)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def build(instance: Instance, include_inventory: bool,
          allow_reposition: bool = False) -> FeasModel:
    """Assemble the joint-constraint system for every vessel network."""
    problems = validate(instance)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))

    nets = [tsnmod.build(instance, v.id, allow_reposition) for v in instance.vessels]
    horizon = instance.horizon
    ports = instance.ports
    pmap = instance.port_index()
    load_pos = [i for i, p in enumerate(ports) if p.kind == PortKind.LOADING]
    disch_pos = [i for i, p in enumerate(ports) if p.kind == PortKind.DISCHARGING]
    load_row_of = {jp: k for k, jp in enumerate(load_pos)}
    disch_row_of = {jp: k for k, jp in enumerate(disch_pos)}

    rows_rhs: list[float] = []
    rows_rho: list[float] = []
    rows_kind: list[str] = []
    rows_entity: list[tuple] = []

    def add_row(kind: str, rhs: float, rho: float, entity: tuple) -> int:
        rows_kind.append(kind)
        rows_rhs.append(rhs)
        rows_rho.append(rho)
        rows_entity.append(entity)
        return len(rows_rhs) - 1

    n_bl = len(load_pos) * horizon
    n_bd = len(disch_pos) * horizon
    for jp in load_pos:
        for h in range(1, horizon + 1):
            add_row(KIND_BERTH_LOAD, float(ports[jp].berth_capacity), 1.0,
                    (f"port {ports[jp].id}", h))
    for jp in disch_pos:
        for h in range(1, horizon + 1):
            add_row(KIND_BERTH_DISCHARGE, float(ports[jp].berth_capacity), 1.0,
                    (f"port {ports[jp].id}", h))

    rat_rows: list[tuple[int, int, int, int, int]] = []   # (row, port_pos, h1, h2, sign)
    for c in instance.contracts:
        jp = pmap[c.port]
        for w in c.ratabilities:
            r_lb = add_row(KIND_RATABILITY_LB, -float(w.lb), 1.0,
                           (f"contract {c.id} window [{w.h1},{w.h2}]", 0))
            r_ub = add_row(KIND_RATABILITY_UB, float(w.ub), 1.0,
                           (f"contract {c.id} window [{w.h1},{w.h2}]", 0))
            rat_rows.append((r_lb, jp, w.h1, w.h2, -1))
            rat_rows.append((r_ub, jp, w.h1, w.h2, 1))

    inv_rows: list[tuple[int, int, int, float]] = []       # (row, port_pos, h, coeff_sign)
    if include_inventory:
        for t in instance.tankfarms:
            jp = pmap[t.port]
            prefix = np.concatenate([[0], np.cumsum(t.production)])
            lo_scale = float(t.lower_bound) if t.lower_bound > 0 else float(t.upper_bound)
            for h in range(1, horizon + 1):
                produced = float(prefix[h - 1])
                r_lb = add_row(KIND_INVENTORY_LB,
                               t.initial_inventory + produced - t.lower_bound,
                               lo_scale, (f"tankfarm {t.id}", h))
                r_ub = add_row(KIND_INVENTORY_UB,
                               t.upper_bound - t.initial_inventory - produced,
                               float(t.upper_bound), (f"tankfarm {t.id}", h))
                inv_rows.append((r_lb, jp, h, 1.0))
                inv_rows.append((r_ub, jp, h, -1.0))

    # scatter arc columns into rows
    coo_r: list[np.ndarray] = []
    coo_c: list[np.ndarray] = []
    coo_v: list[np.ndarray] = []
    col_off = 0
    for vp, net in enumerate(nets):
        cap = float(instance.vessels[vp].capacity)
        sail = np.nonzero(net.arc_sailing)[0]
        fp = net.node_port_pos[net.arc_from[sail]]
        fh = net.node_period[net.arc_from[sail]]
        tp = net.node_port_pos[net.arc_to[sail]]
        th = net.node_period[net.arc_to[sail]]

        # berth rows: departures at loading ports, arrivals at discharging ports
        dep_mask = np.isin(fp, load_pos)
        dep_arcs, dep_p, dep_h = sail[dep_mask], fp[dep_mask], fh[dep_mask]
        rows = np.array([load_row_of[int(j)] * horizon + int(h) - 1
                         for j, h in zip(dep_p, dep_h)], dtype=np.int64)
        coo_r.append(rows)
        coo_c.append(col_off + dep_arcs)
        coo_v.append(np.ones(len(rows)))

        arr_mask = np.isin(tp, disch_pos)
        arr_arcs, arr_p, arr_h = sail[arr_mask], tp[arr_mask], th[arr_mask]
        rows = np.array([n_bl + disch_row_of[int(j)] * horizon + int(h) - 1
                         for j, h in zip(arr_p, arr_h)], dtype=np.int64)
        coo_r.append(rows)
        coo_c.append(col_off + arr_arcs)
        coo_v.append(np.ones(len(rows)))

        for row, jp, h1, h2, sign in rat_rows:
            if ports[jp].kind == PortKind.LOADING:
                mask = (dep_p == jp) & (dep_h >= h1) & (dep_h <= h2)
                arcs = dep_arcs[mask]
            else:
                mask = (arr_p == jp) & (arr_h >= h1) & (arr_h <= h2)
                arcs = arr_arcs[mask]
            if len(arcs):
                coo_r.append(np.full(len(arcs), row, dtype=np.int64))
                coo_c.append(col_off + arcs)
                coo_v.append(np.full(len(arcs), float(sign)))

        for row, jp, h, csign in inv_rows:
            mask = (dep_p == jp) & (dep_h < h)
            arcs = dep_arcs[mask]
            if len(arcs):
                coo_r.append(np.full(len(arcs), row, dtype=np.int64))
                coo_c.append(col_off + arcs)
                coo_v.append(np.full(len(arcs), csign * cap))

        col_off += net.n_arcs

    n_rows = len(rows_rhs)
    if coo_r:
        jmat = sp.coo_matrix(
            (np.concatenate(coo_v), (np.concatenate(coo_r), np.concatenate(coo_c))),
            shape=(n_rows, col_off),
        ).tocsr()
    else:
        jmat = sp.csr_matrix((n_rows, col_off))
    jmat.sum_duplicates()

    return FeasModel(
        instance=instance, tsns=nets, include_inventory=include_inventory,
        jmat=jmat, rhs=np.asarray(rows_rhs), rho=np.asarray(rows_rho),
        kinds=rows_kind, row_entity=rows_entity, allow_reposition=allow_reposition,
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _validate_paths(model: FeasModel, paths) -> None:
    if len(paths) != len(model.tsns):
        raise ValueError(f"expected {len(model.tsns)} paths, got {len(paths)}")
    for net, path in zip(model.tsns, paths):
        tsnmod.trace_path(net, path)


def minimal_slacks(model: FeasModel, paths) -> np.ndarray:
    """Smallest slack vector completing the given paths into a feasible point."""
    _validate_paths(model, paths)
    x = model.path_to_x(paths)
    act = model.jmat @ x
    return np.maximum(0.0, (act - model.rhs) / model.rho)


def objective(model: FeasModel, schedule: Schedule) -> float:
    return float(minimal_slacks(model, schedule.paths).sum())


def make_schedule(model: FeasModel, paths) -> Schedule:
    paths = tuple(tuple(int(a) for a in p) for p in paths)
    return Schedule(paths=paths, slacks=minimal_slacks(model, paths))


def schedule_events(model: FeasModel, schedule: Schedule):
    """Decode (vessel id, port id, period) load and discharge events."""
    loads = []
    discharges = []
    for vp, net in enumerate(model.tsns):
        vid = model.instance.vessels[vp].id
        for a in schedule.paths[vp]:
            if not net.arc_sailing[a]:
                continue
            arc = net.arc(int(a))
            from_kind = model.instance.ports[int(net.node_port_pos[net.arc_from[a]])].kind
            to_kind = model.instance.ports[int(net.node_port_pos[net.arc_to[a]])].kind
            if from_kind == PortKind.LOADING:
                loads.append((vid, arc.from_node.port, arc.from_node.period))
            if to_kind == PortKind.DISCHARGING:
                discharges.append((vid, arc.to_node.port, arc.to_node.period))
    return loads, discharges


def check_feasible(model: FeasModel, schedule: Schedule,
                   tol: float = FEAS_TOL) -> list[Violation]:
    """Independent validator recomputing every constraint group from raw data.

    Works from decoded load/discharge events and the instance alone; does not
    touch the assembled joint rows.
    """
    inst = model.instance
    _validate_paths(model, schedule.paths)
    loads, discharges = schedule_events(model, schedule)
    out: list[Violation] = []

    berth = {}
    for _, port, h in loads:
        berth[(port, h, "load")] = berth.get((port, h, "load"), 0) + 1
    for _, port, h in discharges:
        berth[(port, h, "disch")] = berth.get((port, h, "disch"), 0) + 1
    for p in inst.ports:
        for h in range(1, inst.horizon + 1):
            side = "load" if p.kind == PortKind.LOADING else "disch"
            used = berth.get((p.id, h, side), 0)
            excess = used - p.berth_capacity
            if excess > tol:
                kind = KIND_BERTH_LOAD if side == "load" else KIND_BERTH_DISCHARGE
                out.append(Violation(kind, f"port {p.id}", h, float(excess), float(excess)))

    for c in inst.contracts:
        events = loads if c.kind == ContractKind.PURCHASE else discharges
        for w in c.ratabilities:
            n = sum(1 for (_, port, h) in events
                    if port == c.port and w.h1 <= h <= w.h2)
            if w.lb - n > tol:
                out.append(Violation(KIND_RATABILITY_LB,
                                     f"contract {c.id} window [{w.h1},{w.h2}]",
                                     0, float(w.lb - n), float(w.lb - n)))
            if n - w.ub > tol:
                out.append(Violation(KIND_RATABILITY_UB,
                                     f"contract {c.id} window [{w.h1},{w.h2}]",
                                     0, float(n - w.ub), float(n - w.ub)))

    if model.include_inventory:
        caps = {v.id: v.capacity for v in inst.vessels}
        for t in inst.tankfarms:
            lo_scale = float(t.lower_bound) if t.lower_bound > 0 else float(t.upper_bound)
            level = float(t.initial_inventory)
            for h in range(1, inst.horizon + 1):
                if h > 1:
                    drained = sum(caps[v] for (v, port, hh) in loads
                                  if port == t.port and hh == h - 1)
                    level += t.production[h - 2] - drained
                under = t.lower_bound - level
                over = level - t.upper_bound
                if under / lo_scale > tol:
                    out.append(Violation(KIND_INVENTORY_LB, f"tankfarm {t.id}", h,
                                         float(under), float(under / lo_scale)))
                if over / t.upper_bound > tol:
                    out.append(Violation(KIND_INVENTORY_UB, f"tankfarm {t.id}", h,
                                         float(over), float(over / t.upper_bound)))
    return out


# ---------------------------------------------------------------------------
# schedule files
# ---------------------------------------------------------------------------

def schedule_to_dict(schedule: Schedule, instance: Instance, config: dict | None = None) -> dict:
    return {
        "meta": {
            "version": 1,
            "instance_hash": instance_hash(instance),
            "config": config or {},
        },
        "paths": [list(p) for p in schedule.paths],
    }


def save_schedule(schedule: Schedule, instance: Instance, path,
                  config: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule_to_dict(schedule, instance, config), fh, indent=1)
        fh.write("\n")


def load_schedule(path, model: FeasModel) -> Schedule:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"schedule parse failure at line {exc.lineno}: {exc.msg}") from exc
    want = instance_hash(model.instance)
    got = doc.get("meta", {}).get("instance_hash")
    if got != want:
        raise ValueError(f"schedule instance hash mismatch: file has {got}, expected {want}")
    return make_schedule(model, [tuple(p) for p in doc["paths"]])


def model_digest(model: FeasModel) -> str:
    """Short digest over the model shape, for run logs."""
    h = hashlib.sha256()
    h.update(instance_hash(model.instance).encode())
    h.update(str(model.include_inventory).encode())
    h.update(str(model.n_cols).encode())
    h.update(str(model.n_rows).encode())
    return h.hexdigest()[:16]

"""Domain data model for maritime inventory routing instances.

An :class:`Instance` bundles everything the downstream modules need: the
planning horizon (1-based periods), the vessel fleet, loading/discharging
ports, tankfarms with production and inventory bounds, purchase/sale
contracts with ratability windows, and the port-to-port travel time matrix.

The module also provides validation, a seeded synthetic generator with four
size presets, and JSON (de)serialization with strict schema checking.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1

PRESETS = ("tiny", "small", "medium", "large")


class InstanceError(Exception):
    """Raised for malformed instance files or invalid instances."""


class PortKind(str, Enum):
    LOADING = "loading"
    DISCHARGING = "discharging"


class ContractKind(str, Enum):
    PURCHASE = "purchase"
    SALE = "sale"


@dataclass(frozen=True)
class Vessel:
    id: int
    capacity: int          # cubic meters
    start_port: int        # port id
    end_port: int          # port id


@dataclass(frozen=True)
class Port:
    id: int
    kind: PortKind
    berth_capacity: int


@dataclass(frozen=True)
class Tankfarm:
    id: int
    port: int                       # loading-port id
    initial_inventory: int
    lower_bound: int                # safety stock
    upper_bound: int                # storage capacity
    production: tuple[int, ...]     # one entry per period


@dataclass(frozen=True)
class RatabilityWindow:
    h1: int
    h2: int
    lb: int
    ub: int


@dataclass(frozen=True)
class Contract:
    id: int
    kind: ContractKind
    port: int
    ratabilities: tuple[RatabilityWindow, ...]


@dataclass(frozen=True)
class Instance:
    horizon: int
    vessels: tuple[Vessel, ...]
    ports: tuple[Port, ...]
    tankfarms: tuple[Tankfarm, ...]
    contracts: tuple[Contract, ...]
    travel_time: tuple[tuple[int, ...], ...]   # positional over the ports list
    meta: dict = field(default_factory=dict)

    # -- convenience lookups (positions, not ids) --

    def port_index(self) -> dict[int, int]:
        return {p.id: i for i, p in enumerate(self.ports)}

    def vessel_index(self) -> dict[int, int]:
        return {v.id: i for i, v in enumerate(self.vessels)}

    def loading_ports(self) -> list[Port]:
        return [p for p in self.ports if p.kind == PortKind.LOADING]

    def discharging_ports(self) -> list[Port]:
        return [p for p in self.ports if p.kind == PortKind.DISCHARGING]

    def travel(self, from_port: int, to_port: int) -> int:
        idx = self.port_index()
        return self.travel_time[idx[from_port]][idx[to_port]]

    @property
    def is_hybrid(self) -> bool:
        """True when inventory constraints exist alongside combinatorial ones."""
        return len(self.tankfarms) > 0


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(instance: Instance) -> list[str]:
    """Check every structural invariant; returns one message per violation."""
    out: list[str] = []
    h = instance.horizon
    if h < 1:
        out.append(f"instance: horizon must be >= 1, got {h}")

    port_ids = [p.id for p in instance.ports]
    if len(set(port_ids)) != len(port_ids):
        out.append("instance: duplicate port ids")
    ports_by_id = {p.id: p for p in instance.ports}

    n_load = sum(1 for p in instance.ports if p.kind == PortKind.LOADING)
    n_disch = sum(1 for p in instance.ports if p.kind == PortKind.DISCHARGING)
    if n_load == 0:
        out.append("instance: needs at least one loading port")
    if n_disch == 0:
        out.append("instance: needs at least one discharging port")

    for p in instance.ports:
        if p.berth_capacity < 1:
            out.append(f"port {p.id}: berth_capacity must be >= 1, got {p.berth_capacity}")

    vessel_ids = [v.id for v in instance.vessels]
    if len(set(vessel_ids)) != len(vessel_ids):
        out.append("instance: duplicate vessel ids")
    for v in instance.vessels:
        if v.capacity <= 0:
            out.append(f"vessel {v.id}: capacity must be positive, got {v.capacity}")
        if v.start_port not in ports_by_id:
            out.append(f"vessel {v.id}: unknown start_port {v.start_port}")
        if v.end_port not in ports_by_id:
            out.append(f"vessel {v.id}: unknown end_port {v.end_port}")

    tank_ids = [t.id for t in instance.tankfarms]
    if len(set(tank_ids)) != len(tank_ids):
        out.append("instance: duplicate tankfarm ids")
    for t in instance.tankfarms:
        port = ports_by_id.get(t.port)
        if port is None:
            out.append(f"tankfarm {t.id}: unknown port {t.port}")
        elif port.kind != PortKind.LOADING:
            out.append(f"tankfarm {t.id}: port {t.port} is not a loading port")
        if not (t.lower_bound <= t.initial_inventory <= t.upper_bound):
            out.append(
                f"tankfarm {t.id}: initial_inventory {t.initial_inventory} outside "
                f"[{t.lower_bound}, {t.upper_bound}]"
            )
        if t.lower_bound < 0:
            out.append(f"tankfarm {t.id}: lower_bound must be >= 0")
        if len(t.production) != h:
            out.append(
                f"tankfarm {t.id}: production length {len(t.production)} != horizon {h}"
            )

    contract_ids = [c.id for c in instance.contracts]
    if len(set(contract_ids)) != len(contract_ids):
        out.append("instance: duplicate contract ids")
    for c in instance.contracts:
        port = ports_by_id.get(c.port)
        if port is None:
            out.append(f"contract {c.id}: unknown port {c.port}")
        elif c.kind == ContractKind.PURCHASE and port.kind != PortKind.LOADING:
            out.append(f"contract {c.id}: purchase contract on non-loading port {c.port}")
        elif c.kind == ContractKind.SALE and port.kind != PortKind.DISCHARGING:
            out.append(f"contract {c.id}: sale contract on non-discharging port {c.port}")
        for k, w in enumerate(c.ratabilities):
            if not (1 <= w.h1 <= w.h2 <= h):
                out.append(
                    f"contract {c.id} window {k}: bad period range [{w.h1}, {w.h2}] "
                    f"for horizon {h}"
                )
            if not (0 <= w.lb <= w.ub):
                out.append(f"contract {c.id} window {k}: bad cargo bounds [{w.lb}, {w.ub}]")

    n_ports = len(instance.ports)
    tt = instance.travel_time
    if len(tt) != n_ports or any(len(row) != n_ports for row in tt):
        out.append(f"instance: travel_time must be {n_ports}x{n_ports}")
    else:
        for i, row in enumerate(tt):
            for j, val in enumerate(row):
                if val < 1:
                    out.append(f"travel_time[{i}][{j}]: must be >= 1, got {val}")
    return out


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _PresetSpec:
    horizon: tuple[int, int]
    vessels: tuple[int, int]
    loading: tuple[int, int]
    discharging: tuple[int, int]
    tankfarms: tuple[int, int]
    utilization: float          # share of the fleet voyage budget given to demand


_PRESETS: dict[str, _PresetSpec] = {
    # tiny exists for brute-force oracles: small TSNs, enumerable path sets
    "tiny": _PresetSpec((10, 14), (2, 3), (1, 2), (1, 2), (0, 1), 0.45),
    "small": _PresetSpec((60, 60), (4, 4), (2, 2), (2, 2), (0, 2), 0.65),
    "medium": _PresetSpec((180, 180), (10, 10), (3, 3), (9, 9), (0, 2), 0.55),
    "large": _PresetSpec((365, 365), (10, 25), (3, 5), (9, 16), (0, 2), 0.55),
}

CAPACITY_RANGE = (155_000, 175_000)
DEMAND_SHORTFALL = 0.05
_WINDOW_MONTHS = (12, 6, 3, 1)


def _window_tiles(horizon: int, months: int) -> list[tuple[int, int]]:
    """Consecutive ratability windows of ~months/12 of the horizon."""
    width = math.ceil(horizon * months / 12)
    tiles = []
    s = 1
    while s <= horizon:
        tiles.append((s, min(s + width - 1, horizon)))
        s += width
    return tiles


_WINDOW_LB_FRACTION = {6: 0.40, 3: 0.20, 1: 0.0}


def _span_tiles(a: int, b: int, width: int) -> list[tuple[int, int]]:
    tiles = []
    s = a
    while s <= b:
        tiles.append((s, min(s + width - 1, b)))
        s += width
    return tiles


def _contract_windows(horizon: int, target: int,
                      span: tuple[int, int]) -> tuple[RatabilityWindow, ...]:
    """Nested window set around a target cargo count.

    The contract is active on `span`; the span-wide window pins the count and
    finer month-scaled tiles spread it with progressively looser bounds.
    """
    a, b = span
    length = b - a + 1
    windows = [RatabilityWindow(a, b, target, target + 1)]
    for months in _WINDOW_MONTHS[1:]:
        width = math.ceil(horizon * months / 12)
        tiles = _span_tiles(a, b, width)
        n = len(tiles)
        if n <= 1:
            continue
        if months == 1:
            w_lb = 0
            w_ub = max(1, math.ceil(target * width / length))
        else:
            w_lb = max(0, math.floor(_WINDOW_LB_FRACTION[months] * target / n))
            w_ub = max(1, math.ceil(target / n) + 1)
        for (ta, tb) in tiles:
            windows.append(RatabilityWindow(ta, tb, w_lb, w_ub))
    return tuple(windows)


def generate(seed: int, preset: str) -> Instance:
    """Deterministically generate a synthetic instance for the given preset."""
    if preset not in _PRESETS:
        raise InstanceError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    spec = _PRESETS[preset]
    rng = np.random.default_rng(seed)

    horizon = int(rng.integers(spec.horizon[0], spec.horizon[1] + 1))
    n_vessels = int(rng.integers(spec.vessels[0], spec.vessels[1] + 1))
    n_loading = int(rng.integers(spec.loading[0], spec.loading[1] + 1))
    n_disch = int(rng.integers(spec.discharging[0], spec.discharging[1] + 1))
    n_ports = n_loading + n_disch

    ports = tuple(
        Port(
            id=j,
            kind=PortKind.LOADING if j < n_loading else PortKind.DISCHARGING,
            berth_capacity=int(rng.integers(1, 3)),
        )
        for j in range(n_ports)
    )

    # travel times scale with the horizon so shorter presets keep the same
    # voyages-per-horizon feel as a 365-day instance with 65-day legs
    if preset == "tiny":
        # legs of a third of the horizon keep per-vessel path sets enumerable
        t_lo = max(2, horizon // 4)
        t_hi = max(t_lo + 1, horizon // 3 + 1)
    else:
        t_hi = max(3, min(65, round(65 * horizon / 365)))
        t_lo = max(1, t_hi // 3) if preset == "small" else 1
    travel = rng.integers(t_lo, t_hi + 1, size=(n_ports, n_ports))
    np.fill_diagonal(travel, 1)
    travel_time = tuple(tuple(int(x) for x in row) for row in travel)

    def _end_reachable(s: int, e: int) -> bool:
        # sailing legs alternate port kinds, so same-kind trips need a stopover
        if s == e:
            return True
        if (s < n_loading) != (e < n_loading):
            return travel[s][e] <= horizon - 1
        mids = range(n_loading, n_ports) if s < n_loading else range(0, n_loading)
        return any(travel[s][k] + travel[k][e] <= horizon - 1 for k in mids)

    vessels = []
    for v in range(n_vessels):
        capacity = int(rng.integers(CAPACITY_RANGE[0], CAPACITY_RANGE[1] + 1))
        start = int(rng.integers(0, n_ports))
        if rng.random() < 0.5:
            end = start
        else:
            reachable = [j for j in range(n_ports) if _end_reachable(start, j)]
            end = int(reachable[rng.integers(0, len(reachable))])
        vessels.append(Vessel(id=v, capacity=capacity, start_port=start, end_port=end))
    vessels = tuple(vessels)

    n_tanks = int(rng.integers(spec.tankfarms[0], spec.tankfarms[1] + 1))
    n_tanks = min(n_tanks, n_loading)
    tank_ports = list(rng.choice(n_loading, size=n_tanks, replace=False)) if n_tanks else []
    cap_max = max(v.capacity for v in vessels)
    tankfarms = []
    tank_supply = 0
    tank_loads = 0
    for t, j in enumerate(sorted(int(p) for p in tank_ports)):
        target_loads = max(1, round(horizon / 90))
        upper = round(1.4 * cap_max)
        lower = round(0.10 * upper)
        initial = lower + round(0.30 * (upper - lower))
        total_prod = round(0.95 * target_loads * cap_max)
        per = total_prod // horizon
        production = [per] * horizon
        production[-1] += total_prod - per * horizon
        tankfarms.append(
            Tankfarm(
                id=t,
                port=j,
                initial_inventory=initial,
                lower_bound=lower,
                upper_bound=upper,
                production=tuple(production),
            )
        )
        tank_supply += initial - lower + total_prod
        tank_loads += target_loads
    tankfarms = tuple(tankfarms)

    # fleet voyage budget: vessels gravitate to the faster legs, so estimate
    # capability from the lower quartile of cross-kind travel times
    cross = travel[:n_loading, n_loading:]
    fast_leg = float(np.quantile(cross, 0.25)) if cross.size else float(t_hi)
    round_trip = max(2.0, 2.0 * fast_leg + 1.0)
    fleet_voyages = sum(max(1, int((horizon - 1) // round_trip)) for _ in vessels)
    deliveries = max(n_disch,
                     int(spec.utilization * fleet_voyages) - tank_loads)

    def _span() -> tuple[int, int]:
        length = int(rng.integers(round(horizon * 0.55), round(horizon * 0.85) + 1))
        a = int(rng.integers(1, max(2, horizon - length + 2)))
        return a, min(horizon, a + length - 1)

    cap_min = min(v.capacity for v in vessels)
    contracts = []
    cid = 0
    purchase_ports = [p.id for p in ports
                      if p.kind == PortKind.LOADING and p.id not in {t.port for t in tankfarms}]

    # sale contracts: one per discharging port, demand split evenly
    base, extra = divmod(deliveries, n_disch)
    for k, p in enumerate(pp for pp in ports if pp.kind == PortKind.DISCHARGING):
        d = base + (1 if k < extra else 0)
        contracts.append(Contract(cid, ContractKind.SALE, p.id,
                                  _contract_windows(horizon, d, _span())))
        cid += 1

    # purchase loads carry most of the demand; tankfarm lifts cover the rest
    if purchase_ports:
        purchase_total = max(len(purchase_ports),
                             round(0.8 * deliveries) - tank_loads)
        pbase, pextra = divmod(purchase_total, len(purchase_ports))
        for k, p in enumerate(purchase_ports):
            target = pbase + (1 if k < pextra else 0)
            contracts.append(Contract(cid, ContractKind.PURCHASE, p,
                                      _contract_windows(horizon, target, _span())))
            cid += 1
    contracts = tuple(contracts)

    # supply must cover demand with the configured shortfall margin; widen
    # purchase caps (cheapest lever) until it does
    def _volumes():
        supply = tank_supply
        demand = 0.0
        for c in contracts:
            full = c.ratabilities[0]
            if c.kind == ContractKind.PURCHASE:
                supply += full.ub * cap_max
            else:
                demand += full.ub * cap_min
        return supply, demand

    supply_vol, demand_vol = _volumes()
    if purchase_ports and supply_vol < demand_vol / (1.0 - DEMAND_SHORTFALL):
        deficit = demand_vol / (1.0 - DEMAND_SHORTFALL) - supply_vol
        bump = math.ceil(deficit / (cap_max * len(purchase_ports)))
        fixed = []
        for c in contracts:
            if c.kind == ContractKind.PURCHASE:
                full = c.ratabilities[0]
                widened = (RatabilityWindow(full.h1, full.h2, full.lb, full.ub + bump),
                           ) + c.ratabilities[1:]
                fixed.append(Contract(c.id, c.kind, c.port, widened))
            else:
                fixed.append(c)
        contracts = tuple(fixed)

    meta = {"seed": int(seed), "preset": preset, "version": FORMAT_VERSION,
            "demand_shortfall": DEMAND_SHORTFALL}
    inst = Instance(
        horizon=horizon,
        vessels=vessels,
        ports=ports,
        tankfarms=tankfarms,
        contracts=contracts,
        travel_time=travel_time,
        meta=meta,
    )
    problems = validate(inst)
    if problems:
        raise InstanceError("generator produced an invalid instance: " + "; ".join(problems))
    return inst


def supply_and_demand_volume(instance: Instance) -> tuple[float, float]:
    """Generator-side supply ledger: (total supply volume, total demand volume).

    Supply counts releasable tankfarm stock plus production plus the maximum
    purchasable volume; demand is the sale-side maximum at the smallest vessel.
    """
    cap_max = max((v.capacity for v in instance.vessels), default=0)
    cap_min = min((v.capacity for v in instance.vessels), default=0)
    supply = 0.0
    for t in instance.tankfarms:
        supply += (t.initial_inventory - t.lower_bound) + sum(t.production)
    demand = 0.0
    for c in instance.contracts:
        full = max((w for w in c.ratabilities if (w.h1, w.h2) == (1, instance.horizon)),
                   default=None, key=lambda w: w.ub)
        ub = full.ub if full is not None else max(w.ub for w in c.ratabilities)
        if c.kind == ContractKind.PURCHASE:
            supply += ub * cap_max
        else:
            demand += ub * cap_min
    return supply, demand


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_TOP_KEYS = ("meta", "horizon", "vessels", "ports", "tankfarms", "contracts", "travel_time")


def to_dict(instance: Instance) -> dict:
    return {
        "meta": dict(instance.meta),
        "horizon": instance.horizon,
        "vessels": [
            {"id": v.id, "capacity": v.capacity,
             "start_port": v.start_port, "end_port": v.end_port}
            for v in instance.vessels
        ],
        "ports": [
            {"id": p.id, "kind": p.kind.value, "berth_capacity": p.berth_capacity}
            for p in instance.ports
        ],
        "tankfarms": [
            {"id": t.id, "port": t.port, "initial_inventory": t.initial_inventory,
             "lower_bound": t.lower_bound, "upper_bound": t.upper_bound,
             "production": list(t.production)}
            for t in instance.tankfarms
        ],
        "contracts": [
            {"id": c.id, "kind": c.kind.value, "port": c.port,
             "ratabilities": [
                 {"h1": w.h1, "h2": w.h2, "lb": w.lb, "ub": w.ub}
                 for w in c.ratabilities
             ]}
            for c in instance.contracts
        ],
        "travel_time": [list(row) for row in instance.travel_time],
    }


def _require_keys(obj: dict, keys: Sequence[str], where: str) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise InstanceError(f"{where}: missing field(s) {missing}")
    unknown = [k for k in obj if k not in keys]
    if unknown:
        raise InstanceError(f"{where}: unknown field(s) {unknown}")


def from_dict(doc: dict) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    _require_keys(doc, _TOP_KEYS, "instance")
    meta = doc["meta"]
    if not isinstance(meta, dict) or "version" not in meta:
        raise InstanceError("meta: missing mandatory 'version' field")
    if meta["version"] != FORMAT_VERSION:
        raise InstanceError(
            f"meta: unsupported format version {meta['version']} (expected {FORMAT_VERSION})"
        )
    try:
        vessels = tuple(
            Vessel(int(v["id"]), int(v["capacity"]),
                   int(v["start_port"]), int(v["end_port"]))
            for v in doc["vessels"]
        )
        for i, v in enumerate(doc["vessels"]):
            _require_keys(v, ("id", "capacity", "start_port", "end_port"), f"vessels[{i}]")
        ports = []
        for i, p in enumerate(doc["ports"]):
            _require_keys(p, ("id", "kind", "berth_capacity"), f"ports[{i}]")
            ports.append(Port(int(p["id"]), PortKind(p["kind"]), int(p["berth_capacity"])))
        tanks = []
        for i, t in enumerate(doc["tankfarms"]):
            _require_keys(t, ("id", "port", "initial_inventory", "lower_bound",
                              "upper_bound", "production"), f"tankfarms[{i}]")
            tanks.append(
                Tankfarm(int(t["id"]), int(t["port"]), int(t["initial_inventory"]),
                         int(t["lower_bound"]), int(t["upper_bound"]),
                         tuple(int(x) for x in t["production"]))
            )
        contracts = []
        for i, c in enumerate(doc["contracts"]):
            _require_keys(c, ("id", "kind", "port", "ratabilities"), f"contracts[{i}]")
            windows = []
            for k, w in enumerate(c["ratabilities"]):
                _require_keys(w, ("h1", "h2", "lb", "ub"),
                              f"contracts[{i}].ratabilities[{k}]")
                windows.append(RatabilityWindow(int(w["h1"]), int(w["h2"]),
                                                int(w["lb"]), int(w["ub"])))
            contracts.append(Contract(int(c["id"]), ContractKind(c["kind"]),
                                      int(c["port"]), tuple(windows)))
        travel = tuple(tuple(int(x) for x in row) for row in doc["travel_time"])
        inst = Instance(
            horizon=int(doc["horizon"]),
            vessels=vessels,
            ports=tuple(ports),
            tankfarms=tuple(tanks),
            contracts=tuple(contracts),
            travel_time=travel,
            meta=dict(meta),
        )
    except InstanceError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"malformed instance document: {exc}") from exc
    return inst


def dumps(instance: Instance) -> str:
    """Canonical JSON text (stable key order, exact ints)."""
    return json.dumps(to_dict(instance), indent=1, sort_keys=False) + "\n"


def loads(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(
            f"parse failure at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    inst = from_dict(doc)
    problems = validate(inst)
    if problems:
        raise InstanceError("invalid instance: " + "; ".join(problems))
    return inst


def save(instance: Instance, path) -> None:
    problems = validate(instance)
    if problems:
        raise InstanceError("refusing to save invalid instance: " + "; ".join(problems))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(instance))


def load(path) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def instance_hash(instance: Instance) -> str:
    """Content hash binding schedules and samples to their instance."""
    return hashlib.sha256(dumps(instance).encode("utf-8")).hexdigest()

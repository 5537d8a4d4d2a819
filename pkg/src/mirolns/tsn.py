"""Per-vessel time-space networks.

Nodes are (port, period) positions, arcs are sailing legs or one-period
waits.  Networks are pruned to nodes that lie on at least one path from the
vessel's start position at period 1 to its end port at the final period, so
any flow-feasible 0/1 arc selection traces exactly one such path.

Internally everything is stored in flat numpy arrays ordered canonically:
nodes by (period, port position), arcs by (from period, from port, kind,
to port), with sailing before waiting.  Arc ids index into these arrays and
are the currency used by schedules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instance import Instance, PortKind

SAILING = "sailing"
WAITING = "waiting"


class TsnInfeasibleError(Exception):
    """No start-to-end path exists within the horizon."""


@dataclass(frozen=True)
class TsnNode:
    port: int      # port id
    period: int


@dataclass(frozen=True)
class TsnArc:
    from_node: TsnNode
    to_node: TsnNode
    kind: str


class TimeSpaceNetwork:
    """Pruned vessel network with CSR-style node/arc adjacency."""

    def __init__(self, vessel: int, port_ids: np.ndarray,
                 node_port: np.ndarray, node_period: np.ndarray,
                 arc_from: np.ndarray, arc_to: np.ndarray, arc_sailing: np.ndarray,
                 source: int, sink: int):
        self.vessel = vessel
        self._port_ids = port_ids
        self.node_port_pos = node_port          # position into the instance port list
        self.node_period = node_period
        self.arc_from = arc_from                # node index per arc
        self.arc_to = arc_to
        self.arc_sailing = arc_sailing          # bool per arc
        self.source = source                    # node index of (start port, 1)
        self.sink = sink                        # node index of (end port, horizon)

        n = len(node_period)
        # arcs are already sorted by from-node, so out-stars are slices
        self._out_start = np.searchsorted(arc_from, np.arange(n + 1))
        order = np.argsort(arc_to, kind="stable")
        self._in_order = order.astype(np.int64)
        self._in_start = np.searchsorted(arc_to[order], np.arange(n + 1))
        self._node_index = {
            (int(node_port[i]), int(node_period[i])): i for i in range(n)
        }

    @property
    def n_nodes(self) -> int:
        return len(self.node_period)

    @property
    def n_arcs(self) -> int:
        return len(self.arc_from)

    def node(self, i: int) -> TsnNode:
        return TsnNode(int(self._port_ids[self.node_port_pos[i]]), int(self.node_period[i]))

    def arc(self, a: int) -> TsnArc:
        return TsnArc(self.node(int(self.arc_from[a])), self.node(int(self.arc_to[a])),
                      SAILING if self.arc_sailing[a] else WAITING)

    @property
    def nodes(self) -> list[TsnNode]:
        return [self.node(i) for i in range(self.n_nodes)]

    @property
    def arcs(self) -> list[TsnArc]:
        return [self.arc(a) for a in range(self.n_arcs)]

    def node_id(self, port_pos: int, period: int) -> int:
        try:
            return self._node_index[(port_pos, period)]
        except KeyError:
            raise KeyError(f"node (port_pos={port_pos}, period={period}) not in network")

    def arcs_leaving(self, node: int) -> np.ndarray:
        if not 0 <= node < self.n_nodes:
            raise KeyError(f"unknown node index {node}")
        return np.arange(self._out_start[node], self._out_start[node + 1])

    def arcs_entering(self, node: int) -> np.ndarray:
        if not 0 <= node < self.n_nodes:
            raise KeyError(f"unknown node index {node}")
        return self._in_order[self._in_start[node]:self._in_start[node + 1]]

    def export_edges(self, fh) -> None:
        """Debug dump: one arc per line, ports as ids, 1-based periods."""
        for a in range(self.n_arcs):
            arc = self.arc(a)
            fh.write(f"{arc.from_node.port},{arc.from_node.period},"
                     f"{arc.to_node.port},{arc.to_node.period},{arc.kind}\n")


def build(instance: Instance, vessel: int, allow_reposition: bool = False) -> TimeSpaceNetwork:
    """Build the pruned time-space network for one vessel.

    Sailing arcs connect loading ports to discharging ports and back; with
    `allow_reposition` they also connect same-kind port pairs (such legs then
    count as loads/deliveries through the indicator definitions, so the
    default keeps them out).  Raises :class:`TsnInfeasibleError` when the end
    port cannot be reached from the start position within the horizon.
    """
    vmap = instance.vessel_index()
    if vessel not in vmap:
        raise KeyError(f"unknown vessel id {vessel}")
    vdata = instance.vessels[vmap[vessel]]
    pmap = instance.port_index()
    horizon = instance.horizon
    n_ports = len(instance.ports)
    start = pmap[vdata.start_port]
    end = pmap[vdata.end_port]
    travel = np.asarray(instance.travel_time, dtype=np.int64)
    kinds = np.array([p.kind == PortKind.LOADING for p in instance.ports])

    def sail_ok(j: int, k: int) -> bool:
        if j == k:
            return False
        if allow_reposition:
            return True
        return kinds[j] != kinds[k]

    # forward reachability from (start, 1); reach[j, h] for h in 1..horizon
    reach = np.zeros((n_ports, horizon + 1), dtype=bool)
    reach[start, 1] = True
    for h in range(1, horizon):
        live = np.nonzero(reach[:, h])[0]
        for j in live:
            reach[j, h + 1] = True
            for k in range(n_ports):
                if sail_ok(j, k) and h + travel[j, k] <= horizon:
                    reach[k, h + travel[j, k]] = True

    # backward co-reachability to (end, horizon)
    co = np.zeros((n_ports, horizon + 1), dtype=bool)
    co[end, horizon] = True
    for h in range(horizon - 1, 0, -1):
        co[:, h] = co[:, h + 1].copy()
        for j in range(n_ports):
            if co[j, h]:
                continue
            for k in range(n_ports):
                if sail_ok(j, k) and h + travel[j, k] <= horizon and co[k, h + travel[j, k]]:
                    co[j, h] = True
                    break

    keep = reach & co
    if not keep[start, 1] or not keep[end, horizon]:
        raise TsnInfeasibleError(
            f"vessel {vessel}: end port {vdata.end_port} unreachable from start "
            f"port {vdata.start_port} within horizon {horizon}"
        )

    # canonical node order: by (period, port position)
    ports_k, periods_k = np.nonzero(keep)
    order = np.lexsort((ports_k, periods_k))
    node_port = ports_k[order].astype(np.int64)
    node_period = periods_k[order].astype(np.int64)
    node_of = -np.ones((n_ports, horizon + 2), dtype=np.int64)
    node_of[node_port, node_period] = np.arange(len(node_port))

    # arcs grouped per from-node in canonical order (sailing by to-port, then wait)
    from_list: list[np.ndarray] = []
    to_list: list[np.ndarray] = []
    sail_list: list[np.ndarray] = []
    for i in range(len(node_port)):
        j = int(node_port[i])
        h = int(node_period[i])
        tos = []
        for k in range(n_ports):
            if sail_ok(j, k):
                h2 = h + int(travel[j, k])
                if h2 <= horizon and keep[k, h2]:
                    tos.append(node_of[k, h2])
        sail_n = len(tos)
        if h + 1 <= horizon and keep[j, h + 1]:
            tos.append(node_of[j, h + 1])
        if tos:
            from_list.append(np.full(len(tos), i, dtype=np.int64))
            to_list.append(np.asarray(tos, dtype=np.int64))
            flags = np.zeros(len(tos), dtype=bool)
            flags[:sail_n] = True
            sail_list.append(flags)

    if from_list:
        arc_from = np.concatenate(from_list)
        arc_to = np.concatenate(to_list)
        arc_sailing = np.concatenate(sail_list)
    else:
        arc_from = np.zeros(0, dtype=np.int64)
        arc_to = np.zeros(0, dtype=np.int64)
        arc_sailing = np.zeros(0, dtype=bool)

    port_ids = np.asarray([p.id for p in instance.ports], dtype=np.int64)
    return TimeSpaceNetwork(
        vessel=vessel, port_ids=port_ids,
        node_port=node_port, node_period=node_period,
        arc_from=arc_from, arc_to=arc_to, arc_sailing=arc_sailing,
        source=int(node_of[start, 1]), sink=int(node_of[end, horizon]),
    )


def arcs_entering(net: TimeSpaceNetwork, node: int) -> list[int]:
    return [int(a) for a in net.arcs_entering(node)]


def arcs_leaving(net: TimeSpaceNetwork, node: int) -> list[int]:
    return [int(a) for a in net.arcs_leaving(node)]


# ---------------------------------------------------------------------------
# path helpers
# ---------------------------------------------------------------------------

def trace_path(net: TimeSpaceNetwork, arc_ids) -> list[int]:
    """Validate a source-to-sink arc sequence; returns the node sequence."""
    node = net.source
    seq = [node]
    for a in arc_ids:
        a = int(a)
        if not 0 <= a < net.n_arcs:
            raise ValueError(f"vessel {net.vessel}: arc id {a} out of range")
        if int(net.arc_from[a]) != node:
            raise ValueError(
                f"vessel {net.vessel}: path not contiguous at arc {a} "
                f"(expected from-node {node}, got {int(net.arc_from[a])})"
            )
        node = int(net.arc_to[a])
        seq.append(node)
    if node != net.sink:
        raise ValueError(f"vessel {net.vessel}: path ends at node {node}, not the sink")
    return seq


def waiting_only_path(net: TimeSpaceNetwork) -> list[int] | None:
    """The all-waiting path if the vessel may idle at its start port."""
    path = []
    node = net.source
    while node != net.sink:
        nxt = -1
        for a in net.arcs_leaving(node):
            if not net.arc_sailing[a]:
                nxt = int(a)
                break
        if nxt < 0:
            return None
        path.append(nxt)
        node = int(net.arc_to[nxt])
    return path


def fewest_sailing_path(net: TimeSpaceNetwork) -> list[int]:
    """Source-to-sink path minimizing sailing legs, ties by canonical arc order."""
    INF = np.iinfo(np.int64).max
    dist = np.full(net.n_nodes, INF, dtype=np.int64)
    pred = np.full(net.n_nodes, -1, dtype=np.int64)
    dist[net.source] = 0
    # nodes are topologically ordered by period, so one forward sweep suffices
    for i in range(net.n_nodes):
        if dist[i] == INF:
            continue
        for a in net.arcs_leaving(i):
            w = 1 if net.arc_sailing[a] else 0
            j = int(net.arc_to[a])
            if dist[i] + w < dist[j]:
                dist[j] = dist[i] + w
                pred[j] = a
    if dist[net.sink] == INF:
        raise TsnInfeasibleError(f"vessel {net.vessel}: sink unreachable in pruned network")
    path = []
    node = net.sink
    while node != net.source:
        a = int(pred[node])
        path.append(a)
        node = int(net.arc_from[a])
    path.reverse()
    return path


def enumerate_paths(net: TimeSpaceNetwork, cap: int) -> list[tuple[int, ...]] | None:
    """All source-to-sink paths in canonical order, or None once `cap` is hit."""
    out: list[tuple[int, ...]] = []
    stack: list[int] = []

    def rec(node: int) -> bool:
        if node == net.sink:
            out.append(tuple(stack))
            return len(out) <= cap
        for a in net.arcs_leaving(node):
            stack.append(int(a))
            ok = rec(int(net.arc_to[a]))
            stack.pop()
            if not ok:
                return False
        return True

    if rec(net.source):
        return out
    return None

"""Data/resource/reachability views: G-KRRM gathering, MS-DRRT and QS-QRRT
extraction, and the staleness policy that keeps them honest."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .engine import CP, DP, Engine, Message, Unreachable, transfer_time
from .network import (COMPUTE, DATA, MPVU, DataInventory, InventoryEntry, Network, NodeDescriptor,
                      NoPath, aggregate_abstract_terminal)


class NoCandidates(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeSizes:
    probe: int = 256
    response: int = 512
    per_entry: int = 64

    def response_for(self, inventory: DataInventory) -> int:
        return self.response + self.per_entry * len(inventory.entries)


@dataclass(frozen=True)
class NodeRecord:
    descriptor: NodeDescriptor
    inventory: DataInventory
    snapshot_time: float


@dataclass
class GKrrm:
    records: dict[str, NodeRecord]
    links: tuple
    snapshot_time: float
    down: frozenset = frozenset()
    origin: Optional[str] = None
    cp_bytes: int = 0
    ready_at: float = 0.0

    def __contains__(self, node):
        return node in self.records

    def node_ids(self):
        return sorted(self.records)


@dataclass(frozen=True)
class Edge:
    time: float
    hops: int
    latency: float


@dataclass(frozen=True)
class DataCandidate:
    id: str
    relevance: float
    entries: tuple[InventoryEntry, ...]
    location: str
    trust: float


@dataclass
class MsDrrt:
    model_id: str
    owner: str
    size_bytes: int
    topics: tuple[str, ...]
    data: dict[str, DataCandidate]
    compute: dict[str, float]
    rendezvous: dict[str, str]
    mpvus: dict[str, frozenset]
    edges: dict[tuple[str, str], Edge]
    snapshot_time: float
    trust_floor: float
    locations: dict[str, str] = field(default_factory=dict)
    members: dict[str, tuple] = field(default_factory=dict)

    def node_ids(self) -> set[str]:
        ids = set(self.data) | set(self.compute) | set(self.mpvus)
        for m in self.members.values():
            ids |= set(m)
        return ids

    def edge(self, a: str, b: str) -> Optional[Edge]:
        if a == b:
            return Edge(0.0, 0, 0.0)
        return self.edges.get((a, b))


@dataclass(frozen=True)
class ReplicaRecord:
    model_id: str
    replica_id: str
    host: str
    accuracy: float
    service_time: float
    capacity: float
    queue_length: int
    path_latency: float
    up_time: float
    down_time: float
    down_latency: float


@dataclass
class QsQrrt:
    query_id: str
    topic: str
    replicas: tuple[ReplicaRecord, ...]
    snapshot_time: float

    def node_ids(self) -> set[str]:
        return {r.host for r in self.replicas}


@dataclass(frozen=True)
class StalenessPolicy:
    max_age: float = 60.0
    periodic_interval: Optional[float] = None
    on_churn: bool = True
    pre_decision: bool = True

    def __post_init__(self):
        if not self.max_age > 0:
            raise ValueError("max_age must be positive")


# gathering


class Gather:
    """One G-KRRM collection round driven by CP probe/response messages.

    ``relays`` maps a region gateway to the member nodes it probes on the
    origin's behalf; the gateway then forwards one summary message whose size
    is the sum of the responses it collected.
    """

    def __init__(self, net: Network, engine: Engine, origin: str, scope: Iterable[str],
                 on_done: Callable[[GKrrm], None], sizes: ProbeSizes = ProbeSizes(),
                 relays: Optional[dict[str, list[str]]] = None, category: str = "topology"):
        self.net, self.engine, self.origin = net, engine, origin
        self.sizes, self.category, self.on_done = sizes, category, on_done
        self.t0 = engine.now
        self.down0 = net.down()
        self.records: dict[str, NodeRecord] = {}
        self.cp_bytes = 0
        self.pending = 0
        self.done = False
        self.result: Optional[GKrrm] = None
        relays = relays or {}
        relayed = {n for ms in relays.values() for n in ms}
        for node in sorted(set(scope) - relayed):
            self._probe(origin, node, self._collect_direct)
        for gw in sorted(relays):
            self._relay(gw, sorted(relays[gw]))
        if self.pending == 0:
            engine.after(0.0, "gather_done", origin, {"records": 0}, lambda ev: self._finish())

    def _send(self, src, dst, size, on_arrival, on_failure=None):
        try:
            route = self.net.route_path(src, dst, plane=CP)
            self.engine.transmit(Message(src, dst, CP, size, category=self.category), list(route.links),
                                 on_arrival, on_failure)
        except (NoPath, Unreachable):
            return False
        self.cp_bytes += size * route.hops
        return True

    def _read(self, node) -> NodeRecord:
        return NodeRecord(self.net.nodes[node], self.net.inventory(node), self.engine.now)

    def _probe(self, src, node, collect):
        if node == src:
            if self.net.is_reachable(node):
                collect(self._read(node))
            return
        self.pending += 1

        def at_node(msg, node=node, src=src):
            rec = self._read(node)
            size = self.sizes.response_for(rec.inventory)
            if not self._send(node, src, size, lambda m: self._got(collect, rec), self._lost):
                self._lost(None)

        if not self._send(src, node, self.sizes.probe, at_node, self._lost):
            self.pending -= 1

    def _relay(self, gw, members):
        """Origin asks the regional gateway, which probes its members and replies once."""
        collected: list[NodeRecord] = []
        state = {"waiting": 0, "sent": False}

        def reply():
            if state["sent"]:
                return
            state["sent"] = True
            size = sum(self.sizes.response_for(r.inventory) for r in collected) or self.sizes.probe
            recs = list(collected)

            def landed(msg):
                for r in recs:
                    self.records[r.descriptor.id] = r
                self._tick()

            if not self._send(gw, self.origin, size, landed, self._lost):
                self._lost(None)

        def member_done(rec=None):
            if rec is not None:
                collected.append(rec)
            state["waiting"] -= 1
            if state["waiting"] == 0:
                reply()

        def at_gateway(msg):
            for m in members:
                if m == gw:
                    if self.net.is_reachable(m):
                        collected.append(self._read(m))
                    continue
                state["waiting"] += 1
                ok = self._send(gw, m, self.sizes.probe,
                                lambda msg, m=m: self._member_answer(gw, m, member_done),
                                lambda msg: member_done())
                if not ok:
                    state["waiting"] -= 1
            if state["waiting"] == 0:
                reply()

        self.pending += 1
        if gw == self.origin:
            # home region: the origin is its own regional DCC
            self.pending -= 1
            for m in members:
                self._probe(gw, m, self._collect_direct)
            return
        if not self._send(self.origin, gw, self.sizes.probe, at_gateway, self._lost):
            self.pending -= 1

    def _member_answer(self, gw, node, member_done):
        rec = self._read(node)
        size = self.sizes.response_for(rec.inventory)
        if not self._send(node, gw, size, lambda m: member_done(rec), lambda m: member_done()):
            member_done()

    def _collect_direct(self, rec: NodeRecord):
        self.records[rec.descriptor.id] = rec

    def _got(self, collect, rec):
        collect(rec)
        self._tick()

    def _lost(self, msg):
        self._tick()

    def _tick(self):
        self.pending -= 1
        if self.pending == 0:
            self._finish()

    def _finish(self):
        if self.done:
            return
        self.done = True
        self.result = GKrrm(
            records=dict(sorted(self.records.items())),
            links=tuple(self.net.links),
            snapshot_time=min((r.snapshot_time for r in self.records.values()), default=self.t0),
            down=self.down0 | frozenset(n for n in self.net.nodes if not self.net.is_reachable(n)),
            origin=self.origin,
            cp_bytes=self.cp_bytes,
            ready_at=self.engine.now,
        )
        self.on_done(self.result)


def gather_gkrrm(net: Network, engine: Engine, scope=None, origin: Optional[str] = None,
                 sizes: ProbeSizes = ProbeSizes(), relays=None, category="topology") -> GKrrm:
    """Run a gather round to completion on an otherwise idle engine."""
    if scope is None:
        scope = list(net.nodes)
    if origin is None:
        origin = sorted(net.nodes)[0]
    g = Gather(net, engine, origin, scope, lambda r: None, sizes, relays, category)
    engine.run(until=lambda: g.done)
    return g.result


# extraction


def relevance(entries: Iterable[InventoryEntry], topics: Iterable[str]) -> float:
    topics = set(topics)
    return sum(e.volume * e.quality for e in entries if e.topic in topics)


def _records_with_ats(g: GKrrm, net: Network, aggregate: Iterable[str]):
    """Return (descriptors, inventories, locations, members) with the listed ATs collapsed."""
    descs = {i: r.descriptor for i, r in g.records.items()}
    invs = {i: r.inventory for i, r in g.records.items()}
    locations = {i: i for i in descs}
    members = {}
    for at_id in sorted(aggregate):
        at = net.ats[at_id]
        present = [m for m in at.members if m in descs]
        for m in at.members:
            descs.pop(m, None)
            invs.pop(m, None)
            locations.pop(m, None)
        if not present:
            continue
        desc, inv = aggregate_abstract_terminal(at, {m: g.records[m].descriptor for m in present},
                                                {m: g.records[m].inventory for m in present})
        descs[at_id], invs[at_id] = desc, inv
        reach = [m for m in sorted(present) if g.records[m].descriptor.reachable]
        locations[at_id] = reach[0] if reach else sorted(present)[0]
        members[at_id] = tuple(sorted(present))
    return descs, invs, locations, members


def extract_ms_drrt(model, g: GKrrm, trust_floor: float, net: Network, aggregate=(), anchors=()) -> MsDrrt:
    """Filter the G-KRRM down to what one model can use.

    ``anchors`` are extra locations (e.g. where a model currently sits) that
    need transfer edges without being candidates themselves.
    """
    topics = tuple(sorted(model.requirements))
    descs, invs, locations, members = _records_with_ats(g, net, aggregate)
    data, compute, mpvus = {}, {}, {}
    for nid in sorted(descs):
        d = descs[nid]
        if not d.reachable:
            continue
        if d.kind in (DATA, COMPUTE) and d.trust >= trust_floor and d.compute_capacity > 0:
            compute[nid] = d.compute_capacity
        if d.kind == DATA and d.trust >= trust_floor:
            entries = tuple(e for e in invs[nid].entries if e.topic in topics and e.volume > 0)
            rel = relevance(entries, topics)
            if rel > 0:
                data[nid] = DataCandidate(nid, rel, entries, locations[nid], d.trust)
        if d.kind == MPVU:
            covered = frozenset(e.topic for e in invs[nid].entries) & set(topics)
            if covered:
                mpvus[nid] = covered
    if not data:
        raise NoCandidates(f"model {model.id}: no data node qualifies")
    nodes = sorted(set(data) | set(compute) | set(mpvus) | {model.owner} | set(anchors))
    loc = lambda n: locations.get(n, n)
    edges = {}
    for a in nodes:
        for b in nodes:
            if a == b:
                continue
            try:
                route = net.route_path(loc(a), loc(b), plane=DP, down=g.down)
            except NoPath:
                continue
            edges[(a, b)] = Edge(transfer_time(route.links, model.size_bytes), route.hops, route.latency)
    rendezvous = {}
    for d in sorted(data):
        if d in compute:
            rendezvous[d] = d
            continue
        options = [(edges[(d, c)].time, c) for c in compute if (d, c) in edges]
        if options:
            rendezvous[d] = min(options)[1]
    for d in [d for d in data if d not in rendezvous]:
        del data[d]
    if not data:
        raise NoCandidates(f"model {model.id}: no data node has a reachable rendezvous")
    return MsDrrt(model.id, model.owner, model.size_bytes, topics, data, compute, rendezvous, mpvus,
                  edges, g.snapshot_time, trust_floor, locations={k: loc(k) for k in nodes}, members=members)


def extract_qs_qrrt(query, g: GKrrm, deployments, net: Network, now: Optional[float] = None) -> QsQrrt:
    """Replicas that can answer ``query.topic`` on reachable hosts."""
    dest = query.destination or query.owner
    out = []
    for rep in sorted(deployments, key=lambda r: r.replica_id):
        if not rep.active or query.topic not in rep.accuracy:
            continue
        rec = g.records.get(rep.host)
        if rec is None or not rec.descriptor.reachable:
            continue
        try:
            up = net.route_path(query.owner, rep.host, plane=DP, down=g.down)
            down = net.route_path(rep.host, dest, plane=DP, down=g.down)
        except NoPath:
            continue
        out.append(ReplicaRecord(
            model_id=rep.model_id, replica_id=rep.replica_id, host=rep.host,
            accuracy=rep.accuracy[query.topic], service_time=rep.service_time,
            capacity=1.0 / rep.service_time, queue_length=rep.committed,
            path_latency=up.latency, up_time=transfer_time(up.links, query.request_bytes),
            down_time=transfer_time(down.links, query.response_bytes), down_latency=down.latency))
    return QsQrrt(query.id, query.topic, tuple(out), g.snapshot_time if now is None else now)


# staleness


def is_stale(view, policy: StalenessPolicy, now: float, touched: Iterable[str] = ()) -> bool:
    if now - view.snapshot_time > policy.max_age:
        return True
    return policy.on_churn and bool(set(touched) & set(view.node_ids()))


def refresh_if_stale(view, policy: StalenessPolicy, now: float, regenerate: Callable[[], object],
                     touched: Iterable[str] = ()):
    """Return ``view`` unchanged, or a regenerated one if it aged out or churn hit it."""
    if is_stale(view, policy, now, touched):
        return regenerate()
    return view


class DrrtAdapter:
    """Tracks churn since each snapshot and counts refreshes."""

    def __init__(self, net: Network, policy: StalenessPolicy):
        self.net, self.policy = net, policy
        self.churned: list[tuple[float, str]] = []
        self.refreshes = 0
        self._clock = lambda: 0.0
        net.subscribers.append(self._on_churn)

    def bind_clock(self, clock: Callable[[], float]):
        self._clock = clock

    def _on_churn(self, node, reachable):
        self.churned.append((self._clock(), node))

    def touched_since(self, t: float) -> set[str]:
        return {n for (tc, n) in self.churned if tc >= t}

    def stale(self, view, now: float) -> bool:
        return is_stale(view, self.policy, now, self.touched_since(view.snapshot_time))

"""Terminal layer: nodes, links, K-AS regions, abstract terminals, churn."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

from .engine import CP, DP

DATA, COMPUTE, MPVU, MDFP, USER = "data", "compute", "mpvu", "mdfp", "user"
NODE_KINDS = (DATA, COMPUTE, MPVU, MDFP, USER)

CENTRALIZED, DISTRIBUTED, HIERARCHICAL, NON_STANDALONE = (
    "centralized", "distributed", "hierarchical", "non_standalone")
CONTROL_MODES = (CENTRALIZED, DISTRIBUTED, HIERARCHICAL, NON_STANDALONE)


class ValidationError(ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NoPath(RuntimeError):
    pass


class EmptyAT(ValueError):
    pass


@dataclass(frozen=True)
class InventoryEntry:
    topic: str
    volume: float
    quality: float
    freshness_age: float = 0.0


@dataclass(frozen=True)
class DataInventory:
    owner: str
    entries: tuple[InventoryEntry, ...] = ()

    def topics(self) -> dict[str, InventoryEntry]:
        return {e.topic: e for e in self.entries}


@dataclass(frozen=True)
class NodeDescriptor:
    id: str
    kind: str
    kas_id: str
    trust: float = 1.0
    compute_capacity: float = 0.0
    storage: float = 0.0
    reachable: bool = True
    energy: Optional[float] = None


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    latency: float
    bandwidth: float
    planes: frozenset = frozenset((CP, DP))

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass(frozen=True)
class KasRegion:
    id: str
    members: tuple[str, ...]
    gateway: str
    control_mode: str = CENTRALIZED
    delegate_kas: Optional[str] = None


@dataclass(frozen=True)
class AbstractTerminal:
    id: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class ChurnEntry:
    at: float
    node: str
    reachable: bool


@dataclass(frozen=True)
class Route:
    nodes: tuple[str, ...]
    links: tuple[Link, ...]
    latency: float

    @property
    def hops(self) -> int:
        return len(self.links)


def check_network(nodes, links, regions, ats=(), churn=()) -> list[str]:
    """Semantic checks that need cross-references. Returns every problem found."""
    errors = []
    ids = [n.id for n in nodes]
    seen = set()
    for i in ids:
        if i in seen:
            errors.append(f"duplicate node id {i!r}")
        seen.add(i)
    by_id = {n.id: n for n in nodes}
    region_ids = set()
    for r in regions:
        if r.id in region_ids:
            errors.append(f"duplicate region id {r.id!r}")
        region_ids.add(r.id)
    for n in nodes:
        if n.kind not in NODE_KINDS:
            errors.append(f"node {n.id!r}: unknown kind {n.kind!r}")
        if n.kas_id not in region_ids:
            errors.append(f"node {n.id!r}: kas {n.kas_id!r} is not a declared region")
        if not 0.0 <= n.trust <= 1.0:
            errors.append(f"node {n.id!r}: trust {n.trust} outside [0, 1]")
        if n.compute_capacity < 0:
            errors.append(f"node {n.id!r}: negative compute_capacity")
    gateways = {}
    for r in regions:
        if r.control_mode not in CONTROL_MODES:
            errors.append(f"region {r.id!r}: unknown control mode {r.control_mode!r}")
        if r.control_mode == NON_STANDALONE:
            if r.delegate_kas is None:
                errors.append(f"region {r.id!r}: non_standalone needs a delegate")
            elif r.delegate_kas not in region_ids or r.delegate_kas == r.id:
                errors.append(f"region {r.id!r}: bad delegate {r.delegate_kas!r}")
        if r.gateway not in by_id:
            errors.append(f"region {r.id!r}: gateway {r.gateway!r} is not a node")
        elif by_id[r.gateway].kas_id != r.id:
            errors.append(f"region {r.id!r}: gateway {r.gateway!r} is not a member")
        gateways[r.id] = r.gateway
    pairs = set()
    for l in links:
        for end in (l.a, l.b):
            if end not in by_id:
                errors.append(f"link {l.a}-{l.b}: unknown endpoint {end!r}")
        if l.a == l.b:
            errors.append(f"link {l.a}-{l.b}: self loop")
        if l.latency < 0:
            errors.append(f"link {l.a}-{l.b}: negative latency")
        if not l.bandwidth > 0:
            errors.append(f"link {l.a}-{l.b}: bandwidth must be positive")
        if not l.planes or not set(l.planes) <= {CP, DP}:
            errors.append(f"link {l.a}-{l.b}: planes must be a nonempty subset of cp/dp")
        if l.key in pairs:
            errors.append(f"link {l.a}-{l.b}: duplicate")
        pairs.add(l.key)
        if l.a in by_id and l.b in by_id:
            ka, kb = by_id[l.a].kas_id, by_id[l.b].kas_id
            if ka != kb and not (gateways.get(ka) == l.a and gateways.get(kb) == l.b):
                errors.append(f"link {l.a}-{l.b}: inter-K-AS links must join gateways")
    used = {}
    for at in ats:
        if not at.members:
            errors.append(f"abstract terminal {at.id!r}: no members")
        kas = set()
        for m in at.members:
            if m not in by_id:
                errors.append(f"abstract terminal {at.id!r}: unknown member {m!r}")
                continue
            kas.add(by_id[m].kas_id)
            if m in used:
                errors.append(f"node {m!r} belongs to abstract terminals {used[m]!r} and {at.id!r}")
            used[m] = at.id
        if len(kas) > 1:
            errors.append(f"abstract terminal {at.id!r} spans regions {sorted(kas)}")
        if at.id in by_id:
            errors.append(f"abstract terminal {at.id!r} collides with a node id")
    last = None
    for c in churn:
        if c.node not in by_id:
            errors.append(f"churn entry at {c.at}: unknown node {c.node!r}")
        if last is not None and c.at < last:
            errors.append(f"churn entry at {c.at}: script not sorted by time")
        last = c.at
    return errors


class Network:
    """Connectivity graph plus live reachability state."""

    def __init__(self, nodes, links, regions, inventories=None, ats=(), churn=()):
        errors = check_network(nodes, links, regions, ats, churn)
        if errors:
            raise ValidationError(errors)
        self.nodes: dict[str, NodeDescriptor] = {n.id: n for n in nodes}
        self.links: list[Link] = list(links)
        self.regions: dict[str, KasRegion] = {}
        members = {r.id: [] for r in regions}
        for n in nodes:
            members[n.kas_id].append(n.id)
        for r in regions:
            self.regions[r.id] = replace(r, members=tuple(sorted(members[r.id])))
        self.inventories: dict[str, DataInventory] = dict(inventories or {})
        self.ats: dict[str, AbstractTerminal] = {a.id: a for a in ats}
        self.at_of = {m: a.id for a in ats for m in a.members}
        self.churn: list[ChurnEntry] = list(churn)
        self.adj: dict[str, list[Link]] = {n: [] for n in self.nodes}
        for l in self.links:
            self.adj[l.a].append(l)
            self.adj[l.b].append(l)
        self.subscribers: list[Callable[[str, bool], None]] = []
        self._route_cache: dict = {}

    # state

    def is_reachable(self, node: str) -> bool:
        return self.nodes[node].reachable

    def down(self) -> frozenset:
        return frozenset(n for n, d in self.nodes.items() if not d.reachable)

    def region_of(self, node: str) -> KasRegion:
        return self.regions[self.nodes[node].kas_id]

    def gateway_of(self, node: str) -> str:
        return self.region_of(node).gateway

    def inventory(self, node: str) -> DataInventory:
        return self.inventories.get(node, DataInventory(node))

    def apply_churn(self, entry: ChurnEntry) -> bool:
        """Set reachability; notify subscribers only on an actual change."""
        node = self.nodes[entry.node]
        if node.reachable == entry.reachable:
            return False
        self.nodes[entry.node] = replace(node, reachable=entry.reachable)
        for cb in list(self.subscribers):
            cb(entry.node, entry.reachable)
        return True

    # routing

    def _dijkstra(self, src, dst, allowed, plane, down, link_ok):
        if src in down or dst in down:
            raise NoPath(f"{src} -> {dst}: endpoint unreachable")
        heap = [(0.0, (src,), ())]
        settled = set()
        while heap:
            dist, path, links = heapq.heappop(heap)
            node = path[-1]
            if node in settled:
                continue
            settled.add(node)
            if node == dst:
                return Route(path, links, dist)
            for l in self.adj[node]:
                nxt = l.other(node)
                if nxt in settled or nxt in down or nxt not in allowed:
                    continue
                if plane is not None and plane not in l.planes:
                    continue
                if not link_ok(l):
                    continue
                heapq.heappush(heap, (dist + l.latency, path + (nxt,), links + (l,)))
        raise NoPath(f"{src} -> {dst}")

    def route_path(self, src: str, dst: str, plane: Optional[str] = None,
                   down: Optional[Iterable[str]] = None) -> Route:
        """Minimum-latency path that crosses regions only through gateways.

        Ties go to the lexicographically smallest node-id sequence. ``down``
        overrides the live reachability state (used for snapshot views).
        """
        for n in (src, dst):
            if n not in self.nodes:
                raise KeyError(n)
        down = self.down() if down is None else frozenset(down)
        key = (src, dst, plane, down)
        if key in self._route_cache:
            return self._route_cache[key]
        if src in down or dst in down:
            raise NoPath(f"{src} -> {dst}: endpoint unreachable")
        if src == dst:
            route = Route((src,), (), 0.0)
        else:
            r_src, r_dst = self.nodes[src].kas_id, self.nodes[dst].kas_id
            if r_src == r_dst:
                region = set(self.regions[r_src].members)
                route = self._dijkstra(src, dst, region, plane, down, lambda l: True)
            else:
                g_src, g_dst = self.regions[r_src].gateway, self.regions[r_dst].gateway
                gws = {r.gateway for r in self.regions.values()}
                a = self._dijkstra(src, g_src, set(self.regions[r_src].members), plane, down, lambda l: True)
                b = self._dijkstra(g_src, g_dst, gws, plane, down,
                                   lambda l: self.nodes[l.a].kas_id != self.nodes[l.b].kas_id)
                c = self._dijkstra(g_dst, dst, set(self.regions[r_dst].members), plane, down, lambda l: True)
                route = Route(a.nodes + b.nodes[1:] + c.nodes[1:], a.links + b.links + c.links,
                              a.latency + b.latency + c.latency)
        self._route_cache[key] = route
        return route

    def hop_distances(self, center: str, down: Optional[Iterable[str]] = None) -> dict[str, int]:
        """BFS hop counts from ``center`` over reachable nodes."""
        down = self.down() if down is None else frozenset(down)
        if center in down:
            return {}
        dist = {center: 0}
        frontier = [center]
        while frontier:
            nxt = []
            for node in sorted(frontier):
                for l in self.adj[node]:
                    o = l.other(node)
                    if o not in dist and o not in down:
                        dist[o] = dist[node] + 1
                        nxt.append(o)
            frontier = nxt
        return dist


def aggregate_abstract_terminal(at: AbstractTerminal, descriptors: dict, inventories: dict):
    """Collapse an AT into one descriptor and one merged inventory.

    ``descriptors`` maps member id -> NodeDescriptor; members missing from it
    count as unreachable (they did not answer a probe).
    """
    if not at.members:
        raise EmptyAT(at.id)
    present = [descriptors[m] for m in at.members if m in descriptors]
    if not present:
        raise EmptyAT(at.id)
    kas = {d.kas_id for d in present}
    if len(kas) != 1:
        raise ValidationError(f"abstract terminal {at.id!r} spans regions {sorted(kas)}")
    if len(present) == 1 and len(at.members) == 1:
        d = present[0]
        inv = inventories.get(d.id, DataInventory(d.id))
        return replace(d, id=at.id), DataInventory(at.id, inv.entries)
    kinds = {d.kind for d in present}
    kind = DATA if DATA in kinds else sorted(kinds)[0]
    energies = [d.energy for d in present if d.energy is not None]
    desc = NodeDescriptor(
        id=at.id,
        kind=kind,
        kas_id=kas.pop(),
        trust=min(d.trust for d in present),
        compute_capacity=sum(d.compute_capacity for d in present),
        storage=sum(d.storage for d in present),
        reachable=any(d.reachable for d in present) and len(present) > 0,
        energy=sum(energies) if energies else None,
    )
    merged: dict[str, list] = {}
    for d in present:
        for e in inventories.get(d.id, DataInventory(d.id)).entries:
            merged.setdefault(e.topic, []).append(e)
    entries = []
    for topic in sorted(merged):
        es = merged[topic]
        vol = sum(e.volume for e in es)
        q = sum(e.volume * e.quality for e in es) / vol if vol > 0 else 0.0
        entries.append(InventoryEntry(topic, vol, q, max(e.freshness_age for e in es)))
    return desc, DataInventory(at.id, tuple(entries))

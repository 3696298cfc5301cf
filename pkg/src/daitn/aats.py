"""Destination-less AI packets that gather a scoped view of the network and
pick their own next hop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .engine import CP, DP, Engine, Message, Unreachable
from .inference import (CapacityLedger, DeployedModel, DeploymentRequest, InferenceService, QuerySpec,
                        mdo_place, predicted_response)
from .network import Network, NoPath
from .topology import GKrrm, Gather, NoCandidates, ProbeSizes, extract_ms_drrt, extract_qs_qrrt
from .training import (ComputeOccupancy, HyperParams, ModelSpec, SearchConfig, build_visits, compute_time,
                       meets, mtrce_plan, predict_plan_outcome, shortfall, surrogate_train_step)

PER_HOP, END_TO_END = "per_hop", "end_to_end"
TRAINING, QUERY, DEPLOYMENT = "model_for_training", "query", "model_for_deployment"
DONE, EXPIRED = "done", "expired"


@dataclass
class PacketHeader:
    source: str
    requirement: dict
    ttl: int
    visited: list = field(default_factory=list)
    mode: str = PER_HOP

    def to_wire(self) -> dict:
        return {"source": self.source, "requirement": dict(self.requirement), "ttl": self.ttl,
                "visited": list(self.visited), "mode": self.mode}


@dataclass
class AIPacket:
    id: str
    header: PacketHeader
    payload_kind: str
    payload: object
    state: dict = field(default_factory=dict)
    hp: Optional[HyperParams] = None
    horizon: Optional[int] = None
    trust_floor: float = 0.0

    def to_wire(self) -> dict:
        return {"id": self.id, "header": self.header.to_wire(), "payload_kind": self.payload_kind,
                "state": dict(self.state)}


def requirement_descriptor(payload) -> dict:
    if isinstance(payload, ModelSpec):
        return {"model": payload.id, "requirements": dict(payload.requirements), "deadline": payload.deadline}
    if isinstance(payload, QuerySpec):
        return {"query": payload.id, "topic": payload.topic, "min_accuracy": payload.min_accuracy,
                "max_response_time": payload.max_response_time}
    if isinstance(payload, DeploymentRequest):
        return {"model": payload.model_id, "storage_need": payload.storage_need,
                "compute_need": payload.compute_need, "demand": dict(payload.demand)}
    raise TypeError(type(payload))


def make_packet(pid, source, payload, ttl, mode=PER_HOP, horizon=None, hp=None, trust_floor=0.0) -> AIPacket:
    kind = {ModelSpec: TRAINING, QuerySpec: QUERY, DeploymentRequest: DEPLOYMENT}[type(payload)]
    state = payload.start_accuracy() if kind == TRAINING else {}
    if mode == END_TO_END:
        horizon = None
    return AIPacket(pid, PacketHeader(source, requirement_descriptor(payload), ttl, [], mode), kind, payload,
                    state, hp, horizon, trust_floor)


@dataclass
class ScopedView:
    center: str
    horizon: Optional[int]
    g: GKrrm
    snapshot_time: float

    def node_ids(self):
        return set(self.g.records)


def scope_nodes(net: Network, center: str, k: Optional[int]) -> list[str]:
    dist = net.hop_distances(center)
    return sorted(n for n, h in dist.items() if k is None or h <= k)


def start_scoped_view(net, engine, center, k, on_done, sizes=ProbeSizes(), category="aats"):
    def done(g):
        on_done(ScopedView(center, k, g, g.snapshot_time))

    return Gather(net, engine, center, scope_nodes(net, center, k), done, sizes, category=category)


def gather_scoped_view(net: Network, engine: Engine, center: str, k: Optional[int],
                       sizes: ProbeSizes = ProbeSizes()) -> ScopedView:
    """Synchronous form for an idle engine; ``k=None`` means unbounded."""
    out = []
    gth = start_scoped_view(net, engine, center, k, out.append, sizes)
    engine.run(until=lambda: gth.done)
    return out[0]


# steering


def _training_drrt(pkt: AIPacket, view: ScopedView, net: Network, loc: str):
    return extract_ms_drrt(pkt.payload, view.g, pkt.trust_floor, net, anchors=(loc,))


def training_scores(pkt: AIPacket, drrt, loc: str, acc: dict, visited) -> list:
    """(rate, node) for every unvisited candidate that reduces the requirement
    shortfall; rate = shortfall reduction / model transfer time to the candidate."""
    req = pkt.payload.requirements
    gap = shortfall(acc, req)
    out = []
    for d in sorted(drrt.data):
        if d in visited:
            continue
        e = drrt.edge(loc, d)
        if e is None:
            continue
        after = surrogate_train_step(acc, drrt.data[d].entries, pkt.hp)
        gain = gap - shortfall(after, req)
        if gain <= 0:
            continue
        rate = gain / e.time if e.time > 0 else math.inf
        out.append((rate, d))
    return out


def _best(scores):
    if not scores:
        return None
    return min(scores, key=lambda s: (-s[0], s[1]))[1]


def greedy_itinerary(pkt: AIPacket, drrt, loc: str, acc: dict, visited, ttl: int) -> list:
    """Whole greedy route computed up front (end-to-end mode)."""
    acc = dict(acc)
    visited = list(visited)
    route = []
    while ttl > 0 and not meets(acc, pkt.payload.requirements):
        d = _best(training_scores(pkt, drrt, loc, acc, visited))
        if d is None:
            break
        route.append(d)
        visited.append(d)
        acc = surrogate_train_step(acc, drrt.data[d].entries, pkt.hp)
        loc = drrt.rendezvous[d]
        ttl -= 1
    return route


def compare_with_mtrce(model: ModelSpec, drrt, hp: HyperParams, cfg: SearchConfig = SearchConfig(),
                      ttl: int = 16, budget: Optional[float] = None) -> dict:
    """Greedy packet itinerary against the MTRCE plan on the same MS-DRRT.

    Both sequences are priced by the same predictor with the same MPVU
    policy. ``gap`` is the greedy completion time minus the MTRCE one, and is
    only defined when the greedy route is itself feasible.
    """
    budget = model.deadline if budget is None else budget
    pkt = make_packet(f"{model.id}-probe", model.owner, model, ttl, END_TO_END, hp=hp,
                      trust_floor=drrt.trust_floor)
    seq = greedy_itinerary(pkt, drrt, model.owner, model.start_accuracy(), [], ttl)
    out = predict_plan_outcome(model, build_visits(seq, drrt, hp, cfg.mpvu_policy), drrt, hp)
    aats_ok = meets(out.accuracy, model.requirements) and out.time <= budget
    plan = mtrce_plan(model, drrt, hp, cfg, budget)
    gap = out.time - plan.completion_time if aats_ok and plan.feasible else None
    return {"model": model.id, "aats_sequence": list(seq), "aats_time": out.time, "aats_feasible": aats_ok,
            "mtrce_sequence": list(plan.sequence), "mtrce_time": plan.completion_time,
            "mtrce_feasible": plan.feasible, "mtrce_exact": plan.exact, "gap": gap}


def steer_next(pkt: AIPacket, view: ScopedView, net: Network, loc: Optional[str] = None,
               registry=(), ledger: Optional[CapacityLedger] = None):
    """Next destination computed from the packet's requirements and ``view``.

    Returns ("done", None), ("expired", None) or ("next", node).
    """
    loc = loc or pkt.header.source
    h = pkt.header
    if pkt.payload_kind == TRAINING:
        if meets(pkt.state, pkt.payload.requirements):
            return DONE, None
        if h.ttl <= 0:
            return EXPIRED, None
        try:
            drrt = _training_drrt(pkt, view, net, loc)
        except NoCandidates:
            return EXPIRED, None
        d = _best(training_scores(pkt, drrt, loc, pkt.state, h.visited))
        return (EXPIRED, None) if d is None else ("next", d)
    if h.ttl <= 0:
        return EXPIRED, None
    if pkt.payload_kind == QUERY:
        q = pkt.payload
        qs = extract_qs_qrrt(q, view.g, registry, net)
        best = None
        for rec in qs.replicas:
            if rec.accuracy < q.min_accuracy:
                continue
            key = (predicted_response(rec), rec.replica_id)
            if best is None or key < best[0]:
                best = (key, rec)
        return (EXPIRED, None) if best is None else ("next", best[1].replica_id)
    if pkt.payload_kind == DEPLOYMENT:
        req = pkt.payload
        one = DeploymentRequest(req.model_id, req.provider, req.size_bytes, req.accuracy, req.service_time,
                                req.storage_need, req.compute_need, req.demand, 1, req.submit_at)
        hosts = mdo_place(one, view.g, net, ledger or CapacityLedger(net))
        return (EXPIRED, None) if isinstance(hosts, tuple) else ("next", hosts[0])
    raise ValueError(pkt.payload_kind)


class PacketRun:
    """Event-driven life of one AI packet, from injection to its terminal status."""

    def __init__(self, engine: Engine, net: Network, pkt: AIPacket, occupancy: Optional[ComputeOccupancy] = None,
                 inference: Optional[InferenceService] = None, sizes: ProbeSizes = ProbeSizes(), on_finish=None):
        self.engine, self.net, self.pkt = engine, net, pkt
        self.occupancy = occupancy or ComputeOccupancy(engine)
        self.inference, self.sizes, self.on_finish = inference, sizes, on_finish
        self.loc = pkt.header.source
        self.status = None
        self.log: list[dict] = []
        self.itinerary: Optional[list] = None
        self.views = 0
        self.hops = 0
        self.start_time = None
        self.end_time = None
        self.view: Optional[ScopedView] = None
        self.dirty = False
        self.replans = 0
        self.drrt = None
        self.stranded = False
        net.subscribers.append(self._on_churn)

    @property
    def name(self):
        return f"packet:{self.pkt.id}"

    def _note(self, kind, **body):
        entry = {"t": self.engine.now, "event": kind}
        entry.update(body)
        self.log.append(entry)
        self.engine.schedule(self.engine.now, kind, self.name, dict(body))

    def _on_churn(self, node, reachable):
        if self.status is None and not reachable and self.itinerary:
            self.dirty = True

    def start(self):
        self.start_time = self.engine.now
        self._note("inject", node=self.loc, payload=self.pkt.payload_kind)
        self._look()

    def _look(self):
        p = self.pkt
        if p.header.mode == END_TO_END and self.view is not None and not self.dirty:
            return self._steer()
        self.views += 1
        k = None if p.header.mode == END_TO_END else p.horizon
        start_scoped_view(self.net, self.engine, self.loc, k, self._with_view, self.sizes)

    def _with_view(self, view):
        self.view = view
        if self.pkt.header.mode == END_TO_END and self.pkt.payload_kind == TRAINING:
            if self.dirty:
                self.replans += 1
                self._note("replan", node=self.loc)
            self.dirty = False
            try:
                self.drrt = _training_drrt(self.pkt, view, self.net, self.loc)
                self.itinerary = greedy_itinerary(self.pkt, self.drrt, self.loc, self.pkt.state,
                                                  self.pkt.header.visited, self.pkt.header.ttl)
            except NoCandidates:
                self.itinerary = []
        self._steer()

    def _steer(self):
        p, h = self.pkt, self.pkt.header
        if p.payload_kind == TRAINING and h.mode == END_TO_END:
            if meets(p.state, p.payload.requirements):
                return self._finish(DONE)
            if h.ttl <= 0 or not self.itinerary:
                return self._finish(EXPIRED)
            d = self.itinerary[0]
            c = self.drrt.rendezvous[d]
            if self.dirty or not (self.net.is_reachable(d) and self.net.is_reachable(c)):
                self.dirty = True
                return self._look()
            self.itinerary.pop(0)
            return self._hop_training(d, c)
        registry = self.inference.registry if self.inference else ()
        ledger = self.inference.ledger if self.inference else None
        status, nxt = steer_next(p, self.view, self.net, self.loc, registry, ledger)
        if status != "next":
            return self._finish(status)
        if p.payload_kind == TRAINING:
            self.drrt = _training_drrt(p, self.view, self.net, self.loc)
            return self._hop_training(nxt, self.drrt.rendezvous[nxt])
        if p.payload_kind == QUERY:
            return self._hop_query(nxt)
        return self._hop_deploy(nxt)

    def _move(self, dst, size, then, fail, category="aats"):
        if self.loc == dst:
            self.engine.schedule(self.engine.now, "arrive", dst, {"src": dst, "dst": dst}, lambda ev: then())
            return
        route = self.net.route_path(self.loc, dst, plane=DP)
        self.engine.transmit(Message(self.loc, dst, DP, size, category=category), list(route.links),
                             lambda m: then(), lambda m: fail())

    def _hop_training(self, d, c):
        h = self.pkt.header
        h.ttl -= 1
        self.hops += 1
        size = self.pkt.payload.size_bytes

        def arrived():
            self.loc = c
            if not (self.net.is_reachable(d) and self.net.is_reachable(c)):
                self.dirty = True
                return self._look()
            h.visited.append(d)
            self._note("visit", node=d, compute=c)
            cand = self.drrt.data[d]
            dur = compute_time(self.pkt.hp.epochs_per_visit, cand.entries, self.pkt.payload.ops_per_sample,
                               self.drrt.compute[c])

            def trained():
                self.pkt.state = surrogate_train_step(self.pkt.state, cand.entries, self.pkt.hp)
                self._look()

            self.occupancy.acquire(c, dur, trained, self.pkt.id)

        def failed():
            self.dirty = True
            self._look()

        try:
            self._move(c, size, arrived, failed)
        except (NoPath, Unreachable):
            failed()

    def _hop_query(self, rid):
        q = self.pkt.payload
        svc = self.inference
        rep = svc.replica(rid)
        self.pkt.header.ttl -= 1
        self.hops += 1
        rep.committed += 1
        self._note("steer", node=rep.host, replica=rid)

        def at_host():
            self.loc = rep.host
            rep.queue.append(_PacketQuery(q, self))
            if not rep.busy:
                _serve_packet_queue(svc, rep)

        def failed():
            rep.committed -= 1
            self._look()

        try:
            self._move(rep.host, q.request_bytes, at_host, failed)
        except (NoPath, Unreachable):
            failed()

    def rerouted(self):
        """Host went away while this query sat in its queue."""
        self._note("replan", node=self.loc)
        self._look()

    def answered(self, rep):
        q = self.pkt.payload
        dest = q.destination or q.owner
        self.loc = rep.host

        def home():
            self.loc = dest
            self._finish(DONE, returned=True)

        try:
            self._move(dest, q.response_bytes, home, lambda: self._finish(EXPIRED, returned=True))
        except (NoPath, Unreachable):
            self._finish(EXPIRED, returned=True)

    def _hop_deploy(self, host):
        req = self.pkt.payload
        svc = self.inference
        self.pkt.header.ttl -= 1
        self.hops += 1
        svc.ledger.commit(host, req.storage_need, req.compute_need)
        rep = DeployedModel(req.model_id, f"{req.model_id}/{self.pkt.id}", host, dict(req.accuracy),
                            req.service_time, req.storage_need, req.compute_need, req.size_bytes, active=False)
        self._note("steer", node=host)

        def at_host():
            self.loc = host
            rep.active = True
            svc.registry.append(rep)
            self._finish(DONE)

        def failed():
            svc.ledger.release(host, req.storage_need, req.compute_need)
            self._look()

        try:
            self._move(host, req.size_bytes, at_host, failed)
        except (NoPath, Unreachable):
            failed()

    def _finish(self, status, returned=False):
        """Report the terminal status at the source (the only address the header carries).

        A packet with no way back (its node went dark, or the return leg was
        dropped) ends where it is and is marked ``stranded``."""
        src = self.pkt.header.source

        def end(home=True):
            if home and self.pkt.payload_kind == TRAINING:
                self.loc = src
            self.stranded = not home
            self.status = status
            self.end_time = self.engine.now
            self._note("packet_" + status, node=src if home else self.loc, **({} if home else {"stranded": True}))
            if self._on_churn in self.net.subscribers:
                self.net.subscribers.remove(self._on_churn)
            if self.on_finish:
                self.on_finish(self)

        if returned or self.loc == src:
            return end()
        if self.pkt.payload_kind == TRAINING:
            size, plane = self.pkt.payload.size_bytes, DP
        else:
            size, plane = self.sizes.probe, CP
        try:
            route = self.net.route_path(self.loc, src, plane=plane)
            self.engine.transmit(Message(self.loc, src, plane, size, category="aats"), list(route.links),
                                 lambda m: end(), lambda m: end(home=False))
        except (NoPath, Unreachable):
            end(home=False)

    @property
    def duration(self):
        return None if self.end_time is None else self.end_time - self.start_time


class _PacketQuery:
    """Queue entry for a query carried by a packet; shares the replica FIFO."""

    def __init__(self, q, run):
        self.q, self.run = q, run
        self.id = q.id


def _serve_packet_queue(svc: InferenceService, rep):
    svc._serve(rep)


def dispatch(pkt: AIPacket, engine: Engine, net: Network, **kw) -> PacketRun:
    run = PacketRun(engine, net, pkt, **kw)
    run.start()
    return run

"""Inference-side decisions (Q-FAM, QIRCE, MDO), query execution with
per-replica FIFO queues, and load-triggered migration."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .engine import DP, Engine, Message, Unreachable
from .network import MDFP, Network, NoPath
from .topology import GKrrm, QsQrrt, StalenessPolicy, extract_qs_qrrt, is_stale
from .training import ModelSpec


class NoQualifyingReplica(RuntimeError):
    pass


class CapacityViolation(AssertionError):
    pass


@dataclass(frozen=True)
class QuerySpec:
    id: str
    owner: str
    topic: str
    min_accuracy: float
    max_response_time: float
    request_bytes: int
    response_bytes: int
    destination: Optional[str] = None
    at: float = 0.0

    def __post_init__(self):
        if not self.max_response_time > 0:
            raise ValueError(f"query {self.id}: max_response_time must be positive")
        if not 0.0 <= self.min_accuracy <= 1.0:
            raise ValueError(f"query {self.id}: min_accuracy outside [0, 1]")


@dataclass(frozen=True)
class DeploymentRequest:
    model_id: str
    provider: str
    size_bytes: int
    accuracy: dict
    service_time: float
    storage_need: float
    compute_need: float
    demand: dict
    replicas: int = 1
    submit_at: float = 0.0

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError(f"deployment {self.model_id}: replica count must be >= 1")
        if any(d < 0 for d in self.demand.values()):
            raise ValueError(f"deployment {self.model_id}: negative demand")
        if not self.service_time > 0:
            raise ValueError(f"deployment {self.model_id}: service_time must be positive")


@dataclass
class DeployedModel:
    model_id: str
    replica_id: str
    host: str
    accuracy: dict
    service_time: float
    storage_need: float = 0.0
    compute_need: float = 0.0
    size_bytes: int = 1
    active: bool = True
    committed: int = 0
    queue: deque = field(default_factory=deque)
    busy: bool = False
    busy_since: Optional[float] = None
    busy_log: list = field(default_factory=list)
    served: list = field(default_factory=list)

    def utilization(self, now: float, window: float) -> float:
        """Busy fraction of [now - window, now], counting the query in service."""
        lo = now - window
        spans = list(self.busy_log)
        if self.busy and self.busy_since is not None:
            spans.append((self.busy_since, now))
        busy = sum(max(0.0, min(e, now) - max(s, lo)) for s, e in spans)
        return busy / window


@dataclass
class QueryDecision:
    accepted: bool
    replica_id: Optional[str] = None
    host: Optional[str] = None
    predicted: Optional[float] = None
    reason: Optional[str] = None


class CapacityLedger:
    """Storage/compute commitments per MDFP host."""

    def __init__(self, net: Network):
        self.net = net
        self.storage: dict[str, float] = {}
        self.compute: dict[str, float] = {}
        self.violations: list[str] = []

    def residual(self, host):
        d = self.net.nodes[host]
        return d.storage - self.storage.get(host, 0.0), d.compute_capacity - self.compute.get(host, 0.0)

    def fits(self, host, storage, compute) -> bool:
        rs, rc = self.residual(host)
        return storage <= rs and compute <= rc

    def commit(self, host, storage, compute):
        self.storage[host] = self.storage.get(host, 0.0) + storage
        self.compute[host] = self.compute.get(host, 0.0) + compute
        rs, rc = self.residual(host)
        if rs < 0 or rc < 0:
            self.violations.append(f"host {host} over capacity")
            raise CapacityViolation(host)

    def release(self, host, storage, compute):
        self.storage[host] -= storage
        self.compute[host] -= compute


def predicted_response(rec, queue_length: Optional[int] = None) -> float:
    q = rec.queue_length if queue_length is None else queue_length
    return rec.up_time + q * rec.service_time + rec.service_time + rec.down_time


def qirce_route(query: QuerySpec, qs: QsQrrt):
    """Qualifying replica with the smallest predicted response; ties by replica id."""
    best = None
    for rec in qs.replicas:
        if rec.accuracy < query.min_accuracy:
            continue
        key = (predicted_response(rec), rec.replica_id)
        if best is None or key < best[0]:
            best = (key, rec)
    if best is None:
        raise NoQualifyingReplica(query.id)
    return best[1].replica_id, best[0][0]


def qfam_admit(query: QuerySpec, qs: QsQrrt) -> QueryDecision:
    if not qs.replicas:
        return QueryDecision(False, reason="no-model")
    try:
        rid, predicted = qirce_route(query, qs)
    except NoQualifyingReplica:
        return QueryDecision(False, reason="accuracy")
    host = next(r.host for r in qs.replicas if r.replica_id == rid)
    if predicted > query.max_response_time:
        return QueryDecision(False, rid, host, predicted, "latency")
    return QueryDecision(True, rid, host, predicted)


def placement_cost(demand: dict, hosts, latency: Callable[[str, str], float]) -> float:
    """Demand-weighted latency from each region to its nearest chosen host."""
    total = 0.0
    for kas in sorted(demand):
        w = demand[kas]
        if w == 0:
            continue
        total += w * min((latency(kas, h) for h in hosts), default=math.inf)
    return total


def gateway_latency(net: Network, g: Optional[GKrrm] = None):
    down = g.down if g is not None else None

    def latency(kas, host):
        try:
            return net.route_path(net.regions[kas].gateway, host, plane=DP, down=down).latency
        except NoPath:
            return math.inf

    return latency


def feasible_hosts(req: DeploymentRequest, g: GKrrm, ledger: CapacityLedger, exclude=()):
    out = []
    for nid, rec in g.records.items():
        d = rec.descriptor
        if d.kind != MDFP or not d.reachable or nid in exclude:
            continue
        if ledger.fits(nid, req.storage_need, req.compute_need):
            out.append(nid)
    return sorted(out)


def mdo_place(req: DeploymentRequest, g: GKrrm, net: Network, ledger: CapacityLedger):
    """Greedy facility selection: ``req.replicas`` rounds, each adding the
    feasible host that most lowers demand-weighted latency.

    Returns the chosen host list, or ("rejected", "capacity").
    """
    latency = gateway_latency(net, g)
    chosen: list[str] = []
    tentative: dict[str, int] = {}
    for _ in range(req.replicas):
        options = []
        for h in feasible_hosts(req, g, ledger, exclude=chosen):
            # a host already holding one of this round's replicas must fit another
            k = tentative.get(h, 0)
            rs, rc = ledger.residual(h)
            if (k + 1) * req.storage_need > rs or (k + 1) * req.compute_need > rc:
                continue
            options.append((placement_cost(req.demand, chosen + [h], latency), h))
        if not options:
            return ("rejected", "capacity")
        cost, h = min(options)
        chosen.append(h)
        tentative[h] = tentative.get(h, 0) + 1
    return chosen


def retraining_spec(rep: DeployedModel, owner: str, requirements: dict, deadline: float,
                    ops_per_sample: float, submit_at: float = 0.0) -> ModelSpec:
    """Hand a deployed replica back to training, starting from what it already knows."""
    init = {t: rep.accuracy.get(t, 0.0) for t in requirements}
    return ModelSpec(f"{rep.model_id}-retrain", owner, rep.size_bytes, ops_per_sample, dict(requirements),
                     deadline, init, submit_at)


class InferenceService:
    """Admits, routes and serves queries; places and migrates replicas."""

    def __init__(self, engine: Engine, net: Network, origin: str, policy: StalenessPolicy,
                 gather: Callable, ledger: Optional[CapacityLedger] = None):
        self.engine, self.net, self.origin, self.policy = engine, net, origin, policy
        self.gather = gather  # gather(scope, on_done, category)
        self.ledger = ledger or CapacityLedger(net)
        self.registry: list[DeployedModel] = []
        self.view: Optional[GKrrm] = None
        self.view_pending = False
        self.waiting: list = []
        self.query_log: dict[str, dict] = {}
        self.deploy_log: dict[str, dict] = {}
        self.migrations: list[dict] = []
        self.rebalance_warnings = 0
        self.churned: list[tuple[float, str]] = []
        self.fifo_violations = 0
        net.subscribers.append(self._on_churn)

    def mdfp_scope(self):
        return sorted(n for n, d in self.net.nodes.items() if d.kind == MDFP)

    # view maintenance

    def _on_churn(self, node, reachable):
        self.churned.append((self.engine.now, node))
        if not reachable:
            for rep in self.registry:
                if rep.host == node:
                    self._drop_queue(rep)

    def _fresh(self) -> bool:
        if self.view is None:
            return False
        touched = {n for t, n in self.churned if t >= self.view.snapshot_time}
        return not is_stale(self.view, self.policy, self.engine.now, touched)

    def with_view(self, fn):
        """Run ``fn(view)`` against a fresh G-KRRM, gathering first if needed."""
        if self._fresh():
            return fn(self.view)
        self.waiting.append(fn)
        if not self.view_pending:
            self.view_pending = True
            self.gather(self.mdfp_scope(), self._view_ready, "qrrt")

    def _view_ready(self, g):
        self.view = g
        self.view_pending = False
        waiting, self.waiting = self.waiting, []
        for fn in waiting:
            fn(g)

    # deployment

    def deploy(self, req: DeploymentRequest):
        self.deploy_log[req.model_id] = {"model": req.model_id, "status": "pending", "hosts": []}
        self.with_view(lambda g: self._place(req, g))

    def _place(self, req, g):
        entry = self.deploy_log[req.model_id]
        entry["decided_at"] = self.engine.now
        hosts = mdo_place(req, g, self.net, self.ledger)
        if isinstance(hosts, tuple):
            entry.update(status="rejected", reason=hosts[1])
            return
        entry.update(status="accepted", hosts=list(hosts),
                     cost=placement_cost(req.demand, hosts, gateway_latency(self.net, g)))
        for i, h in enumerate(hosts):
            self.ledger.commit(h, req.storage_need, req.compute_need)
            rep = DeployedModel(req.model_id, f"{req.model_id}/r{i}", h, dict(req.accuracy), req.service_time,
                                req.storage_need, req.compute_need, req.size_bytes, active=False)
            self.registry.append(rep)
            self._ship(req.provider, rep, "deployment")

    def _ship(self, src, rep, category, then=None):
        def activate(msg=None):
            rep.active = True
            self.engine.schedule(self.engine.now, "replica_active", rep.host, {"replica": rep.replica_id})
            if then:
                then()

        if src == rep.host:
            return activate()
        try:
            route = self.net.route_path(src, rep.host, plane=DP)
            self.engine.transmit(Message(src, rep.host, DP, rep.size_bytes, category=category),
                                 list(route.links), activate, lambda m: self._ship_failed(rep))
        except (NoPath, Unreachable):
            self._ship_failed(rep)

    def _ship_failed(self, rep):
        self.ledger.release(rep.host, rep.storage_need, rep.compute_need)
        if rep in self.registry:
            self.registry.remove(rep)
        self.deploy_log.setdefault(rep.model_id, {})["failed_replicas"] = \
            self.deploy_log.get(rep.model_id, {}).get("failed_replicas", 0) + 1

    # queries

    def submit(self, q: QuerySpec):
        self.query_log[q.id] = {"query": q.id, "topic": q.topic, "max_response_time": q.max_response_time,
                                "submitted": self.engine.now,
                                "attempts": 0, "status": "pending", "deadline_missed": False}
        self.with_view(lambda g: self._admit(q, g))

    def replica(self, rid) -> DeployedModel:
        return next(r for r in self.registry if r.replica_id == rid)

    def _admit(self, q, g):
        log = self.query_log[q.id]
        log["attempts"] += 1
        qs = extract_qs_qrrt(q, g, self.registry, self.net)
        dec = qfam_admit(q, qs)
        if log["attempts"] == 1:
            log.update(admitted_at=self.engine.now, decision="accepted" if dec.accepted else "rejected",
                       reason=dec.reason, replica=dec.replica_id, predicted=dec.predicted)
        if not dec.accepted:
            if log["attempts"] > 1:
                log.update(status="failed", deadline_missed=True)
            else:
                log["status"] = "rejected"
            return
        if log["attempts"] > 1:
            log.update(rerouted_to=dec.replica_id, reroute_predicted=dec.predicted)
        rep = self.replica(dec.replica_id)
        rep.committed += 1
        self._send_request(q, rep)

    def _send_request(self, q, rep):
        try:
            route = self.net.route_path(q.owner, rep.host, plane=DP)
            self.engine.transmit(Message(q.owner, rep.host, DP, q.request_bytes, category="inference"),
                                 list(route.links), lambda m: self._enqueue(q, rep),
                                 lambda m: self._lost(q, rep))
        except (NoPath, Unreachable):
            self._lost(q, rep)

    def _enqueue(self, q, rep):
        rep.queue.append(q)
        if not rep.busy:
            self._serve(rep)

    def _serve(self, rep):
        if not rep.queue:
            return
        q = rep.queue.popleft()
        rep.busy = True
        start = rep.busy_since = self.engine.now

        def finish(ev):
            rep.busy_log.append((start, self.engine.now))
            rep.served.append(q.id)
            rep.committed -= 1
            rep.busy = False
            if hasattr(q, "run"):
                q.run.answered(rep)
            else:
                self._respond(q, rep)
            self._serve(rep)
            self._maybe_retire(rep)

        rep._current = self.engine.schedule(start + rep.service_time, "served", rep.replica_id,
                                            {"query": q.id, "item": q}, finish)

    def _respond(self, q, rep):
        dest = q.destination or q.owner
        try:
            route = self.net.route_path(rep.host, dest, plane=DP)
            self.engine.transmit(Message(rep.host, dest, DP, q.response_bytes, category="inference"),
                                 list(route.links), lambda m: self._answered(q, rep),
                                 lambda m: self._undeliverable(q))
        except (NoPath, Unreachable):
            self._undeliverable(q)

    def _answered(self, q, rep):
        log = self.query_log[q.id]
        actual = self.engine.now - log["admitted_at"]
        log.update(status="answered", actual=actual, served_by=rep.replica_id, answered_at=self.engine.now,
                   deadline_missed=actual > q.max_response_time)

    def _undeliverable(self, q):
        self.query_log[q.id].update(status="failed", deadline_missed=True)

    def _lost(self, q, rep):
        rep.committed -= 1
        self._maybe_retire(rep)
        log = self.query_log[q.id]
        if log["attempts"] >= 2:
            log.update(status="failed", deadline_missed=True)
            return
        self.with_view(lambda g: self._admit(q, g))

    def _drop_queue(self, rep):
        dropped = list(rep.queue)
        rep.queue.clear()
        current = getattr(rep, "_current", None)
        if rep.busy and current is not None and not current.cancelled:
            Engine.cancel(current)
            rep.busy = False
            dropped.insert(0, current.body.get("item"))
        for q in dropped:
            if q is None:
                continue
            if hasattr(q, "run"):
                rep.committed -= 1
                q.run.rerouted()
            else:
                self._lost(q, rep)

    # load balancing

    def rebalance(self, window: float, rho_hi: float):
        """Move replicas whose utilization over ``window`` exceeds ``rho_hi``."""
        now = self.engine.now
        moves = []
        for rep in sorted(self.registry, key=lambda r: r.replica_id):
            if not rep.active:
                continue
            u = rep.utilization(now, window)
            if u <= rho_hi:
                continue
            load = {}
            for r in self.registry:
                if r.active:
                    load[r.host] = load.get(r.host, 0.0) + r.utilization(now, window)
            hosting = {r.host for r in self.registry if r.model_id == rep.model_id}
            options = []
            for h, d in sorted(self.net.nodes.items()):
                if d.kind != MDFP or not d.reachable or h in hosting:
                    continue
                if not self.ledger.fits(h, rep.storage_need, rep.compute_need):
                    continue
                if load.get(h, 0.0) < u:
                    options.append((load.get(h, 0.0), h))
            if not options:
                self.rebalance_warnings += 1
                continue
            _, target = min(options)
            moves.append((rep, target, u))
        for rep, target, u in moves:
            self._migrate(rep, target, u)
        return moves

    def _migrate(self, rep, target, u):
        self.ledger.commit(target, rep.storage_need, rep.compute_need)
        n = sum(1 for m in self.migrations if m["from_replica"] == rep.replica_id) + 1
        new = DeployedModel(rep.model_id, f"{rep.replica_id}-m{n}", target, dict(rep.accuracy), rep.service_time,
                            rep.storage_need, rep.compute_need, rep.size_bytes, active=False)
        self.registry.append(new)
        entry = {"t": self.engine.now, "from_replica": rep.replica_id, "to_replica": new.replica_id,
                 "from": rep.host, "to": target, "utilization": u}
        self.migrations.append(entry)
        self.engine.schedule(self.engine.now, "migration", rep.replica_id, {"to": target})

        def cutover():
            rep.active = False
            entry["cutover"] = self.engine.now
            self._maybe_retire(rep)

        self._ship(rep.host, new, "migration", then=cutover)

    def _maybe_retire(self, rep):
        if not rep.active and rep.committed == 0 and not rep.queue and not rep.busy \
                and getattr(rep, "retired", False) is False and any(
                m["from_replica"] == rep.replica_id and "cutover" in m for m in self.migrations):
            rep.retired = True
            self.ledger.release(rep.host, rep.storage_need, rep.compute_need)
            self.registry.remove(rep)

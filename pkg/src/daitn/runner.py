"""Drives one scenario through the simulator: topology gathering per control
mode, training admission and execution, inference, AI packets, and the
post-run invariant checks."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

from .aats import END_TO_END, PacketRun, compare_with_mtrce, make_packet
from .engine import CP, Engine, Message, Unreachable, transfer_time
from .inference import CapacityLedger, CapacityViolation, InferenceService
from .network import (CENTRALIZED, DISTRIBUTED, HIERARCHICAL, NON_STANDALONE, Network, NoPath)
from .scenario import Scenario
from .topology import DrrtAdapter, Gather, NoCandidates, extract_ms_drrt
from .training import (Admission, ComputeOccupancy, Replanner, TrainingJob, expand_abstract_visits,
                       tag_hpo_search, tfam_admit)

MODES = (CENTRALIZED, DISTRIBUTED, HIERARCHICAL, "aats")


class InvariantViolation(AssertionError):
    pass


def plan_dict(adm: Admission, hp, extra=None) -> dict:
    out = {"accepted": adm.accepted, "reason": adm.reason, "margins": dict(adm.margins)}
    if hp is not None:
        out["hyperparams"] = {"epochs_per_visit": hp.epochs_per_visit, "batch_size": hp.batch_size,
                              "gain": hp.gain, "forgetting": hp.forgetting, "v_half": hp.v_half}
    p = adm.plan
    if p is not None:
        out.update(
            feasible=p.feasible, sequence=list(p.sequence),
            visits=[{"data": v.data, "compute": v.compute, "epochs": v.epochs, "mpvu": v.mpvu} for v in p.visits],
            predicted_accuracy=dict(sorted(p.accuracy.items())), predicted_time=p.completion_time,
            predicted_bytes=p.bytes, exact=p.exact, explored=p.explored)
    if extra:
        out.update(extra)
    return out


class Run:
    """One simulation of a scenario. ``mode`` overrides every region's control mode
    (``centralized`` gathers everything at the orchestrator; ``aats`` sends
    training models out as AI packets and keeps the MTRCE plan for comparison)."""

    def __init__(self, sc: Scenario, mode: Optional[str] = None, seed: Optional[int] = None,
                 t_end: Optional[float] = None):
        if mode is not None and mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.sc, self.mode = sc, mode
        self.seed = sc.seed if seed is None else seed
        self.t_end = sc.t_end if t_end is None else t_end
        self.params = sc.engine
        self.cfg = sc.engine.search()
        self.flat = mode == CENTRALIZED
        regions = sc.regions
        if mode in (DISTRIBUTED, HIERARCHICAL):
            regions = [replace(r, control_mode=mode, delegate_kas=None) for r in regions]
        self.net = Network(sc.nodes, sc.links, regions, sc.inventories, sc.ats, sc.churn)
        self.engine = Engine(self.seed, self.net.is_reachable)
        self.occupancy = ComputeOccupancy(self.engine)
        self.adapter = DrrtAdapter(self.net, sc.engine.staleness)
        self.adapter.bind_clock(lambda: self.engine.now)
        self.inference = InferenceService(self.engine, self.net, sc.orchestrator, sc.engine.staleness,
                                          self._gather_for_inference, CapacityLedger(self.net))
        self.models: dict[str, dict] = {}
        self.jobs: dict[str, TrainingJob] = {}
        self.packets: dict[str, PacketRun] = {}
        self.quality_gaps: list[dict] = []
        self.decisions: list[dict] = []
        self.drrts: list = []
        self.views: list = []  # the G-KRRM behind each entry of drrts
        self.violations: list[str] = []
        self.ran = False

    # gathering

    def _gather_for_inference(self, scope, on_done, category):
        Gather(self.net, self.engine, self.sc.orchestrator, scope, on_done, self.params.probe_bytes,
               category=category)

    def gather_layout(self, owner: str):
        """(origin, scope, relays, ATs to aggregate) for a DCC serving ``owner``."""
        if self.flat:
            return self.sc.orchestrator, sorted(self.net.nodes), {}, ()
        home = self.net.region_of(owner)
        scope, relays, aggregate = [], {}, []
        for r in sorted(self.net.regions.values(), key=lambda r: r.id):
            if r.id == home.id or r.control_mode == DISTRIBUTED:
                scope += r.members
            else:
                relays[r.gateway] = list(r.members)
            if r.control_mode == HIERARCHICAL:
                aggregate += [a.id for a in self.net.ats.values()
                              if self.net.nodes[a.members[0]].kas_id == r.id]
        return home.gateway, sorted(scope), relays, tuple(sorted(aggregate))

    def _delegate_of(self, owner: str) -> Optional[str]:
        if self.flat:
            return None
        home = self.net.region_of(owner)
        if home.control_mode == NON_STANDALONE:
            return self.net.regions[home.delegate_kas].gateway
        return None

    # training

    def _submit_model(self, entry):
        m = entry.spec
        rec = {"id": m.id, "owner": m.owner, "deadline": m.deadline, "submitted": self.engine.now,
               "status": "gathering", "timeline": [{"t": self.engine.now, "event": "submitted", "node": m.owner}]}
        self.models[m.id] = rec
        origin, scope, relays, aggregate = self.gather_layout(m.owner)
        rec["dcc"] = origin
        Gather(self.net, self.engine, origin, scope,
               lambda g: self._gathered(entry, g, origin, aggregate), self.params.probe_bytes, relays)

    def _gathered(self, entry, g, origin, aggregate):
        m = entry.spec
        rec = self.models[m.id]
        rec["timeline"].append({"t": self.engine.now, "event": "gathered", "node": origin})
        delegate = self._delegate_of(m.owner)
        if delegate is None or delegate == origin:
            return self._decide_and_start(entry, g, aggregate, origin, 0.0)
        size = self.params.probe_bytes.probe
        try:
            there = self.net.route_path(origin, delegate, plane=CP)
            back = self.net.route_path(delegate, origin, plane=CP)
        except NoPath:
            return self._reject(entry, Admission(False, reason="no-data"), None, {"delegated_to": delegate})
        reply = transfer_time(back.links, size)

        def at_delegate(msg):
            rec["timeline"].append({"t": self.engine.now, "event": "delegated", "node": delegate})
            adm, drrt, hp, extra = self._decide(entry, g, aggregate, reply)
            extra["delegated_to"] = delegate

            def replied(msg):
                self._admitted(entry, adm, drrt, hp, extra, origin)

            try:
                self.engine.transmit(Message(delegate, origin, CP, size, category="delegation"), list(back.links),
                                     replied, lambda msg: self._reject(entry, adm, hp, extra))
            except Unreachable:
                self._reject(entry, adm, hp, extra)

        try:
            self.engine.transmit(Message(origin, delegate, CP, size, category="delegation"), list(there.links),
                                 at_delegate, lambda msg: self._reject(entry, Admission(False, reason="no-data"),
                                                                       None, {"delegated_to": delegate}))
        except Unreachable:
            self._reject(entry, Admission(False, reason="no-data"), None, {"delegated_to": delegate})

    def _decide(self, entry, g, aggregate, lag: float):
        """T-FAM/TAG/MTRCE on view ``g``; the plan must fit the deadline left
        once the decision reaches the owner's DCC ``lag`` seconds from now."""
        m = entry.spec
        budget = m.deadline - (self.engine.now + lag - m.submit_at)
        self.decisions.append({"model": m.id, "t": self.engine.now, "view_age": self.engine.now - g.snapshot_time})
        extra = {"decided_at": self.engine.now, "budget": budget}
        try:
            drrt = extract_ms_drrt(m, g, self.params.trust_floor, self.net, aggregate=aggregate)
        except NoCandidates:
            return Admission(False, reason="no-data"), None, None, extra
        hp, plan = tag_hpo_search(m, drrt, entry.hyperparams, entry.grid, self.cfg, budget)
        uses_at = any(v.data in drrt.members for v in plan.visits)
        if aggregate and (uses_at or not plan.feasible):
            flat = extract_ms_drrt(m, g, self.params.trust_floor, self.net)
            expanded = None
            if uses_at and plan.feasible:
                expanded = expand_abstract_visits(m, plan, flat, hp, self.cfg, budget, drrt.members)
                extra["tier2"] = {"abstract_sequence": list(plan.sequence),
                                  "expanded_feasible": expanded.feasible}
            if expanded is not None and expanded.feasible:
                plan = expanded
            else:
                hp, plan = tag_hpo_search(m, flat, entry.hyperparams, entry.grid, self.cfg, budget)
                extra["flat_fallback"] = True
            drrt = flat
        self.drrts.append(drrt)
        self.views.append(g)
        return tfam_admit(m, drrt, hp, self.cfg, budget, plan=plan), drrt, hp, extra

    def _decide_and_start(self, entry, g, aggregate, origin, lag):
        adm, drrt, hp, extra = self._decide(entry, g, aggregate, lag)
        self._admitted(entry, adm, drrt, hp, extra, origin)

    def _reject(self, entry, adm, hp, extra):
        rec = self.models[entry.spec.id]
        rec.update(status="rejected", admission=plan_dict(adm, hp, extra))
        rec["timeline"].append({"t": self.engine.now, "event": "rejected", "reason": adm.reason})

    def _admitted(self, entry, adm, drrt, hp, extra, origin):
        m = entry.spec
        rec = self.models[m.id]
        if not adm.accepted:
            return self._reject(entry, adm, hp, extra)
        rec.update(status="running", admission=plan_dict(adm, hp, extra))
        rec["timeline"].append({"t": self.engine.now, "event": "admitted", "node": origin})
        replanner = Replanner(self.net, self.engine, origin, self.params.trust_floor, self.cfg,
                              self.params.probe_bytes)
        job = TrainingJob(self.engine, self.net, m, adm.plan, drrt, hp, self.occupancy, replanner,
                          sigma=self.params.sigma, on_finish=self._job_done, submit_time=m.submit_at)
        self.jobs[m.id] = job
        job.start()

    def _change_params(self, model_id, changes):
        job = self.jobs.get(model_id)
        if job is not None and job.change_params(changes):
            return
        rec = self.models.get(model_id)
        if rec is not None:  # not training right now: nothing to retune
            rec["timeline"].append({"t": self.engine.now, "event": "param_change_ignored",
                                    "status": rec["status"], **changes})

    def _job_done(self, job):
        self.models[job.model.id]["status"] = job.status

    # AATS mode for training

    def _submit_aats(self, entry):
        m = entry.spec
        rec = {"id": m.id, "owner": m.owner, "deadline": m.deadline, "submitted": self.engine.now,
               "status": "gathering", "via": "aats",
               "timeline": [{"t": self.engine.now, "event": "submitted", "node": m.owner}]}
        self.models[m.id] = rec
        origin, scope, relays = self.sc.orchestrator, sorted(self.net.nodes), {}

        def compare(g):
            budget = m.deadline - (self.engine.now - m.submit_at)
            try:
                drrt = extract_ms_drrt(m, g, self.params.trust_floor, self.net)
            except NoCandidates:
                self.quality_gaps.append({"model": m.id, "gap": None, "reason": "no-data"})
                hp = entry.hyperparams
            else:
                hp, _ = tag_hpo_search(m, drrt, entry.hyperparams, entry.grid, self.cfg, budget)
                gap = compare_with_mtrce(m, drrt, hp, self.cfg, self.params.aats_ttl, budget)
                self.quality_gaps.append(gap)
            rec["timeline"].append({"t": self.engine.now, "event": "dispatched", "node": m.owner})
            pkt = make_packet(f"{m.id}@aats", m.owner, m, self.params.aats_ttl, END_TO_END, hp=hp,
                              trust_floor=self.params.trust_floor)
            rec["packet"] = pkt.id
            run = PacketRun(self.engine, self.net, pkt, self.occupancy, self.inference, self.params.probe_bytes,
                            on_finish=lambda r: rec.update(status="done" if r.status == "done" else "aborted"))
            self.packets[pkt.id] = run
            rec["status"] = "running"
            run.start()

        Gather(self.net, self.engine, origin, scope, compare, self.params.probe_bytes, relays, category="baseline")

    # packets from the scenario

    def _launch_packet(self, p):
        payload = p.payload
        hp = None
        if isinstance(payload, str):
            entry = self.sc.model(payload)
            payload, hp = entry.spec, entry.hyperparams
        pkt = make_packet(p.id, p.source, payload, p.ttl, p.mode, p.horizon or self.params.horizon, hp,
                          self.params.trust_floor)
        run = PacketRun(self.engine, self.net, pkt, self.occupancy, self.inference, self.params.probe_bytes)
        self.packets[p.id] = run
        run.start()

    # periodic work

    def _every(self, interval, kind, fn):
        def tick(ev):
            fn()
            nxt = self.engine.now + interval
            if nxt <= self.t_end:
                self.engine.schedule(nxt, kind, "dcc", {}, tick)

        if interval <= self.t_end:
            self.engine.schedule(interval, kind, "dcc", {}, tick)

    def _refresh(self):
        def done(g):
            self.inference.view = g
            self.adapter.refreshes += 1

        self._gather_for_inference(sorted(self.net.nodes), done, "refresh")

    # driver

    def schedule_all(self):
        e = self.engine
        for c in self.sc.churn:
            e.schedule(c.at, "churn", c.node, {"reachable": c.reachable},
                       lambda ev, c=c: self.net.apply_churn(c))
        for entry in self.sc.models:
            fn = self._submit_aats if self.mode == "aats" else self._submit_model
            e.schedule(entry.spec.submit_at, "model_submit", entry.spec.id, {}, lambda ev, x=entry, f=fn: f(x))
            for at, changes in entry.param_changes:
                e.schedule(at, "param_change", entry.spec.id, dict(changes),
                           lambda ev, m=entry.spec.id, c=changes: self._change_params(m, c))
        for d in self.sc.deployments:
            e.schedule(d.submit_at, "deploy_submit", d.model_id, {}, lambda ev, d=d: self.inference.deploy(d))
        for q in self.sc.queries:
            e.schedule(q.at, "query_submit", q.id, {}, lambda ev, q=q: self.inference.submit(q))
        for p in self.sc.packets:
            e.schedule(p.at, "packet_inject", p.id, {}, lambda ev, p=p: self._launch_packet(p))
        pol = self.params.staleness
        if pol.periodic_interval:
            self._every(pol.periodic_interval, "refresh", self._refresh)
        if self.params.rebalance_interval:
            self._every(self.params.rebalance_interval, "rebalance",
                        lambda: self.inference.rebalance(self.params.window, self.params.rho_hi))

    def run(self) -> "Run":
        self.schedule_all()
        try:
            self.engine.run_until(self.t_end)
        except (CapacityViolation, AssertionError) as exc:
            self.violations.append(f"assertion during simulation at t={self.engine.now}: {exc!r}")
        self.ran = True
        self.violations += check_invariants(self)
        return self

    def decide_only(self, model_id: str) -> dict:
        """Gather and decide for one model at t=0 without executing anything."""
        entry = self.sc.model(model_id)
        entry = replace(entry, spec=replace(entry.spec, submit_at=0.0))
        captured = {}

        def capture(entry, adm, drrt, hp, extra, origin):
            captured["result"] = plan_dict(adm, hp, extra)

        self._admitted = capture
        self._reject = lambda entry, adm, hp, extra: captured.setdefault("result", plan_dict(adm, hp, extra))
        self._submit_model(entry)
        self.engine.run(until=lambda: "result" in captured)
        out = {"model": model_id}
        out.update(captured["result"])
        return out


# invariants


def check_invariants(run: Run) -> list[str]:
    out = []
    e = run.engine
    if not e.bytes_conserved():
        out.append("per-link bytes do not sum to plane totals")
    for plane in (CP, "dp"):
        cat = sum(v for (p, _), v in e.category_bytes.items() if p == plane)
        if cat != e.plane_bytes[plane]:
            out.append(f"{plane} category breakdown does not sum to total")
    last = -math.inf
    reach = {n.id: n.reachable for n in run.sc.nodes}
    for i, rec in enumerate(e.trace):
        if rec["t"] < last:
            out.append(f"trace[{i}]: time went backwards")
        last = rec["t"]
        if rec["kind"] == "churn":
            reach[rec["target"]] = rec["reachable"]
        elif rec["kind"] == "visit":
            for key in ("node", "compute"):
                n = rec.get(key)
                if n is not None and not reach.get(n, True):
                    out.append(f"trace[{i}]: {rec['target']} visited unreachable node {n}")
    max_age = run.params.staleness.max_age
    for d in run.decisions:
        if d["view_age"] > max_age:
            out.append(f"model {d['model']}: decided on a view {d['view_age']} s old")
    tau = run.params.trust_floor
    for drrt in run.drrts:
        for nid, cand in drrt.data.items():
            if cand.trust < tau:
                out.append(f"MS-DRRT {drrt.model_id}: data node {nid} below trust floor")
    out += [f"capacity: {v}" for v in run.inference.ledger.violations]
    for job in run.jobs.values():
        if job.status == "done" and not job.meets_requirements():
            out.append(f"model {job.model.id}: finished without meeting requirements")
    return out

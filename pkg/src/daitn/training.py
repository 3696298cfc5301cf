"""Training-side decisions (admission, route computation, hyper-parameter
selection) over an MS-DRRT, plus the event-driven plan executor."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field, fields, replace
from typing import Callable, NamedTuple, Optional

from .engine import DP, Engine, Message, Unreachable
from .network import Network, NoPath
from .topology import Gather, MsDrrt, NoCandidates, ProbeSizes, extract_ms_drrt

MPVU_NONE, MPVU_FINAL, MPVU_EVERY = "none", "final", "every"


@dataclass(frozen=True)
class HyperParams:
    epochs_per_visit: int = 1
    batch_size: int = 32
    gain: float = 0.2
    forgetting: float = 0.0
    v_half: float = 1000.0

    def __post_init__(self):
        if not (isinstance(self.epochs_per_visit, int) and self.epochs_per_visit >= 1):
            raise ValueError("epochs_per_visit must be a positive integer")
        if not (isinstance(self.batch_size, int) and self.batch_size >= 1):
            raise ValueError("batch_size must be a positive integer")
        if not 0.0 < self.gain < 1.0:
            raise ValueError("gain must lie in (0, 1)")
        if not 0.0 <= self.forgetting < 1.0:
            raise ValueError("forgetting must lie in [0, 1)")
        if not self.v_half > 0:
            raise ValueError("v_half must be positive")


@dataclass(frozen=True)
class ModelSpec:
    id: str
    owner: str
    size_bytes: int
    ops_per_sample: float
    requirements: dict
    deadline: float
    initial_accuracy: dict = field(default_factory=dict)
    submit_at: float = 0.0

    def __post_init__(self):
        if not self.requirements:
            raise ValueError(f"model {self.id}: requirements must be nonempty")
        for t, r in self.requirements.items():
            if not 0.0 < r <= 1.0:
                raise ValueError(f"model {self.id}: requirement {t}={r} outside (0, 1]")
        if not self.deadline > 0:
            raise ValueError(f"model {self.id}: deadline must be positive")
        for t, a in self.initial_accuracy.items():
            if t not in self.requirements:
                raise ValueError(f"model {self.id}: initial accuracy for untracked topic {t!r}")
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"model {self.id}: initial accuracy {t}={a} outside [0, 1]")

    def start_accuracy(self) -> dict:
        return {t: float(self.initial_accuracy.get(t, 0.0)) for t in sorted(self.requirements)}


@dataclass(frozen=True)
class SearchConfig:
    n_exact: int = 8
    beam_width: int = 16
    mpvu_policy: str = MPVU_FINAL


@dataclass(frozen=True)
class Visit:
    data: str
    compute: str
    epochs: int
    mpvu: Optional[str] = None


@dataclass
class TrainingPlan:
    model_id: str
    visits: tuple
    accuracy: dict
    completion_time: float
    bytes: int
    feasible: bool
    margin: float
    start: str
    hyperparams: Optional[HyperParams] = None
    exact: bool = True
    explored: int = 0

    @property
    def sequence(self) -> tuple:
        return tuple(v.data for v in self.visits)


@dataclass(frozen=True)
class Outcome:
    accuracy: dict
    time: float
    bytes: int


@dataclass
class Admission:
    accepted: bool
    plan: Optional[TrainingPlan] = None
    reason: Optional[str] = None
    margins: dict = field(default_factory=dict)


# surrogate dynamics


def visit_gain(entry, hp: HyperParams, epochs: int) -> float:
    return (1.0 - (1.0 - hp.gain * entry.quality) ** epochs) * (entry.volume / (entry.volume + hp.v_half))


def surrogate_train_step(acc: dict, entries, hp: HyperParams, epochs: Optional[int] = None) -> dict:
    """One local-training visit: saturating gain on topics held at the node,
    multiplicative forgetting on tracked topics that are absent."""
    epochs = hp.epochs_per_visit if epochs is None else epochs
    present = {e.topic: e for e in entries if e.volume > 0}
    out = {}
    for topic, a in acc.items():
        if topic in present:
            nxt = a + visit_gain(present[topic], hp, epochs) * (1.0 - a)
        else:
            nxt = a * (1.0 - hp.forgetting)
        assert -1e-12 <= nxt <= 1.0 + 1e-12, nxt
        out[topic] = min(1.0, max(0.0, nxt))
    return out


def meets(acc: dict, requirements: dict) -> bool:
    return all(acc[t] >= r for t, r in requirements.items())


def margin(acc: dict, requirements: dict) -> float:
    return min(acc[t] - r for t, r in requirements.items())


def shortfall(acc: dict, requirements: dict) -> float:
    """Total gap below the minimum-accuracy requirements."""
    return sum(max(0.0, r - acc[t]) for t, r in requirements.items())


def compute_time(epochs: int, entries, ops_per_sample: float, capacity: float) -> float:
    volume = sum(e.volume for e in entries)
    return epochs * volume * ops_per_sample / capacity


# prediction


class _State(NamedTuple):
    loc: str
    t: float
    bytes: int
    acc: dict


def _train_at(model, drrt: MsDrrt, hp, st: _State, data: str, compute: str, epochs: int) -> Optional[_State]:
    e = drrt.edge(st.loc, compute)
    if e is None:
        return None
    t = st.t + e.time
    cand = drrt.data[data]
    t = t + compute_time(epochs, cand.entries, model.ops_per_sample, drrt.compute[compute])
    acc = surrogate_train_step(st.acc, cand.entries, hp, epochs)
    return _State(compute, t, st.bytes + model.size_bytes * e.hops, acc)


def _mpvu_round(model, drrt: MsDrrt, st: _State, mpvu: str) -> Optional[_State]:
    out, back = drrt.edge(st.loc, mpvu), drrt.edge(mpvu, st.loc)
    if out is None or back is None:
        return None
    t = st.t + out.time
    t = t + back.time
    return _State(st.loc, t, st.bytes + model.size_bytes * (out.hops + back.hops), st.acc)


def _go_home(model, drrt: MsDrrt, st: _State) -> Optional[_State]:
    e = drrt.edge(st.loc, model.owner)
    if e is None:
        return None
    return _State(model.owner, st.t + e.time, st.bytes + model.size_bytes * e.hops, st.acc)


def pick_mpvu(drrt: MsDrrt, compute: str) -> Optional[str]:
    """Widest test-set coverage first, then the cheapest round trip."""
    best = None
    for m, covered in drrt.mpvus.items():
        out, back = drrt.edge(compute, m), drrt.edge(m, compute)
        if out is None or back is None:
            continue
        key = (-len(covered), out.time + back.time, m)
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def build_visits(seq, drrt: MsDrrt, hp: HyperParams, policy: str = MPVU_FINAL) -> tuple:
    visits = []
    for i, d in enumerate(seq):
        c = drrt.rendezvous[d]
        check = None
        if policy == MPVU_EVERY or (policy == MPVU_FINAL and i == len(seq) - 1):
            check = pick_mpvu(drrt, c)
        visits.append(Visit(d, c, hp.epochs_per_visit, check))
    return tuple(visits)


def predict_plan_outcome(model, visits, drrt: MsDrrt, hp: HyperParams, start: Optional[str] = None,
                         acc0: Optional[dict] = None) -> Outcome:
    """Fold the surrogate over ``visits``; time and bytes include the trip home."""
    if isinstance(visits, TrainingPlan):
        visits = visits.visits
    st = _State(start or model.owner, 0.0, 0, dict(acc0) if acc0 is not None else model.start_accuracy())
    for v in visits:
        st = _train_at(model, drrt, hp, st, v.data, v.compute, v.epochs)
        if st is not None and v.mpvu is not None:
            st = _mpvu_round(model, drrt, st, v.mpvu)
        if st is None:
            raise NoPath(f"plan for {model.id} uses a link missing from the MS-DRRT")
    st = _go_home(model, drrt, st)
    if st is None:
        raise NoPath(f"no route home for {model.id}")
    return Outcome(st.acc, st.t, st.bytes)


# route computation


def beam_score(parent, child, requirements) -> float:
    """Requirement-gap reduction per second of the step parent -> child."""
    gain = shortfall(parent.acc, requirements) - shortfall(child.acc, requirements)
    dt = child.t - parent.t
    return gain / dt if dt > 0 else (math.inf if gain > 0 else 0.0)


class _Search:
    def __init__(self, model, drrt, hp, cfg, budget, start, acc0, exclude):
        self.model, self.drrt, self.hp, self.cfg = model, drrt, hp, cfg
        self.req = model.requirements
        self.budget = model.deadline if budget is None else budget
        self.root = _State(start or model.owner, 0.0, 0,
                           dict(acc0) if acc0 is not None else model.start_accuracy())
        self.candidates = sorted(set(drrt.data) - set(exclude))
        self.best_feasible = None  # (time, seq, final_state)
        self.best_fallback = None  # (-margin, time, seq, final_state)
        self.explored = 0
        self._mpvu = {}

    def mpvu_for(self, compute):
        if compute not in self._mpvu:
            self._mpvu[compute] = pick_mpvu(self.drrt, compute)
        return self._mpvu[compute]

    def extend(self, st, seq, d):
        c = self.drrt.rendezvous[d]
        child = _train_at(self.model, self.drrt, self.hp, st, d, c, self.hp.epochs_per_visit)
        if child is not None and self.cfg.mpvu_policy == MPVU_EVERY:
            m = self.mpvu_for(c)
            if m is not None:
                child = _mpvu_round(self.model, self.drrt, child, m)
        return child

    def complete(self, st, seq):
        if seq and self.cfg.mpvu_policy == MPVU_FINAL:
            m = self.mpvu_for(st.loc)
            if m is not None:
                st = _mpvu_round(self.model, self.drrt, st, m)
                if st is None:
                    return None
        return _go_home(self.model, self.drrt, st)

    def consider(self, st, seq):
        self.explored += 1
        fin = self.complete(st, seq)
        if fin is None:
            return
        if meets(fin.acc, self.req) and fin.t <= self.budget:
            key = (fin.t, seq)
            if self.best_feasible is None or key < self.best_feasible[:2]:
                self.best_feasible = (fin.t, seq, fin)
        else:
            key = (-margin(fin.acc, self.req), fin.t, seq)
            if self.best_fallback is None or key < self.best_fallback[:3]:
                self.best_fallback = key + (fin,)

    def bound(self):
        return math.inf if self.best_feasible is None else self.best_feasible[0]

    def exact(self):
        # Accuracy updates are monotone and time is additive, so a prefix that
        # reaches the same node set and location no sooner and no better on any
        # topic than an earlier one cannot end better. Depth-first order meets
        # the lexicographically smaller prefix first, which keeps the tie-break.
        topics = sorted(self.root.acc)
        front: dict = {}

        def dominated(seq, st):
            key = (frozenset(seq), st.loc)
            acc = tuple(st.acc[t] for t in topics)
            seen = front.setdefault(key, [])
            for t, a in seen:
                if t <= st.t and all(x >= y for x, y in zip(a, acc)):
                    return True
            seen.append((st.t, acc))
            return False

        def dfs(seq, st):
            self.consider(st, seq)
            for d in self.candidates:
                if d in seq:
                    continue
                child = self.extend(st, seq, d)
                if child is None or child.t > self.bound():
                    continue
                cseq = seq + (d,)
                if dominated(cseq, child):
                    continue
                dfs(cseq, child)

        dfs((), self.root)

    def beam(self):
        width = self.cfg.beam_width
        self.consider(self.root, ())
        beam = [((), self.root)]
        for _ in range(len(self.candidates)):
            children = []
            for seq, st in beam:
                for d in self.candidates:
                    if d in seq:
                        continue
                    child = self.extend(st, seq, d)
                    if child is None or child.t > self.bound():
                        continue
                    cseq = seq + (d,)
                    self.consider(child, cseq)
                    children.append((-beam_score(st, child, self.req), cseq, child))
            if not children:
                break
            children.sort(key=lambda c: (c[0], c[1]))
            beam = [(s, st) for _, s, st in children[:width]]

    def result(self, exact: bool) -> TrainingPlan:
        if self.best_feasible is not None:
            t, seq, fin = self.best_feasible
            feasible = True
        elif self.best_fallback is not None:
            _, t, seq, fin = self.best_fallback
            feasible = False
        else:
            raise NoCandidates(f"model {self.model.id}: no route home from {self.root.loc}")
        return TrainingPlan(
            model_id=self.model.id,
            visits=build_visits(seq, self.drrt, self.hp, self.cfg.mpvu_policy),
            accuracy=fin.acc, completion_time=fin.t, bytes=fin.bytes, feasible=feasible,
            margin=margin(fin.acc, self.req), start=self.root.loc, hyperparams=self.hp,
            exact=exact, explored=self.explored)


def mtrce_plan(model, drrt: MsDrrt, hp: HyperParams, cfg: SearchConfig = SearchConfig(),
               budget: Optional[float] = None, start: Optional[str] = None, acc0: Optional[dict] = None,
               exclude=(), force_beam: bool = False) -> TrainingPlan:
    """Best visit sequence: feasible first, then fastest, then smallest id sequence.

    Exhaustive (with time-bound pruning) up to ``cfg.n_exact`` candidate data
    nodes, beam search beyond. With no feasible sequence the plan maximizing
    the worst requirement margin is returned, flagged infeasible.
    """
    if drrt is None or not drrt.data:
        raise NoCandidates(f"model {model.id}: empty MS-DRRT")
    s = _Search(model, drrt, hp, cfg, budget, start, acc0, exclude)
    exact = not force_beam and len(s.candidates) <= cfg.n_exact
    if exact:
        s.exact()
    else:
        s.beam()
    return s.result(exact)


def tfam_admit(model, drrt: Optional[MsDrrt], hp: HyperParams, cfg: SearchConfig = SearchConfig(),
               budget: Optional[float] = None, plan: Optional[TrainingPlan] = None) -> Admission:
    if drrt is None:
        return Admission(False, reason="no-data")
    if plan is None:
        try:
            plan = mtrce_plan(model, drrt, hp, cfg, budget)
        except NoCandidates:
            return Admission(False, reason="no-data")
    margins = {t: plan.accuracy[t] - r for t, r in sorted(model.requirements.items())}
    if plan.feasible:
        return Admission(True, plan, None, margins)
    reason = "deadline" if meets(plan.accuracy, model.requirements) else "accuracy"
    return Admission(False, plan, reason, margins)


DEFAULT_GRID = {"epochs_per_visit": (1, 2, 4), "gain": (0.1, 0.2, 0.4)}


def grid_points(base: HyperParams, grid: Optional[dict] = None):
    grid = DEFAULT_GRID if grid is None else grid
    names = [f.name for f in fields(HyperParams) if f.name in grid]
    unknown = set(grid) - set(names)
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}")
    for values in itertools.product(*(grid[n] for n in names)):
        yield replace(base, **dict(zip(names, values)))


def tag_hpo_search(model, drrt: MsDrrt, base: HyperParams, grid=None, cfg: SearchConfig = SearchConfig(),
                   budget: Optional[float] = None, **kw):
    """Run MTRCE at every grid point; keep the best (feasible, fastest, first)."""
    best = None
    for i, hp in enumerate(grid_points(base, grid)):
        plan = mtrce_plan(model, drrt, hp, cfg, budget, **kw)
        key = (0, plan.completion_time, i) if plan.feasible else (1, -plan.margin, i)
        if best is None or key < best[0]:
            best = (key, hp, plan)
    return best[1], best[2]


def tag_hpo_select(model, drrt: MsDrrt, base: HyperParams, grid=None, cfg: SearchConfig = SearchConfig(),
                   budget: Optional[float] = None) -> HyperParams:
    return tag_hpo_search(model, drrt, base, grid, cfg, budget)[0]


def mpvu_evaluate(acc: dict, test_topics, sigma: float = 0.0, rng=None) -> dict:
    """Measured accuracy on the MPVU's test topics, optionally noisy."""
    out = {}
    for t in sorted(set(test_topics) & set(acc)):
        v = acc[t]
        if sigma > 0:
            v = min(1.0, max(0.0, v + rng.gauss(0.0, sigma)))
        out[t] = v
    return out


def expand_abstract_visits(model, plan: TrainingPlan, member_drrt: MsDrrt, hp: HyperParams,
                           cfg: SearchConfig, budget: float, members: dict) -> TrainingPlan:
    """Tier-2 planning: replace each abstract-terminal visit with an ordering of
    its qualifying members, chosen by full-plan prediction."""
    seq_parts = []
    for d in plan.sequence:
        if d in members:
            seq_parts.append(sorted(m for m in members[d] if m in member_drrt.data))
        else:
            seq_parts.append([d] if d in member_drrt.data else [])
    options = [list(itertools.permutations(p)) if len(p) <= 5 else [tuple(p)] for p in seq_parts]
    best = None
    for combo in itertools.product(*options):
        seq = tuple(itertools.chain.from_iterable(combo))
        visits = build_visits(seq, member_drrt, hp, cfg.mpvu_policy)
        try:
            out = predict_plan_outcome(model, visits, member_drrt, hp, start=plan.start)
        except NoPath:
            continue
        ok = meets(out.accuracy, model.requirements) and out.time <= budget
        key = (0, out.time, seq) if ok else (1, -margin(out.accuracy, model.requirements), out.time, seq)
        if best is None or key < best[0]:
            best = (key, visits, out, ok)
    if best is None:
        raise NoCandidates(f"model {model.id}: abstract terminals have no usable members")
    _, visits, out, ok = best
    return TrainingPlan(model.id, visits, out.accuracy, out.time, out.bytes, ok,
                        margin(out.accuracy, model.requirements), plan.start, hp, plan.exact, plan.explored)


# execution


class ComputeOccupancy:
    """FIFO serialization of training work per compute node."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.busy: dict[str, bool] = {}
        self.waiting: dict[str, deque] = {}

    def acquire(self, node: str, duration: float, on_done: Callable[[], None], label: str = ""):
        q = self.waiting.setdefault(node, deque())
        q.append((duration, on_done, label, self.engine.now))
        if not self.busy.get(node):
            self._start(node)

    def _start(self, node):
        q = self.waiting[node]
        if not q:
            self.busy[node] = False
            return
        duration, on_done, label, _ = q.popleft()
        self.busy[node] = True

        def finish(ev):
            on_done()
            self._start(node)

        self.engine.schedule(self.engine.now + duration, "compute_done", node, {"job": label}, finish)


class TrainingJob:
    """Moves one model along its plan over simulated time.

    ``replan(job, resume)`` is invoked when a remaining node becomes
    unreachable; it must eventually call ``resume(plan_or_None, reason)``.
    """

    def __init__(self, engine: Engine, net: Network, model: ModelSpec, plan: TrainingPlan, drrt: MsDrrt,
                 hp: HyperParams, occupancy: Optional[ComputeOccupancy] = None, replan=None,
                 sigma: float = 0.0, mpvu_topics: Optional[dict] = None, on_finish=None,
                 submit_time: Optional[float] = None):
        self.engine, self.net, self.model = engine, net, model
        self.plan, self.drrt, self.hp = plan, drrt, hp
        self.occupancy = occupancy or ComputeOccupancy(engine)
        self.replan_fn = replan
        self.sigma = sigma
        self.mpvu_topics = mpvu_topics or {m: set(c) for m, c in drrt.mpvus.items()}
        self.on_finish = on_finish
        self.submit_time = engine.now if submit_time is None else submit_time
        self.loc = plan.start
        self.acc = model.start_accuracy()
        self.visits = list(plan.visits)
        self.idx = 0
        self.visited: list[str] = []
        self.log: list[dict] = []
        self.reports: list[dict] = []
        self.status = "pending"
        self.reason = None
        self.dirty = False
        self.replans = 0
        self.bytes = 0
        self.waited = 0.0
        self.start_time = None
        self.end_time = None
        self.unreachable_visits = 0
        net.subscribers.append(self._on_churn)

    @property
    def name(self):
        return f"model:{self.model.id}"

    def _note(self, kind, **body):
        entry = {"t": self.engine.now, "event": kind}
        entry.update(body)
        self.log.append(entry)
        self.engine.schedule(self.engine.now, kind, self.name, dict(body))

    def _remaining_nodes(self):
        nodes = {self.model.owner}
        for v in self.visits[self.idx:]:
            nodes |= {v.data, v.compute} | ({v.mpvu} if v.mpvu else set())
        return nodes

    def _on_churn(self, node, reachable):
        if self.status == "running" and not reachable and node in self._remaining_nodes():
            self.dirty = True

    def change_params(self, changes: dict) -> bool:
        """Swap in new hyper-parameters mid-training. The visit in progress finishes
        under the old ones; the rest of the route is replanned under the new ones."""
        if self.status not in ("running", "replanning"):
            return False
        self.hp = replace(self.hp, **changes)
        self._note("params_changed", node=self.loc, **changes)
        if self.status == "running":
            self.dirty = True
        return True

    def start(self):
        self.status = "running"
        self.start_time = self.engine.now
        self._note("train_start", node=self.loc)
        self._next()

    def _move(self, dst, then, fail):
        if self.loc == dst:
            self.engine.schedule(self.engine.now, "arrive", dst, {"src": dst, "dst": dst}, lambda ev: then())
            return
        route = self.net.route_path(self.loc, dst, plane=DP)
        self.engine.transmit(Message(self.loc, dst, DP, self.model.size_bytes, category="training"),
                             list(route.links), lambda m: then(), lambda m: fail())
        self.bytes += self.model.size_bytes * route.hops

    def _next(self):
        if self.status != "running":
            return
        if self.idx >= len(self.visits):
            return self._go_home()
        v = self.visits[self.idx]
        needed = [v.data, v.compute] + ([v.mpvu] if v.mpvu else [])
        if self.dirty or not all(self.net.is_reachable(n) for n in needed):
            return self._replan()
        try:
            self._move(v.compute, lambda: self._arrived(v), self._replan)
        except (NoPath, Unreachable):
            self._replan()

    def _arrived(self, v):
        self.loc = v.compute
        if not (self.net.is_reachable(v.data) and self.net.is_reachable(v.compute)):
            return self._replan()
        self.visited.append(v.data)
        self._note("visit", node=v.data, compute=v.compute)
        cand = self.drrt.data[v.data]
        dur = compute_time(v.epochs, cand.entries, self.model.ops_per_sample, self.drrt.compute[v.compute])
        queued_at = self.engine.now
        hp = self.hp

        def done():
            # start of service = finish - dur; waiting is whatever precedes it
            self.waited += max(0.0, (self.engine.now - queued_at) - dur)
            self.acc = surrogate_train_step(self.acc, cand.entries, hp, v.epochs)
            self._note("trained", node=v.data, compute=v.compute)
            if v.mpvu:
                self._check(v)
            else:
                self.idx += 1
                self._next()

        self.occupancy.acquire(v.compute, dur, done, self.model.id)

    def _check(self, v):
        home = v.compute

        def at_mpvu():
            self.loc = v.mpvu
            rng = self.engine.rng(f"mpvu:{v.mpvu}")
            measured = mpvu_evaluate(self.acc, self.mpvu_topics.get(v.mpvu, ()), self.sigma, rng)
            rep = {"t": self.engine.now, "mpvu": v.mpvu, "accuracy": measured}
            self.reports.append(rep)
            self._note("mpvu_report", node=v.mpvu)
            try:
                self._move(home, back, self._stranded)
            except (NoPath, Unreachable):
                self._stranded()

        def back():
            self.loc = home
            self.idx += 1
            self._next()

        try:
            self._move(v.mpvu, at_mpvu, self._replan)
        except (NoPath, Unreachable):
            self._replan()

    def _replan(self):
        if self.status != "running":
            return
        self.dirty = False
        self.replans += 1
        self._note("replan", node=self.loc)
        if self.replan_fn is None:
            return self._abort("unreachable")
        self.status = "replanning"
        self.replan_fn(self, self._resume)

    def _resume(self, plan: Optional[TrainingPlan], reason: Optional[str] = None, drrt: Optional[MsDrrt] = None):
        self.status = "running"
        if plan is None or not plan.feasible:
            if plan is not None and reason is None:
                reason = "deadline" if meets(plan.accuracy, self.model.requirements) else "accuracy"
            return self._abort(reason or "no-data")
        if drrt is not None:
            self.drrt = drrt
            self.mpvu_topics.update({m: set(c) for m, c in drrt.mpvus.items()})
        self.plan = plan
        self.visits = list(plan.visits)
        self.idx = 0
        self._next()

    def _abort(self, reason):
        self.status = "aborting"
        self.reason = reason
        self._note("aborted", reason=reason)
        self._go_home()

    def _stranded(self):
        self.reason = self.reason or "stranded"
        self._finish("aborted")

    def _go_home(self):
        final = "done" if self.status == "running" else "aborted"
        try:
            self._move(self.model.owner, lambda: self._home(final), self._stranded)
        except (NoPath, Unreachable):
            self._stranded()

    def _home(self, final):
        self.loc = self.model.owner
        self._finish(final)

    def _finish(self, final):
        self.status = final
        self.end_time = self.engine.now
        self._note("returned" if final == "done" else "ended", node=self.loc, status=final)
        if self.net.subscribers.count(self._on_churn):
            self.net.subscribers.remove(self._on_churn)
        if self.on_finish:
            self.on_finish(self)

    @property
    def duration(self):
        return None if self.end_time is None else self.end_time - self.start_time

    def meets_requirements(self) -> bool:
        return meets(self.acc, self.model.requirements)


class Replanner:
    """Re-gathers the G-KRRM and recomputes the remaining route from where the
    model is now, keeping the accuracy it has already earned."""

    def __init__(self, net: Network, engine: Engine, origin: str, trust_floor: float,
                 cfg: SearchConfig = SearchConfig(), sizes: ProbeSizes = ProbeSizes(), scope=None):
        self.net, self.engine, self.origin = net, engine, origin
        self.trust_floor, self.cfg, self.sizes = trust_floor, cfg, sizes
        self.scope = scope

    def __call__(self, job: TrainingJob, resume):
        scope = self.scope if self.scope is not None else list(self.net.nodes)
        Gather(self.net, self.engine, self.origin, scope, lambda g: self._plan(g, job, resume), self.sizes)

    def _plan(self, g, job: TrainingJob, resume):
        model = job.model
        budget = model.deadline - (self.engine.now - job.submit_time)
        try:
            drrt = extract_ms_drrt(model, g, self.trust_floor, self.net, anchors=(job.loc,))
            plan = mtrce_plan(model, drrt, job.hp, self.cfg, budget=budget, start=job.loc, acc0=job.acc,
                              exclude=job.visited)
        except (NoCandidates, KeyError):
            return resume(None, "no-data")
        resume(plan, None, drrt)


def execute_plan(plan: TrainingPlan, engine: Engine, net: Network, model: ModelSpec, drrt: MsDrrt,
                 hp: HyperParams, **kw) -> TrainingJob:
    """Start executing an admitted plan now; the returned job fills in as the engine runs."""
    job = TrainingJob(engine, net, model, plan, drrt, hp, **kw)
    job.start()
    return job

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daitn.engine import Engine
from daitn.network import ChurnEntry, KasRegion, Link, Network, NodeDescriptor
from daitn.inference import (CapacityLedger, DeploymentRequest, InferenceService, NoQualifyingReplica,
                             QuerySpec, gateway_latency, mdo_place, placement_cost, predicted_response,
                             qfam_admit, qirce_route)
from daitn.topology import Gather, QsQrrt, ReplicaRecord, StalenessPolicy, gather_gkrrm

import oracles

MB = 2**20


def record(rid, queue=0, service=0.05, up=0.011, down=0.011, accuracy=0.9, host=None):
    return ReplicaRecord("m", rid, host or f"h-{rid}", accuracy, service, 1 / service, queue, 0.01, up, down, 0.01)


def query(min_acc=0.5, max_rt=10.0, owner="u", qid="q", req=1024, resp=1024):
    return QuerySpec(qid, owner, "t", min_acc, max_rt, req, resp)


# Q-FAM / QIRCE


def test_empty_view_rejected_no_model():
    assert qfam_admit(query(), QsQrrt("q", "t", (), 0.0)).reason == "no-model"


def test_low_accuracy_rejected():
    qs = QsQrrt("q", "t", (record("a", accuracy=0.90),), 0.0)
    assert qfam_admit(query(min_acc=0.95), qs).reason == "accuracy"
    with pytest.raises(NoQualifyingReplica):
        qirce_route(query(min_acc=0.95), qs)


def test_single_qualifying_replica_accepted():
    qs = QsQrrt("q", "t", (record("a", accuracy=0.5), record("b", accuracy=0.97)), 0.0)
    dec = qfam_admit(query(min_acc=0.95), qs)
    assert dec.accepted and dec.replica_id == "b" and dec.host == "h-b"


def test_slow_replica_rejected_on_latency():
    qs = QsQrrt("q", "t", (record("a", queue=100),), 0.0)
    dec = qfam_admit(query(max_rt=1.0), qs)
    assert not dec.accepted and dec.reason == "latency"


def test_empty_queue_preferred():
    qs = QsQrrt("q", "t", (record("a", queue=3), record("b", queue=0)), 0.0)
    assert qirce_route(query(), qs)[0] == "b"


def test_equal_replicas_tie_break_on_id():
    qs = QsQrrt("q", "t", (record("b"), record("a")), 0.0)
    assert qirce_route(query(), qs)[0] == "a"


def test_response_formula_example():
    rec = record("a", queue=2, service=0.05, up=0.01 + 0.001, down=0.001 + 0.01)
    assert predicted_response(rec) == pytest.approx(0.172, abs=1e-12)


replicas = st.lists(st.builds(record, st.text("abcdef", min_size=1, max_size=3), st.integers(0, 6),
                              st.sampled_from([0.05, 0.1, 0.25]), st.floats(0, 0.1), st.floats(0, 0.1),
                              st.floats(0, 1)),
                    min_size=1, max_size=6, unique_by=lambda r: r.replica_id)


@settings(max_examples=100, deadline=None)
@given(replicas, st.floats(0, 1))
def test_route_attains_exhaustive_minimum(reps, min_acc):
    best, ids = oracles.brute_force_route(min_acc, reps)
    qs = QsQrrt("q", "t", tuple(reps), 0.0)
    if best is None:
        with pytest.raises(NoQualifyingReplica):
            qirce_route(query(min_acc=min_acc), qs)
    else:
        rid, predicted = qirce_route(query(min_acc=min_acc), qs)
        assert rid == ids[0] and predicted == best


# MDO


def mdo_net(n_hosts=4, seed=0, storage=10.0, compute=10.0):
    """Three single-gateway regions; MDFP hosts spread over them."""
    rng = random.Random(seed)
    regions = ["A", "B", "C"]
    nodes = [NodeDescriptor(f"g{r}", "compute", r) for r in regions]
    links = [Link("gA", "gB", rng.uniform(0.01, 0.05), 1e9), Link("gB", "gC", rng.uniform(0.01, 0.05), 1e9),
             Link("gA", "gC", rng.uniform(0.01, 0.05), 1e9)]
    for i in range(n_hosts):
        r = regions[i % 3]
        nodes.append(NodeDescriptor(f"h{i}", "mdfp", r, 1.0, compute, storage))
        links.append(Link(f"g{r}", f"h{i}", round(rng.uniform(0.001, 0.02), 4), 1e9))
    return Network(nodes, links, [KasRegion(r, (), f"g{r}") for r in regions])


def deployment(k=1, storage=1.0, demand=None):
    return DeploymentRequest("m", "gA", 10**6, {"t": 0.9}, 0.05, storage, 1.0,
                             demand or {"A": 3.0, "B": 1.0, "C": 2.0}, k)


def _place(net, req):
    g = gather_gkrrm(net, Engine(0, net.is_reachable), origin="gA")
    return mdo_place(req, g, net, CapacityLedger(net)), gateway_latency(net, g), g


def test_single_feasible_host():
    net = mdo_net(n_hosts=1)
    assert _place(net, deployment())[0] == ["h0"]


@pytest.mark.parametrize("seed", range(5))
def test_k1_over_three_hosts_is_optimal(seed):
    net = mdo_net(n_hosts=3, seed=seed)
    hosts, lat, _ = _place(net, deployment())
    cost, combo = oracles.brute_force_placement(deployment().demand, ["h0", "h1", "h2"], 1, lat)
    assert placement_cost(deployment().demand, hosts, lat) == cost


@pytest.mark.parametrize("seed", range(5))
def test_k2_over_four_hosts_against_oracle(seed):
    net = mdo_net(n_hosts=4, seed=seed)
    req = deployment(k=2)
    hosts, lat, _ = _place(net, req)
    greedy = placement_cost(req.demand, hosts, lat)
    opt, _ = oracles.brute_force_placement(req.demand, ["h0", "h1", "h2", "h3"], 2, lat)
    assert opt <= greedy <= 1.5 * opt


def test_no_room_rejected_capacity():
    net = mdo_net(n_hosts=2, storage=1.0)
    assert _place(net, deployment(k=3))[0] == ("rejected", "capacity")


def test_unreachable_host_never_chosen():
    net = mdo_net(n_hosts=3)
    net.apply_churn(ChurnEntry(0.0, "h0", False))
    hosts, _, _ = _place(net, deployment(k=2))
    assert "h0" not in hosts


# execution


def service(latency=0.25, service_time=0.5, hosts=1, storage=10.0):
    """Querier u and MDFP hosts behind gateway g; dyadic delays keep sums exact."""
    nodes = [NodeDescriptor("g", "compute", "r"), NodeDescriptor("u", "user", "r")]
    links = [Link("u", "g", latency, MB)]
    for i in range(hosts):
        nodes.append(NodeDescriptor(f"h{i}", "mdfp", "r", 1.0, 100.0, storage))
        links.append(Link("g", f"h{i}", latency * (i + 1), MB))
    net = Network(nodes, links, [KasRegion("r", (), "g")])
    e = Engine(0, net.is_reachable)
    gather = lambda scope, done, cat: Gather(net, e, "g", scope, done, category=cat)
    svc = InferenceService(e, net, "g", StalenessPolicy(max_age=1e6), gather)
    req = DeploymentRequest("m", "g", MB, {"t": 0.95}, service_time, 1.0, 1.0, {"r": 1.0}, hosts)
    svc.deploy(req)
    e.run()
    return net, e, svc


def test_idle_replica_actual_equals_predicted():
    _, e, svc = service()
    svc.submit(query(qid="q1"))
    e.run()
    log = svc.query_log["q1"]
    assert log["status"] == "answered" and log["actual"] == log["predicted"]


@pytest.mark.parametrize("n", [2, 5, 9])
def test_simultaneous_queries_form_arithmetic_progression(n):
    _, e, svc = service()
    for i in range(n):
        svc.submit(query(qid=f"q{i}"))
    e.run()
    times = [svc.query_log[f"q{i}"]["actual"] for i in range(n)]
    assert [b - a for a, b in zip(times, times[1:])] == [0.5] * (n - 1)
    for i in range(n):
        log = svc.query_log[f"q{i}"]
        assert log["actual"] <= log["predicted"]
    assert svc.registry[0].served == [f"q{i}" for i in range(n)]


def test_low_utilization_does_not_migrate():
    _, e, svc = service(hosts=2)
    for i in range(3):
        svc.submit(query(qid=f"q{i}"))
    e.run()
    assert svc.rebalance(window=e.now, rho_hi=0.8) == [] and svc.migrations == []


def test_hot_replica_migrates_once_and_new_queries_follow():
    net, e, svc = service(hosts=2)
    # keep only one replica so the other MDFP is free to receive it
    svc.registry = [r for r in svc.registry if r.host == "h1"]
    svc.ledger.release("h0", 1.0, 1.0)
    for i in range(12):
        svc.submit(query(qid=f"q{i}"))
    e.run_until(e.now + 4.0)
    moves = svc.rebalance(window=2.0, rho_hi=0.8)
    assert len(moves) == 1 and moves[0][1] == "h0"
    e.run()
    assert len(svc.migrations) == 1 and "cutover" in svc.migrations[0]
    svc.submit(query(qid="late"))
    e.run()
    assert svc.query_log["late"]["served_by"] == svc.migrations[0]["to_replica"]
    assert all(svc.query_log[f"q{i}"]["status"] == "answered" for i in range(12))


def test_no_alternative_host_counts_warning():
    _, e, svc = service(hosts=1)
    for i in range(12):
        svc.submit(query(qid=f"q{i}"))
    e.run_until(e.now + 4.0)
    assert svc.rebalance(window=2.0, rho_hi=0.8) == []
    assert svc.rebalance_warnings == 1


def test_host_churn_reroutes_queued_queries_once():
    net, e, svc = service(hosts=2)
    for i in range(4):
        svc.submit(query(qid=f"q{i}"))
    e.run_until(e.now + 1.0)
    first = {svc.query_log[f"q{i}"]["replica"] for i in range(4)}
    victim = svc.replica(sorted(first)[0]).host
    net.apply_churn(ChurnEntry(e.now, victim, False))
    e.run()
    for i in range(4):
        log = svc.query_log[f"q{i}"]
        assert log["status"] in ("answered", "failed")
        if log["attempts"] > 1 and log["status"] == "answered":
            assert log["served_by"] != log["replica"]
    assert any(svc.query_log[f"q{i}"]["attempts"] == 2 for i in range(4))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.5, 1.0, 2.0]), st.integers(1, 3)), min_size=1, max_size=12))
def test_fifo_and_admission_soundness(arrivals):
    _, e, svc = service(hosts=2)
    t0 = e.now
    n = 0
    for at, count in sorted(arrivals):
        for _ in range(count):
            q = query(qid=f"q{n:02d}")
            e.schedule(t0 + at, "query_submit", q.id, {}, lambda ev, q=q: svc.submit(q))
            n += 1
    e.run()
    for log in svc.query_log.values():
        if log["decision"] == "accepted":
            assert log["status"] == "answered" and log["actual"] <= log["predicted"]
    for rep in svc.registry:
        admitted = sorted((svc.query_log[q]["admitted_at"], q) for q in rep.served)
        assert [q for _, q in admitted] == rep.served
    assert svc.ledger.violations == []


def test_capacity_never_exceeded():
    net = mdo_net(n_hosts=2, storage=2.0)
    g = gather_gkrrm(net, Engine(0, net.is_reachable), origin="gA")
    ledger = CapacityLedger(net)
    placed = 0
    for _ in range(6):
        hosts = mdo_place(deployment(k=1), g, net, ledger)
        if isinstance(hosts, tuple):
            break
        for h in hosts:
            ledger.commit(h, 1.0, 1.0)
        placed += 1
    assert placed == 4 and ledger.violations == []
    assert all(ledger.residual(h)[0] >= 0 for h in ("h0", "h1"))

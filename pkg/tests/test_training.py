import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daitn.engine import Engine
from daitn.network import DataInventory, InventoryEntry, KasRegion, Link, Network, NodeDescriptor
from daitn.topology import extract_ms_drrt, gather_gkrrm
from daitn.training import (MPVU_NONE, HyperParams, ModelSpec, SearchConfig, build_visits, execute_plan,
                            mpvu_evaluate, mtrce_plan, predict_plan_outcome, surrogate_train_step,
                            tag_hpo_search, tag_hpo_select, tfam_admit)

import oracles
from instances import training_instance

BIG = 1e12  # volume large enough that v / (v + v_half) rounds to 1


def entry(topic, volume=BIG, quality=1.0):
    return InventoryEntry(topic, volume, quality)


# surrogate


def test_saturated_topic_stays_at_one():
    hp = HyperParams(gain=0.4)
    assert surrogate_train_step({"x": 1.0}, [entry("x", 500.0, 0.7)], hp) == {"x": 1.0}


def test_gain_example():
    out = surrogate_train_step({"x": 0.5}, [entry("x")], HyperParams(epochs_per_visit=1, gain=0.2))
    assert out["x"] == pytest.approx(0.6, abs=1e-9)


def test_forgetting_example():
    out = surrogate_train_step({"x": 0.8}, [entry("y")], HyperParams(forgetting=0.05))
    assert out["x"] == pytest.approx(0.76, abs=1e-15)


hps = st.builds(HyperParams, epochs_per_visit=st.integers(1, 5), gain=st.floats(0.01, 0.99),
                forgetting=st.floats(0.0, 0.99), v_half=st.floats(1.0, 1e4))
entries = st.lists(st.builds(InventoryEntry, st.sampled_from("xyz"), st.floats(0, 1e5), st.floats(0, 1)),
                   max_size=3, unique_by=lambda e: e.topic)
accs = st.fixed_dictionaries({t: st.floats(0, 1) for t in "xyz"})


@settings(max_examples=200, deadline=None)
@given(accs, st.lists(entries, max_size=6), hps)
def test_accuracy_stays_bounded(acc, visits, hp):
    for es in visits:
        acc = surrogate_train_step(acc, es, hp)
        assert all(0.0 <= a <= 1.0 for a in acc.values())


@settings(max_examples=200, deadline=None)
@given(accs, st.lists(entries, max_size=6), hps)
def test_no_forgetting_means_monotone(acc, visits, hp):
    hp = HyperParams(hp.epochs_per_visit, hp.batch_size, hp.gain, 0.0, hp.v_half)
    for es in visits:
        nxt = surrogate_train_step(acc, es, hp)
        assert all(nxt[t] >= acc[t] for t in acc)
        acc = nxt


@settings(max_examples=100, deadline=None)
@given(accs, entries, hps)
def test_surrogate_matches_reference(acc, es, hp):
    assert surrogate_train_step(acc, es, hp) == pytest.approx(oracles.step(acc, es, hp), abs=1e-12)


@pytest.mark.parametrize("field,value", [("epochs_per_visit", 0), ("gain", 1.0), ("forgetting", 1.0),
                                         ("v_half", 0.0), ("batch_size", 0)])
def test_hyperparams_validated(field, value):
    with pytest.raises(ValueError):
        HyperParams(**{field: value})


def test_model_requirement_range_validated():
    with pytest.raises(ValueError):
        ModelSpec("m", "o", 1, 1.0, {"x": 1.01}, 10.0)


# prediction


def _inst(seed=3, **kw):
    inst = None
    while inst is None:
        inst = training_instance(seed, **kw)
        seed += 1
    return inst


def test_empty_plan_predicts_nothing():
    _, model, hp, drrt = _inst()
    out = predict_plan_outcome(model, (), drrt, hp)
    assert out.accuracy == model.start_accuracy() and out.time == 0.0 and out.bytes == 0


def test_single_visit_is_one_step_one_transfer_one_compute():
    _, model, hp, drrt = _inst()
    d = sorted(drrt.data)[0]
    c = drrt.rendezvous[d]
    out = predict_plan_outcome(model, build_visits((d,), drrt, hp, MPVU_NONE), drrt, hp)
    vol = sum(e.volume for e in drrt.data[d].entries)
    t = drrt.edge(model.owner, c).time + hp.epochs_per_visit * vol * model.ops_per_sample / drrt.compute[c]
    t = t + drrt.edge(c, model.owner).time
    assert out.time == t
    assert out.accuracy == surrogate_train_step(model.start_accuracy(), drrt.data[d].entries, hp)


@pytest.mark.parametrize("policy", ["none", "final", "every"])
def test_three_visit_fold_matches_reference(policy):
    _, model, hp, drrt = _inst(n_data=4)
    seq = tuple(sorted(drrt.data))[:3]
    out = predict_plan_outcome(model, build_visits(seq, drrt, hp, policy), drrt, hp)
    acc, t, nbytes = oracles.fold(model, drrt, hp, seq, policy)
    assert out.accuracy == acc and out.time == t and out.bytes == nbytes


# route computation


def _one_node_instance():
    nodes = [NodeDescriptor("o", "user", "r"), NodeDescriptor("d", "data", "r", 0.9, 1e12)]
    inv = {"d": DataInventory("d", (entry("x", 4000.0, 0.9), entry("y", 4000.0, 0.9)))}
    net = Network(nodes, [Link("o", "d", 0.01, 1e9)], [KasRegion("r", (), "o")], inv)
    model = ModelSpec("m", "o", 10**6, 1e6, {"x": 0.3, "y": 0.3}, 60.0)
    drrt = extract_ms_drrt(model, gather_gkrrm(net, Engine(), origin="o"), 0.5, net)
    return net, model, HyperParams(2, gain=0.4), drrt


def test_single_sufficient_node_is_whole_plan():
    _, model, hp, drrt = _one_node_instance()
    plan = mtrce_plan(model, drrt, hp)
    assert plan.feasible and plan.sequence == ("d",)
    assert tfam_admit(model, drrt, hp).accepted


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_four_node_plan_matches_brute_force(seed):
    inst = training_instance(seed, n_data=4)
    if inst is None:
        return
    _, model, hp, drrt = inst
    plan = mtrce_plan(model, drrt, hp)
    ref = oracles.brute_force_plan(model, drrt, hp)
    assert (plan.feasible, plan.completion_time, plan.sequence) == (ref["feasible"], ref["time"], ref["seq"])


def test_deadline_too_short_rejected_on_deadline():
    _, model, hp, drrt = _inst(tight=False)
    tiny = ModelSpec(model.id, model.owner, model.size_bytes, model.ops_per_sample, {"x": 1e-9}, 0.001)
    drrt.topics = ("x",)
    adm = tfam_admit(tiny, drrt, hp)
    assert not adm.accepted and adm.reason == "deadline"


def test_missing_view_rejected_as_no_data():
    _, model, hp, _ = _inst()
    assert tfam_admit(model, None, hp).reason == "no-data"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_rejection_agrees_with_brute_force(seed):
    inst = training_instance(seed)
    if inst is None:
        return
    _, model, hp, drrt = inst
    adm = tfam_admit(model, drrt, hp)
    assert adm.accepted == oracles.brute_force_plan(model, drrt, hp)["feasible"]
    if not adm.accepted:
        assert adm.reason in ("accuracy", "deadline")
        assert set(adm.margins) == set(model.requirements)


@pytest.mark.xfail(strict=True, reason="width-16 beam ranked by gap reduction per second misses the only "
                   "feasible orderings on 2 of 1261 feasible eight-node instances (seeds 168, 1491)")
def test_beam_feasible_whenever_exact_is():
    misses = []
    for seed in [*range(160, 172), 1491]:
        inst = training_instance(seed, n_data=8)
        if inst is None:
            continue
        _, model, hp, drrt = inst
        if mtrce_plan(model, drrt, hp).feasible and not mtrce_plan(model, drrt, hp, force_beam=True).feasible:
            misses.append(seed)
    assert misses == []


@pytest.mark.parametrize("seed", range(5))
def test_beam_plan_is_consistent(seed):
    _, model, hp, drrt = _inst(seed * 13, n_data=7)
    plan = mtrce_plan(model, drrt, hp, force_beam=True)
    assert not plan.exact
    assert len(set(plan.sequence)) == len(plan.sequence) and set(plan.sequence) <= set(drrt.data)
    out = predict_plan_outcome(model, plan, drrt, hp)
    assert (out.time, out.accuracy, out.bytes) == (plan.completion_time, plan.accuracy, plan.bytes)
    meets = all(out.accuracy[t] >= r for t, r in model.requirements.items())
    assert plan.feasible == (meets and out.time <= model.deadline)


def test_beam_used_above_n_exact():
    _, model, hp, drrt = _inst(n_data=5)
    assert not mtrce_plan(model, drrt, hp, SearchConfig(n_exact=len(drrt.data) - 1)).exact


# hyper-parameters


def test_single_point_grid():
    _, model, hp, drrt = _inst()
    assert tag_hpo_select(model, drrt, hp, {"gain": (0.33,)}) == HyperParams(
        hp.epochs_per_visit, hp.batch_size, 0.33, hp.forgetting, hp.v_half)


def test_grid_prefers_feasible_over_fast():
    # one epoch is quicker but cannot reach the bar; four epochs can
    for seed in range(200):
        inst = training_instance(seed, n_data=3, tight=False)
        if inst is None:
            continue
        _, model, hp, drrt = inst
        p1 = mtrce_plan(model, drrt, HyperParams(1, gain=0.1, v_half=hp.v_half))
        p4 = mtrce_plan(model, drrt, HyperParams(4, gain=0.1, v_half=hp.v_half))
        if not p1.feasible and p4.feasible:
            break
    else:
        pytest.fail("no two-point fixture found")
    base = HyperParams(gain=0.1, v_half=hp.v_half)
    chosen, plan = tag_hpo_search(model, drrt, base, {"epochs_per_visit": (1, 4)})
    assert chosen.epochs_per_visit == 4 and plan.feasible


def test_grid_ties_go_to_first_point():
    _, model, hp, drrt = _inst()
    # batch size does not enter the surrogate, so every point scores the same
    chosen = tag_hpo_select(model, drrt, hp, {"batch_size": (64, 16, 32)})
    assert chosen.batch_size == 64


def test_unknown_grid_key():
    _, model, hp, drrt = _inst()
    with pytest.raises(ValueError):
        tag_hpo_select(model, drrt, hp, {"momentum": (0.9,)})


# MPVU


def test_mpvu_noiseless_report():
    acc = {"x": 0.4, "y": 0.9}
    assert mpvu_evaluate(acc, {"x", "z"}) == {"x": 0.4}


def test_mpvu_noise_is_seeded():
    acc = {"x": 0.4, "y": 0.9}
    a = mpvu_evaluate(acc, {"x", "y"}, 0.01, random.Random(5))
    b = mpvu_evaluate(acc, {"x", "y"}, 0.01, random.Random(5))
    assert a == b and a != acc


# execution


def _execute(seed):
    net, model, hp, drrt = _inst(seed)
    plan = mtrce_plan(model, drrt, hp)
    e = Engine(seed, net.is_reachable)
    job = execute_plan(plan, e, net, model, drrt, hp)
    e.run()
    return plan, job


@pytest.mark.parametrize("seed", [1, 7, 11, 19])
def test_execution_matches_prediction(seed):
    plan, job = _execute(seed)
    assert job.status == "done"
    assert job.duration == plan.completion_time
    assert job.acc == plan.accuracy
    assert job.bytes == plan.bytes


def test_mpvu_report_equals_current_state():
    for seed in range(50):
        plan, job = _execute(seed)
        if job.reports:
            break
    else:
        pytest.fail("no plan with an MPVU check")
    rep = job.reports[-1]
    assert rep["accuracy"] == {t: job.acc[t] for t in rep["accuracy"]}

"""Seeded generators for small random networks and training/placement instances."""

import random

from daitn.engine import Engine
from daitn.network import (DataInventory, InventoryEntry, KasRegion, Link, Network, NodeDescriptor)
from daitn.topology import NoCandidates, extract_ms_drrt, gather_gkrrm
from daitn.training import HyperParams, ModelSpec

TOPICS = ("x", "y")


def _connect(rng, ids, extra=2):
    """Random spanning tree plus a few extra edges."""
    links = []
    order = list(ids)
    rng.shuffle(order)
    pairs = set()
    for i in range(1, len(order)):
        j = rng.randrange(i)
        pairs.add(tuple(sorted((order[i], order[j]))))
    for _ in range(extra):
        a, b = rng.sample(order, 2)
        pairs.add(tuple(sorted((a, b))))
    for a, b in sorted(pairs):
        links.append(Link(a, b, round(rng.uniform(0.001, 0.05), 4), rng.choice((1e8, 5e8, 1e9))))
    return links


def training_network(rng, n_data, with_compute=True, with_mpvu=True, untrusted=True):
    nodes = [NodeDescriptor("o", "user", "r")]
    inv = {}
    for i in range(n_data):
        cap = 0.0 if (with_compute and rng.random() < 0.25) else rng.choice((5e11, 1e12, 2e12))
        trust = rng.uniform(0.4, 1.0) if untrusted else rng.uniform(0.6, 1.0)
        nid = f"d{i}"
        nodes.append(NodeDescriptor(nid, "data", "r", round(trust, 3), cap))
        topics = [t for t in TOPICS if rng.random() < 0.7] or [rng.choice(TOPICS)]
        inv[nid] = DataInventory(nid, tuple(
            InventoryEntry(t, float(rng.randrange(200, 5000)), round(rng.uniform(0.5, 1.0), 3)) for t in topics))
    if with_compute:
        nodes.append(NodeDescriptor("c", "compute", "r", 0.95, rng.choice((1e12, 4e12))))
    if with_mpvu:
        nodes.append(NodeDescriptor("m", "mpvu", "r"))
        inv["m"] = DataInventory("m", tuple(InventoryEntry(t, 100.0, 1.0) for t in TOPICS))
    links = _connect(rng, [n.id for n in nodes])
    return Network(nodes, links, [KasRegion("r", (), "o")], inv)


def training_instance(seed, n_data=None, tau=0.5, policy_free=False, tight=True):
    """(net, model, hp, drrt) or None when no data node qualifies."""
    rng = random.Random(seed)
    n = n_data or rng.randint(2, 6)
    net = training_network(rng, n, with_mpvu=not policy_free)
    hp = HyperParams(epochs_per_visit=rng.randint(1, 3), gain=round(rng.uniform(0.2, 0.6), 3),
                     forgetting=rng.choice((0.0, 0.01, 0.05)), v_half=1000.0)
    req = {t: round(rng.uniform(0.15, 0.6), 3) for t in TOPICS}
    deadline = round(rng.uniform(5.0, 60.0), 2) if tight else 1e6
    model = ModelSpec("m1", "o", rng.choice((10**7, 10**8, 5 * 10**8)), 1e8, req, deadline)
    engine = Engine(seed, net.is_reachable)
    g = gather_gkrrm(net, engine, origin="o")
    try:
        drrt = extract_ms_drrt(model, g, tau, net)
    except NoCandidates:
        return None
    return net, model, hp, drrt


def training_instances(count, start_seed=0, **kw):
    out = []
    seed = start_seed
    while len(out) < count:
        inst = training_instance(seed, **kw)
        if inst is not None:
            out.append((seed, inst))
        seed += 1
    return out

"""Brute-force reference implementations used to check the optimizers.

These deliberately avoid calling the package's own search or prediction
code: the surrogate, the time fold and the tie-breaks are re-derived here
from their definitions and only the MS-DRRT data (edges, rendezvous,
inventories) is shared.
"""

import itertools
import math


def gain(quality, volume, eta, epochs, v_half):
    return (1.0 - (1.0 - eta * quality) ** epochs) * (volume / (volume + v_half))


def step(acc, entries, hp):
    present = {e.topic: e for e in entries if e.volume > 0}
    out = {}
    for t, a in acc.items():
        if t in present:
            e = present[t]
            out[t] = a + gain(e.quality, e.volume, hp.gain, hp.epochs_per_visit, hp.v_half) * (1.0 - a)
        else:
            out[t] = a * (1.0 - hp.forgetting)
        out[t] = min(1.0, max(0.0, out[t]))
    return out


def edge_time(drrt, a, b):
    if a == b:
        return 0.0, 0
    e = drrt.edges.get((a, b))
    return (None, None) if e is None else (e.time, e.hops)


def best_mpvu(drrt, at):
    best = None
    for m, covered in drrt.mpvus.items():
        out, _ = edge_time(drrt, at, m)
        back, _ = edge_time(drrt, m, at)
        if out is None or back is None:
            continue
        key = (-len(covered), out + back, m)
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def fold(model, drrt, hp, seq, policy="final", start=None, acc0=None):
    """(accuracy, time, bytes) for visiting ``seq`` then going home, or None if a leg is missing."""
    loc = start or model.owner
    t, nbytes = 0.0, 0
    acc = dict(acc0) if acc0 is not None else {k: float(model.initial_accuracy.get(k, 0.0))
                                                 for k in sorted(model.requirements)}
    for i, d in enumerate(seq):
        c = drrt.rendezvous[d]
        dt, hops = edge_time(drrt, loc, c)
        if dt is None:
            return None
        t = t + dt
        nbytes += model.size_bytes * hops
        volume = sum(e.volume for e in drrt.data[d].entries)
        t = t + hp.epochs_per_visit * volume * model.ops_per_sample / drrt.compute[c]
        acc = step(acc, drrt.data[d].entries, hp)
        loc = c
        if policy == "every" or (policy == "final" and i == len(seq) - 1):
            m = best_mpvu(drrt, c)
            if m is not None:
                out, h1 = edge_time(drrt, c, m)
                back, h2 = edge_time(drrt, m, c)
                t = t + out
                t = t + back
                nbytes += model.size_bytes * (h1 + h2)
    dt, hops = edge_time(drrt, loc, model.owner)
    if dt is None:
        return None
    return acc, t + dt, nbytes + model.size_bytes * hops


def all_sequences(candidates):
    for r in range(len(candidates) + 1):
        yield from itertools.permutations(sorted(candidates), r)


def brute_force_plan(model, drrt, hp, policy="final", budget=None, start=None, acc0=None, exclude=()):
    """Returns dict(feasible, time, seq, accuracy, margin) under the lexicographic
    objective: feasible first, then time, then node-id sequence; with nothing
    feasible, the largest worst-case margin, then time, then sequence."""
    budget = model.deadline if budget is None else budget
    req = model.requirements
    cands = [d for d in drrt.data if d not in exclude]
    best_ok, best_fb = None, None
    for seq in all_sequences(cands):
        r = fold(model, drrt, hp, seq, policy, start, acc0)
        if r is None:
            continue
        acc, t, _ = r
        m = min(acc[k] - v for k, v in req.items())
        if all(acc[k] >= v for k, v in req.items()) and t <= budget:
            if best_ok is None or (t, seq) < best_ok[:2]:
                best_ok = (t, seq, acc, m)
        elif best_fb is None or (-m, t, seq) < best_fb[:3]:
            best_fb = (-m, t, seq, acc, m)
    if best_ok is not None:
        t, seq, acc, m = best_ok
        return {"feasible": True, "time": t, "seq": seq, "accuracy": acc, "margin": m}
    _, t, seq, acc, m = best_fb
    return {"feasible": False, "time": t, "seq": seq, "accuracy": acc, "margin": m}


def response_time(rec):
    return rec.up_time + rec.queue_length * rec.service_time + rec.service_time + rec.down_time


def brute_force_route(min_accuracy, replicas):
    """(min predicted response, sorted ids attaining it) over qualifying replicas."""
    q = [r for r in replicas if r.accuracy >= min_accuracy]
    if not q:
        return None, []
    best = min(response_time(r) for r in q)
    return best, sorted(r.replica_id for r in q if response_time(r) == best)


def placement_cost(demand, hosts, latency):
    total = 0.0
    for kas in sorted(demand):
        if demand[kas] == 0:
            continue
        total += demand[kas] * min(latency(kas, h) for h in hosts)
    return total


def brute_force_placement(demand, feasible_hosts, k, latency):
    """Best k-subset of distinct hosts by demand-weighted nearest-host latency."""
    best = None
    for combo in itertools.combinations(sorted(feasible_hosts), k):
        c = placement_cost(demand, combo, latency)
        if best is None or c < best[0]:
            best = (c, combo)
    return best if best is not None else (math.inf, ())

"""Regenerate the bundled scenario files under src/daitn/scenarios/."""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "daitn" / "scenarios"

GBPS10 = 1.25e9  # bytes/s
GBPS1 = 1.25e8


def node(id, kind, kas, trust=1.0, compute=0.0, storage=0.0):
    return {"id": id, "kind": kind, "kas": kas, "trust": trust, "compute_capacity": compute, "storage": storage}


def link(a, b, latency, bandwidth=GBPS10):
    return {"a": a, "b": b, "latency": latency, "bandwidth": bandwidth}


def inv(**topics):
    return [{"topic": t, "volume": v, "quality": q} for t, (v, q) in sorted(topics.items())]


def healthcare() -> dict:
    nodes = [
        # north: ministry (model owner), regional DCC gateway, national compute centre
        node("gw-n", "compute", "north", 1.0, 0.0),
        node("ministry", "user", "north"),
        node("cc-n", "compute", "north", 0.95, 4e12),
        node("mpvu-n", "mpvu", "north"),
        node("mdfp-n", "mdfp", "north", 1.0, 8.0, 40.0),
        node("h01", "data", "north", 0.90, 1e12),
        node("h02", "data", "north", 0.85, 2e12),
        node("h03", "data", "north", 0.80, 0.0),
        node("h04", "data", "north", 0.40, 2e12),
        # south: hierarchical region with an abstract terminal of two clinics
        node("gw-s", "compute", "south", 1.0, 0.0),
        node("mpvu-s", "mpvu", "south"),
        node("mdfp-s", "mdfp", "south", 1.0, 8.0, 40.0),
        node("h05", "data", "south", 0.90, 1.5e12),
        node("h06", "data", "south", 0.50, 1e12),
        node("h07", "data", "south", 0.75, 1.5e12),
        node("h08", "data", "south", 0.70, 5e11),
        node("h09", "data", "south", 0.70, 5e11),
        # west: no local T-FAM, delegates admission to the north
        node("gw-w", "compute", "west", 1.0, 0.0),
        node("mpvu-w", "mpvu", "west"),
        node("mdfp-w", "mdfp", "west", 1.0, 8.0, 40.0),
        node("h10", "data", "west", 0.88, 1.5e12),
        node("h11", "data", "west", 0.30, 1e12),
        node("h12", "data", "west", 0.55, 1e12),
    ]
    inventories = {
        "h01": inv(general=(6000, 0.85), oncology=(1500, 0.8)),
        "h02": inv(general=(3000, 0.80), cardiology=(5000, 0.92)),
        "h03": inv(general=(4000, 0.90), pediatrics=(2000, 0.85)),
        "h04": inv(general=(5000, 0.60), cardiology=(6000, 0.70)),
        "h05": inv(general=(5000, 0.88), oncology=(3000, 0.9)),
        "h06": inv(cardiology=(4000, 0.65), neurology=(2000, 0.7)),
        "h07": inv(general=(2000, 0.80), cardiology=(4000, 0.90)),
        "h08": inv(general=(1000, 0.80), cardiology=(1000, 0.85)),
        "h09": inv(general=(1000, 0.75), cardiology=(800, 0.80)),
        "h10": inv(general=(3000, 0.85), cardiology=(3000, 0.88)),
        "h11": inv(general=(8000, 0.50)),
        "h12": inv(cardiology=(2000, 0.60), oncology=(2000, 0.7)),
        "mpvu-n": inv(general=(500, 1.0), cardiology=(500, 1.0), oncology=(500, 1.0)),
        "mpvu-s": inv(general=(500, 1.0), cardiology=(500, 1.0)),
        "mpvu-w": inv(general=(500, 1.0), cardiology=(500, 1.0), oncology=(500, 1.0)),
    }
    links = [
        link("gw-n", "ministry", 0.002), link("gw-n", "cc-n", 0.001), link("gw-n", "mpvu-n", 0.002),
        link("gw-n", "mdfp-n", 0.002), link("gw-n", "h01", 0.005), link("gw-n", "h02", 0.006),
        link("cc-n", "h03", 0.004), link("gw-n", "h04", 0.005), link("h01", "h02", 0.003),
        link("gw-s", "mpvu-s", 0.002), link("gw-s", "mdfp-s", 0.002), link("gw-s", "h05", 0.006),
        link("gw-s", "h06", 0.007), link("gw-s", "h07", 0.005), link("h07", "h08", 0.004),
        link("h08", "h09", 0.003), link("h05", "h07", 0.004),
        link("gw-w", "mpvu-w", 0.002), link("gw-w", "mdfp-w", 0.002), link("gw-w", "h10", 0.006),
        link("gw-w", "h11", 0.008), link("gw-w", "h12", 0.007),
        link("gw-n", "gw-s", 0.020, GBPS1 * 8), link("gw-n", "gw-w", 0.025, GBPS1 * 8),
        link("gw-s", "gw-w", 0.030, GBPS1 * 4),
    ]
    regions = [
        {"id": "north", "gateway": "gw-n", "control_mode": "centralized"},
        {"id": "south", "gateway": "gw-s", "control_mode": "hierarchical"},
        {"id": "west", "gateway": "gw-w", "control_mode": "non_standalone", "delegate": "north"},
    ]
    models = [
        {"id": "cardiology", "owner": "ministry", "size_bytes": 2_000_000_000, "ops_per_sample": 2e9,
         "requirements": {"general": 0.80, "cardiology": 0.95},
         "initial_accuracy": {"general": 0.55, "cardiology": 0.30},
         "deadline": 240.0, "submit_at": 0.0,
         "hyperparams": {"epochs_per_visit": 2, "batch_size": 32, "gain": 0.2, "forgetting": 0.01,
                         "v_half": 1000.0}},
        {"id": "oncology", "owner": "ministry", "size_bytes": 2_000_000_000, "ops_per_sample": 2e9,
         "requirements": {"general": 0.80, "oncology": 0.85},
         "initial_accuracy": {"general": 0.55, "oncology": 0.30},
         "deadline": 240.0, "submit_at": 400.0,
         "hyperparams": {"epochs_per_visit": 2, "batch_size": 32, "gain": 0.2, "forgetting": 0.01,
                         "v_half": 1000.0}},
    ]
    deployments = [
        {"model_id": "cardio-assist", "provider": "ministry", "size_bytes": 2_000_000_000,
         "accuracy": {"general": 0.82, "cardiology": 0.96}, "service_time": 0.5, "storage_need": 10.0,
         "compute_need": 2.0, "demand": {"north": 5.0, "south": 3.0, "west": 2.0}, "replicas": 2,
         "submit_at": 800.0},
    ]
    queries = []
    for i, (owner, t) in enumerate([("h01", 820.0), ("h05", 825.0), ("h10", 830.0), ("h07", 835.0),
                                    ("h02", 840.0), ("h12", 845.0)]):
        queries.append({"id": f"q{i + 1:02d}", "owner": owner, "topic": "cardiology", "min_accuracy": 0.9,
                        "max_response_time": 2.0, "request_bytes": 4096, "response_bytes": 16384, "at": t})
    queries.append({"id": "q07", "owner": "h03", "topic": "cardiology", "min_accuracy": 0.99,
                    "max_response_time": 2.0, "request_bytes": 4096, "response_bytes": 16384, "at": 850.0})
    return {
        "version": 1,
        "name": "healthcare",
        "description": "Department-specific assistant models trained sequentially across twelve hospitals "
                       "in three knowledge regions; see README.md next to this file.",
        "seed": 7,
        "t_end": 2000.0,
        "orchestrator": "gw-n",
        "engine": {"trust_floor": 0.6, "staleness": {"max_age": 60.0}, "sigma": 0.0, "horizon": 2,
                   "aats_ttl": 12},
        "network": {"nodes": nodes, "inventories": inventories, "links": links, "regions": regions,
                    "abstract_terminals": [{"id": "south-clinics", "members": ["h08", "h09"]}], "churn": []},
        "models": models,
        "deployments": deployments,
        "queries": queries,
        "packets": [],
    }


def churn() -> dict:
    """Single region; the planned second hospital drops out while the model trains at the first."""
    nodes = [
        node("gw", "compute", "r", 1.0, 0.0),
        node("owner", "user", "r"),
        node("mpvu", "mpvu", "r"),
        node("a", "data", "r", 0.9, 1e12),
        node("b", "data", "r", 0.9, 1e12),
        node("c", "data", "r", 0.9, 1e12),
        node("d", "data", "r", 0.9, 1e12),
    ]
    inventories = {
        "a": inv(x=(3000, 0.9)),
        "b": inv(x=(3000, 0.9), y=(3000, 0.9)),
        "c": inv(y=(3000, 0.85)),
        "d": inv(x=(2000, 0.8), y=(2000, 0.8)),
        "mpvu": inv(x=(100, 1.0), y=(100, 1.0)),
    }
    links = [link("gw", "owner", 0.002), link("gw", "mpvu", 0.002), link("gw", "a", 0.004),
             link("gw", "b", 0.004), link("gw", "c", 0.006), link("gw", "d", 0.008), link("a", "b", 0.002)]
    return {
        "version": 1,
        "name": "churn",
        "description": "A planned data node becomes unreachable mid-training, forcing a replan.",
        "seed": 3,
        "t_end": 1000.0,
        "orchestrator": "gw",
        "engine": {"trust_floor": 0.6},
        "network": {"nodes": nodes, "inventories": inventories, "links": links,
                    "regions": [{"id": "r", "gateway": "gw", "control_mode": "centralized"}],
                    "churn": [{"at": 5.0, "node": "b", "reachable": False},
                              {"at": 400.0, "node": "b", "reachable": True}]},
        "models": [{"id": "m", "owner": "owner", "size_bytes": 500_000_000, "ops_per_sample": 1e9,
                    "requirements": {"x": 0.5, "y": 0.5}, "deadline": 120.0,
                    "hyperparams": {"epochs_per_visit": 2, "gain": 0.3}, "grid": {}}],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in (("healthcare", healthcare), ("churn", churn)):
        path = OUT / f"{name}.json"
        path.write_text(json.dumps(fn(), indent=2) + "\n")
        print(path)


if __name__ == "__main__":
    main()

"""Scenario files: JSON schema, semantic validation, parsing, normalized
serialization and ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema

from .aats import END_TO_END, PER_HOP
from .inference import DeploymentRequest, QuerySpec
from .network import (AbstractTerminal, ChurnEntry, DataInventory, InventoryEntry, KasRegion, Link,
                      NodeDescriptor, ValidationError, check_network)
from .topology import ProbeSizes, StalenessPolicy
from .training import MPVU_FINAL, HyperParams, ModelSpec, SearchConfig, grid_points

SCHEMA_VERSION = 1


class ScenarioIOError(OSError):
    pass


def load_schema() -> dict:
    text = resources.files("daitn").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def bundled_dir() -> Path:
    return Path(str(resources.files("daitn").joinpath("scenarios")))


def bundled(name: str) -> Path:
    return bundled_dir() / f"{name}.json"


@dataclass(frozen=True)
class EngineParams:
    staleness: StalenessPolicy = StalenessPolicy()
    probe_bytes: ProbeSizes = ProbeSizes()
    trust_floor: float = 0.5
    rho_hi: float = 0.8
    window: float = 60.0
    rebalance_interval: Optional[float] = None
    beam_width: int = 16
    n_exact: int = 8
    mpvu_policy: str = MPVU_FINAL
    horizon: int = 2
    aats_ttl: int = 16
    sigma: float = 0.0

    def search(self) -> SearchConfig:
        return SearchConfig(self.n_exact, self.beam_width, self.mpvu_policy)


@dataclass(frozen=True)
class ModelEntry:
    spec: ModelSpec
    hyperparams: HyperParams = HyperParams()
    grid: Optional[dict] = None
    # scripted mid-training changes: (time, partial hyper-parameter dict), sorted by time
    param_changes: tuple = ()


@dataclass(frozen=True)
class PacketEntry:
    id: str
    source: str
    ttl: int
    payload: Union[str, QuerySpec, DeploymentRequest]
    mode: str = PER_HOP
    horizon: Optional[int] = None
    at: float = 0.0


@dataclass
class Scenario:
    name: str
    seed: int
    t_end: float
    orchestrator: str
    engine: EngineParams
    nodes: list
    links: list
    regions: list
    inventories: dict
    ats: list = field(default_factory=list)
    churn: list = field(default_factory=list)
    models: list = field(default_factory=list)
    deployments: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    packets: list = field(default_factory=list)
    description: str = ""

    def model(self, model_id: str) -> ModelEntry:
        for m in self.models:
            if m.spec.id == model_id:
                return m
        raise KeyError(model_id)


# overrides


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> dict:
    """``a.b.c=value`` on the raw scenario dict. List items are addressed by
    their ``id`` (or ``model_id``) or by integer index; the value is parsed as
    a JSON literal and falls back to a plain string."""
    if "=" not in assignment:
        raise ValidationError(f"override {assignment!r} is not key=value")
    path, value = assignment.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ValidationError(f"override {assignment!r} has an empty key")
    cur = raw
    for i, k in enumerate(keys):
        last = i == len(keys) - 1
        if isinstance(cur, list):
            idx = None
            for j, item in enumerate(cur):
                if isinstance(item, dict) and k in (item.get("id"), item.get("model_id")):
                    idx = j
                    break
            if idx is None and k.isdigit() and int(k) < len(cur):
                idx = int(k)
            if idx is None:
                raise ValidationError(f"override {path!r}: no list item {k!r}")
            if last:
                cur[idx] = _parse_value(value)
            else:
                cur = cur[idx]
        elif isinstance(cur, dict):
            if last:
                cur[k] = _parse_value(value)
            else:
                cur = cur.setdefault(k, {})
        else:
            raise ValidationError(f"override {path!r}: cannot descend into {type(cur).__name__}")
    return raw


# validation


def schema_errors(raw) -> list[str]:
    validator = jsonschema.Draft202012Validator(load_schema())
    out = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def _try(errors, label, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        errors.append(f"{label}: {exc}")
        return None


def _build(raw: dict):
    """Parse a schema-valid dict. Returns (scenario or None, semantic errors)."""
    errors: list[str] = []
    net = raw["network"]
    eng = raw.get("engine", {})
    st = eng.get("staleness", {})
    engine = _try(errors, "engine", lambda: EngineParams(
        staleness=StalenessPolicy(**st),
        probe_bytes=ProbeSizes(**eng.get("probe_bytes", {})),
        **{k: v for k, v in eng.items() if k not in ("staleness", "probe_bytes")}))
    nodes = [NodeDescriptor(n["id"], n["kind"], n["kas"], n.get("trust", 1.0), n.get("compute_capacity", 0.0),
                            n.get("storage", 0.0), n.get("reachable", True), n.get("energy"))
             for n in net["nodes"]]
    links = [Link(l["a"], l["b"], l["latency"], l["bandwidth"], frozenset(l.get("planes", ("cp", "dp"))))
             for l in net["links"]]
    regions = [KasRegion(r["id"], (), r["gateway"], r.get("control_mode", "centralized"), r.get("delegate"))
               for r in net["regions"]]
    ats = [AbstractTerminal(a["id"], tuple(a["members"])) for a in net.get("abstract_terminals", [])]
    churn = [ChurnEntry(c["at"], c["node"], c["reachable"]) for c in net.get("churn", [])]
    errors += check_network(nodes, links, regions, ats, churn)
    node_ids = {n.id for n in nodes}
    region_ids = {r.id for r in regions}

    inventories = {}
    for owner, entries in sorted(net.get("inventories", {}).items()):
        if owner not in node_ids:
            errors.append(f"inventory for unknown node {owner!r}")
        topics = [e["topic"] for e in entries]
        if len(set(topics)) != len(topics):
            errors.append(f"inventory {owner!r}: duplicate topic")
        inventories[owner] = DataInventory(owner, tuple(
            InventoryEntry(e["topic"], e["volume"], e["quality"], e.get("freshness_age", 0.0)) for e in entries))

    orchestrator = raw.get("orchestrator", regions[0].gateway)
    if orchestrator not in node_ids:
        errors.append(f"orchestrator {orchestrator!r} is not a node")

    models = []
    seen = set()
    for m in raw.get("models", []):
        label = f"model {m['id']!r}"
        if m["id"] in seen:
            errors.append(f"{label}: duplicate id")
        seen.add(m["id"])
        if m["owner"] not in node_ids:
            errors.append(f"{label}: unknown owner {m['owner']!r}")
        spec = _try(errors, label, lambda: ModelSpec(
            m["id"], m["owner"], m["size_bytes"], m["ops_per_sample"], dict(sorted(m["requirements"].items())),
            m["deadline"], dict(sorted(m.get("initial_accuracy", {}).items())), m.get("submit_at", 0.0)))
        hp = _try(errors, label, lambda: HyperParams(**m.get("hyperparams", {})))
        grid = m.get("grid")
        if grid is not None and hp is not None:
            grid = {k: tuple(v) for k, v in grid.items()}
            _try(errors, f"{label} grid", lambda: list(grid_points(hp, grid)))
        changes = []
        for c in m.get("param_changes", []):
            if hp is not None and _try(errors, f"{label} param change at {c['at']}",
                                       lambda: replace(hp, **c["hyperparams"])) is not None:
                changes.append((float(c["at"]), dict(sorted(c["hyperparams"].items()))))
        changes.sort(key=lambda c: c[0])
        if spec is not None and hp is not None:
            models.append(ModelEntry(spec, hp, grid, tuple(changes)))

    deployments = []
    seen = set()
    for d in raw.get("deployments", []):
        label = f"deployment {d['model_id']!r}"
        if d["model_id"] in seen:
            errors.append(f"{label}: duplicate model id")
        seen.add(d["model_id"])
        req = _parse_deployment(d, errors, label, node_ids, region_ids)
        if req is not None:
            deployments.append(req)

    queries = []
    seen = set()
    for q in raw.get("queries", []):
        label = f"query {q['id']!r}"
        if q["id"] in seen:
            errors.append(f"{label}: duplicate id")
        seen.add(q["id"])
        spec = _parse_query(q, errors, label, node_ids)
        if spec is not None:
            queries.append(spec)

    packets = []
    seen = set()
    model_ids = {m["id"] for m in raw.get("models", [])}
    for p in raw.get("packets", []):
        label = f"packet {p['id']!r}"
        if p["id"] in seen:
            errors.append(f"{label}: duplicate id")
        seen.add(p["id"])
        if p["source"] not in node_ids:
            errors.append(f"{label}: unknown source {p['source']!r}")
        pl = p["payload"]
        payload = None
        if "model" in pl:
            payload = pl["model"]
            if payload not in model_ids:
                errors.append(f"{label}: unknown model {payload!r}")
        elif "query" in pl:
            payload = _parse_query(pl["query"], errors, label, node_ids)
        else:
            payload = _parse_deployment(pl["deployment"], errors, label, node_ids, region_ids)
        mode = p.get("mode", PER_HOP)
        horizon = p.get("horizon")
        if mode == END_TO_END and horizon is not None:
            errors.append(f"{label}: end_to_end packets see the whole network; drop horizon")
        if payload is not None:
            packets.append(PacketEntry(p["id"], p["source"], p["ttl"], payload, mode, horizon, p.get("at", 0.0)))

    if errors or engine is None:
        return None, errors
    sc = Scenario(
        name=raw.get("name", "scenario"), seed=raw.get("seed", 0), t_end=raw.get("t_end", 1e6),
        orchestrator=orchestrator, engine=engine, nodes=nodes, links=links, regions=regions,
        inventories=inventories, ats=ats, churn=churn, models=models, deployments=deployments,
        queries=queries, packets=packets, description=raw.get("description", ""))
    return sc, []


def _parse_query(q, errors, label, node_ids):
    for key in ("owner", "destination"):
        if q.get(key) is not None and q[key] not in node_ids:
            errors.append(f"{label}: unknown {key} {q[key]!r}")
    return _try(errors, label, lambda: QuerySpec(
        q["id"], q["owner"], q["topic"], q["min_accuracy"], q["max_response_time"],
        q.get("request_bytes", 1024), q.get("response_bytes", 1024), q.get("destination"), q.get("at", 0.0)))


def _parse_deployment(d, errors, label, node_ids, region_ids):
    if d["provider"] not in node_ids:
        errors.append(f"{label}: unknown provider {d['provider']!r}")
    for kas in sorted(d["demand"]):
        if kas not in region_ids:
            errors.append(f"{label}: demand names unknown region {kas!r}")
    return _try(errors, label, lambda: DeploymentRequest(
        d["model_id"], d["provider"], d["size_bytes"], dict(sorted(d["accuracy"].items())), d["service_time"],
        d.get("storage_need", 0.0), d.get("compute_need", 0.0), dict(sorted(d["demand"].items())),
        d.get("replicas", 1), d.get("submit_at", 0.0)))


def validate_dict(raw) -> list[str]:
    """Every schema error, or (for schema-valid input) every semantic error."""
    errors = schema_errors(raw)
    if errors:
        return errors
    return _build(raw)[1]


def parse(raw: dict) -> Scenario:
    errors = schema_errors(raw)
    if errors:
        raise ValidationError(errors)
    sc, errors = _build(raw)
    if errors:
        raise ValidationError(errors)
    return sc


def read_raw(path, overrides=()) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ScenarioIOError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    raw = copy.deepcopy(raw)
    for o in overrides:
        apply_override(raw, o)
    return raw


def load(path, overrides=()) -> Scenario:
    return parse(read_raw(path, overrides))


def validate_file(path, overrides=()) -> list[str]:
    try:
        raw = read_raw(path, overrides)
    except ValidationError as exc:
        return exc.errors
    return validate_dict(raw)


# normalized serialization


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _query_dict(q: QuerySpec) -> dict:
    return _drop_none(asdict(q))


def _deployment_dict(d: DeploymentRequest) -> dict:
    return asdict(d)


def to_dict(sc: Scenario) -> dict:
    """Fully explicit form: every default filled in, so equal scenarios give equal dicts."""
    e = sc.engine
    engine = {f.name: getattr(e, f.name) for f in fields(EngineParams)}
    engine["staleness"] = asdict(e.staleness)
    engine["probe_bytes"] = asdict(e.probe_bytes)
    models = []
    for m in sc.models:
        d = asdict(m.spec)
        d["hyperparams"] = asdict(m.hyperparams)
        if m.grid is not None:
            d["grid"] = {k: list(v) for k, v in m.grid.items()}
        if m.param_changes:
            d["param_changes"] = [{"at": t, "hyperparams": dict(h)} for t, h in m.param_changes]
        models.append(d)
    packets = []
    for p in sc.packets:
        if isinstance(p.payload, str):
            payload = {"model": p.payload}
        elif isinstance(p.payload, QuerySpec):
            payload = {"query": _query_dict(p.payload)}
        else:
            payload = {"deployment": _deployment_dict(p.payload)}
        packets.append({"id": p.id, "source": p.source, "ttl": p.ttl, "mode": p.mode, "horizon": p.horizon,
                        "at": p.at, "payload": payload})
    return {
        "version": SCHEMA_VERSION,
        "name": sc.name,
        "description": sc.description,
        "seed": sc.seed,
        "t_end": sc.t_end,
        "orchestrator": sc.orchestrator,
        "engine": engine,
        "network": {
            "nodes": [{"id": n.id, "kind": n.kind, "kas": n.kas_id, "trust": n.trust,
                       "compute_capacity": n.compute_capacity, "storage": n.storage, "reachable": n.reachable,
                       "energy": n.energy} for n in sc.nodes],
            "inventories": {o: [asdict(x) for x in inv.entries] for o, inv in sorted(sc.inventories.items())},
            "links": [{"a": l.a, "b": l.b, "latency": l.latency, "bandwidth": l.bandwidth,
                       "planes": sorted(l.planes)} for l in sc.links],
            "regions": [{"id": r.id, "gateway": r.gateway, "control_mode": r.control_mode,
                         "delegate": r.delegate_kas} for r in sc.regions],
            "abstract_terminals": [{"id": a.id, "members": list(a.members)} for a in sc.ats],
            "churn": [asdict(c) for c in sc.churn],
        },
        "models": models,
        "deployments": [_deployment_dict(d) for d in sc.deployments],
        "queries": [_query_dict(q) for q in sc.queries],
        "packets": packets,
    }

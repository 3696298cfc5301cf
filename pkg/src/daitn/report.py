"""Run reports: deterministic JSON, CSV metrics, and filtered views."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from importlib import resources
from typing import Optional

import jsonschema

from .engine import CP, DP

REPORT_VERSION = 1
CSV_COLUMNS = ("entity", "id", "status", "predicted_time", "actual_time", "deadline", "bytes")
FILTERS = ("timeline", "latency", "cp")


class UnknownFilter(ValueError):
    pass


def round_floats(obj):
    """9 significant digits, written in shortest round-trip form; non-finite becomes null."""
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float("%.9g" % obj)
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(round_floats(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def trace_digest(trace) -> str:
    h = hashlib.sha256()
    for rec in trace:
        h.update(json.dumps(round_floats(rec), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def _percentile(values, p):
    if not values:
        return None
    xs = sorted(values)
    k = max(0, math.ceil(p / 100.0 * len(xs)) - 1)
    return xs[k]


def latency_summary(values) -> dict:
    """Nearest-rank percentiles; an empty set gives nulls, never zeros."""
    return {"count": len(values), "p50": _percentile(values, 50), "p95": _percentile(values, 95),
            "max": max(values) if values else None}


def build_report(run, wall_clock: Optional[float] = None) -> dict:
    e = run.engine
    models = []
    for mid in sorted(run.models):
        rec = run.models[mid]
        job = run.jobs.get(mid)
        entry = {"id": mid, "owner": rec["owner"], "status": rec["status"], "deadline": rec["deadline"],
                 "submitted": rec["submitted"], "dcc": rec.get("dcc"), "admission": rec.get("admission")}
        timeline = list(rec["timeline"])
        if job is not None:
            timeline += job.log
            measured = job.reports[-1]["accuracy"] if job.reports else {}
            entry["execution"] = {
                "status": job.status, "reason": job.reason, "start": job.start_time, "end": job.end_time,
                "duration": job.duration, "accuracy": dict(sorted(job.acc.items())),
                "measured_accuracy": dict(sorted(measured.items())), "mpvu_reports": job.reports,
                "meets_requirements": job.meets_requirements(), "visited": list(job.visited),
                "replans": job.replans, "bytes": job.bytes, "waited": job.waited,
                "within_deadline": job.end_time is not None
                and job.end_time - job.model.submit_at <= job.model.deadline,
            }
        if "packet" in rec:
            entry["packet"] = rec["packet"]
            timeline += run.packets[rec["packet"]].log
        entry["timeline"] = sorted(timeline, key=lambda x: x["t"])
        models.append(entry)

    queries = []
    for qid in sorted(run.inference.query_log):
        queries.append(dict(run.inference.query_log[qid]))
    counts = {}
    for q in queries:
        counts[q["status"]] = counts.get(q["status"], 0) + 1
    answered = [q["actual"] for q in queries if q["status"] == "answered"]

    packets = []
    for pid in sorted(run.packets):
        p = run.packets[pid]
        packets.append({"id": pid, "payload": p.pkt.payload_kind, "mode": p.pkt.header.mode,
                        "status": p.status, "stranded": p.stranded, "visited": list(p.pkt.header.visited),
                        "hops": p.hops,
                        "ttl_left": p.pkt.header.ttl, "views": p.views, "replans": p.replans,
                        "start": p.start_time, "end": p.end_time, "duration": p.duration,
                        "state": dict(sorted(p.pkt.state.items())), "header": p.pkt.header.to_wire()})

    deployments = [dict(run.inference.deploy_log[k]) for k in sorted(run.inference.deploy_log)]
    replicas = [{"replica": r.replica_id, "model": r.model_id, "host": r.host, "active": r.active,
                 "served": len(r.served)} for r in sorted(run.inference.registry, key=lambda r: r.replica_id)]

    def breakdown(plane):
        return {cat: v for (p, cat), v in sorted(e.category_bytes.items()) if p == plane}

    report = {
        "report_version": REPORT_VERSION,
        "scenario": run.sc.name,
        "seed": run.seed,
        "mode": run.mode or "scenario",
        "models": models,
        "queries": queries,
        "query_summary": {"count": len(queries), "by_status": dict(sorted(counts.items())),
                          "latency": latency_summary(answered)},
        "deployments": deployments,
        "replicas": replicas,
        "migrations": list(run.inference.migrations),
        "packets": packets,
        "bytes": {"cp": e.plane_bytes[CP], "dp": e.plane_bytes[DP], "cp_breakdown": breakdown(CP),
                  "dp_breakdown": breakdown(DP)},
        "counts": {
            "events": len(e.trace),
            "messages": e.messages_sent,
            "replans": sum(j.replans for j in run.jobs.values()) + sum(p.replans for p in run.packets.values()),
            "migrations": len(run.inference.migrations),
            "refreshes": run.adapter.refreshes,
            "rebalance_warnings": run.inference.rebalance_warnings,
        },
        "durations": {"simulated": e.now},
        "trace": {"events": len(e.trace), "sha256": trace_digest(e.trace)},
        "invariants": {"ok": not run.violations, "violations": list(run.violations)},
    }
    if run.mode == "aats" or run.quality_gaps:
        report["quality_gap"] = list(run.quality_gaps)
    if wall_clock is not None:
        report["durations"]["wall_clock"] = wall_clock
    return report


def report_schema() -> dict:
    return json.loads(resources.files("daitn").joinpath("schema/report.schema.json").read_text())


def report_errors(report: dict) -> list[str]:
    """Schema violations of a (parsed) report, empty when it conforms."""
    validator = jsonschema.Draft202012Validator(report_schema())
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
            for e in sorted(validator.iter_errors(report), key=lambda e: list(map(str, e.absolute_path)))]


def csv_rows(report: dict) -> list[dict]:
    rows = []
    for m in report["models"]:
        adm = m.get("admission") or {}
        ex = m.get("execution") or {}
        rows.append({"entity": "model", "id": m["id"], "status": m["status"],
                     "predicted_time": adm.get("predicted_time"), "actual_time": ex.get("duration"),
                     "deadline": m["deadline"], "bytes": ex.get("bytes")})
    for q in report["queries"]:
        rows.append({"entity": "query", "id": q["query"], "status": q["status"],
                     "predicted_time": q.get("predicted"), "actual_time": q.get("actual"),
                     "deadline": q.get("max_response_time"), "bytes": None})
    for d in report["deployments"]:
        rows.append({"entity": "deployment", "id": d["model"], "status": d["status"], "predicted_time": None,
                     "actual_time": None, "deadline": None, "bytes": None})
    for p in report["packets"]:
        rows.append({"entity": "packet", "id": p["id"], "status": p["status"], "predicted_time": None,
                     "actual_time": p["duration"], "deadline": None, "bytes": None})
    return rows


def to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in csv_rows(report):
        w.writerow({k: ("" if v is None else round_floats(v)) for k, v in row.items()})
    return buf.getvalue()


def apply_filter(report: dict, query: str) -> dict:
    """``timeline[=model]``, ``latency`` or ``cp``."""
    name, _, arg = query.partition("=")
    name = name.strip()
    if name == "timeline":
        out = {}
        for m in report["models"]:
            if arg and m["id"] != arg:
                continue
            out[m["id"]] = sorted(m["timeline"], key=lambda x: x["t"])
        if arg and not out:
            raise UnknownFilter(f"no model {arg!r} in report")
        return {"timeline": out}
    if name == "latency":
        vals = [q["actual"] for q in report["queries"] if q.get("status") == "answered"]
        by_topic = {}
        for q in report["queries"]:
            if q.get("status") == "answered":
                by_topic.setdefault(q["topic"], []).append(q["actual"])
        return {"latency": latency_summary(vals),
                "by_topic": {t: latency_summary(v) for t, v in sorted(by_topic.items())}}
    if name == "cp":
        b = report["bytes"]
        return {"cp_total": b["cp"], "cp_breakdown": b["cp_breakdown"],
                "breakdown_sum": sum(b["cp_breakdown"].values())}
    raise UnknownFilter(f"unknown filter {name!r}; expected one of {', '.join(FILTERS)}")

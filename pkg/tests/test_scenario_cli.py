import csv
import io
import json

import pytest

from daitn import cli, runner
from daitn.report import CSV_COLUMNS, apply_filter, report_errors
from daitn.scenario import apply_override, bundled, parse, to_dict, validate_dict
from daitn.network import ValidationError

from conftest import scenario_run


def raw(name="churn"):
    return json.loads(bundled(name).read_text())


def invoke(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# validate


@pytest.mark.parametrize("name", ["healthcare", "churn"])
def test_bundled_scenarios_validate(capsys, name):
    assert invoke(capsys, "validate", name)[:2] == (0, "ok\n")


def test_dangling_link_is_one_error_naming_the_id():
    r = raw()
    r["network"]["links"].append({"a": "gw", "b": "ghost", "latency": 0.01, "bandwidth": 1e9})
    errors = validate_dict(r)
    assert len(errors) == 1 and "ghost" in errors[0]


def test_trust_out_of_range():
    r = raw()
    r["network"]["nodes"][3]["trust"] = 1.5
    errors = validate_dict(r)
    assert len(errors) == 1 and "trust" in errors[0] and "1.5" in errors[0]


def test_errors_are_collected_not_first_only(tmp_path, capsys):
    r = raw()
    r["network"]["links"].append({"a": "gw", "b": "ghost", "latency": 0.01, "bandwidth": 1e9})
    r["network"]["links"].append({"a": "spectre", "b": "gw", "latency": 0.01, "bandwidth": 1e9})
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(r))
    code, _, err = invoke(capsys, "validate", str(p))
    assert code == 1 and "ghost" in err and "spectre" in err


def test_missing_file_is_io_error(capsys):
    assert invoke(capsys, "validate", "/nonexistent/scenario.json")[0] == 3


def test_malformed_json_is_validation_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert invoke(capsys, "validate", str(p))[0] == 1


# overrides and round trip


def test_override_addresses_list_items_by_id():
    r = apply_override(raw(), "models.m.deadline=24.5")
    assert r["models"][0]["deadline"] == 24.5
    r = apply_override(r, "network.nodes.a.trust=0.1")
    assert next(n for n in r["network"]["nodes"] if n["id"] == "a")["trust"] == 0.1


def test_override_json_literals_and_strings():
    r = apply_override(raw(), "engine.staleness={\"max_age\": 5}")
    assert r["engine"]["staleness"] == {"max_age": 5}
    assert apply_override(raw(), "description=plain text")["description"] == "plain text"


@pytest.mark.parametrize("bad", ["no-equals", "=3", "models.nope.deadline=1", "seed.x=1"])
def test_bad_override_rejected(bad):
    with pytest.raises(ValidationError):
        apply_override(raw(), bad)


@pytest.mark.parametrize("name", ["healthcare", "churn"])
def test_normalized_round_trip(name):
    once = to_dict(parse(raw(name)))
    assert to_dict(parse(json.loads(json.dumps(once)))) == once


# plan


def test_plan_cardiology_meets_thresholds(capsys):
    code, out, _ = invoke(capsys, "plan", "healthcare", "cardiology")
    plan = json.loads(out)
    assert code == 0 and plan["accepted"] and plan["feasible"]
    assert plan["predicted_accuracy"]["general"] >= 0.80
    assert plan["predicted_accuracy"]["cardiology"] >= 0.95


def test_plan_unknown_model(capsys):
    code, _, err = invoke(capsys, "plan", "healthcare", "dermatology")
    assert code == 1 and "dermatology" in err


def test_plan_one_second_deadline_rejected_on_deadline(capsys):
    code, out, _ = invoke(capsys, "plan", "healthcare", "cardiology", "--override",
                          "models.cardiology.deadline=1")
    plan = json.loads(out)
    assert code == 0 and not plan["accepted"] and plan["reason"] == "deadline"


def test_plan_writes_out_file(tmp_path, capsys):
    out = tmp_path / "sub" / "plan.json"
    assert invoke(capsys, "plan", "churn", "m", "--out", str(out))[0] == 0
    assert json.loads(out.read_text())["sequence"] == ["d", "b"]


# run


def test_run_twice_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert invoke(capsys, "run", "churn", "--out", str(a))[0] == 0
    assert invoke(capsys, "run", "churn", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_wall_clock_is_opt_in():
    report = json.loads(scenario_run("churn")[1])
    assert "wall_clock" not in report["durations"] and report["durations"]["simulated"] > 0


def test_aats_mode_reports_quality_gap():
    report = json.loads(scenario_run("churn", "aats")[1])
    assert report["mode"] == "aats" and report["quality_gap"]
    assert report["quality_gap"][0]["model"] == "m"


def test_csv_format(capsys):
    code, out, _ = invoke(capsys, "run", "churn", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and tuple(rows[0]) == CSV_COLUMNS
    assert rows[0]["entity"] == "model" and rows[0]["status"] == "done"


def test_invariant_violation_exits_2(monkeypatch, capsys):
    monkeypatch.setattr(runner, "check_invariants", lambda run: ["forced for the exit-code test"])
    code, _, err = invoke(capsys, "run", "churn", "--out", "-")
    assert code == 2 and "forced" in err


def test_t_end_cuts_the_run_short():
    run, _ = scenario_run("churn", overrides=("t_end=5",))
    assert run.engine.now == 5.0 and run.models["m"]["status"] == "running"


# report


def test_report_filters(tmp_path, capsys):
    path = tmp_path / "r.json"
    path.write_text(scenario_run("healthcare")[1])
    code, out, _ = invoke(capsys, "report", str(path), "cp")
    cp = json.loads(out)
    assert code == 0 and cp["breakdown_sum"] == cp["cp_total"] > 0

    code, out, _ = invoke(capsys, "report", str(path), "timeline=cardiology")
    times = [e["t"] for e in json.loads(out)["timeline"]["cardiology"]]
    assert code == 0 and times == sorted(times) and len(times) > 3

    lat = json.loads(invoke(capsys, "report", str(path), "latency")[1])["latency"]
    assert lat["count"] == 6 and lat["p50"] <= lat["p95"] <= lat["max"]


def test_empty_latency_is_null_not_zero():
    report = json.loads(scenario_run("churn")[1])
    assert apply_filter(report, "latency")["latency"] == {"count": 0, "p50": None, "p95": None, "max": None}


def test_query_counts_reconcile():
    report = json.loads(scenario_run("healthcare")[1])
    summary = report["query_summary"]
    assert sum(summary["by_status"].values()) == summary["count"] == len(report["queries"])


def test_report_unknown_filter_and_missing_file(tmp_path, capsys):
    path = tmp_path / "r.json"
    path.write_text(scenario_run("churn")[1])
    assert invoke(capsys, "report", str(path), "throughput")[0] == 1
    assert invoke(capsys, "report", str(path), "timeline=nope")[0] == 1
    assert invoke(capsys, "report", str(tmp_path / "missing.json"))[0] == 3


@pytest.mark.parametrize("name,mode", [("healthcare", None), ("churn", "aats"), ("churn", None)])
def test_reports_conform_to_schema(name, mode):
    assert report_errors(json.loads(scenario_run(name, mode)[1])) == []


def test_schema_forbids_a_destination_in_packet_headers():
    report = json.loads(scenario_run("churn", "aats")[1])
    report["packets"][0]["header"]["destination"] = "b"
    errors = report_errors(report)
    assert len(errors) == 1 and "destination" in errors[0]


# scripted hyper-parameter changes

RETUNE = ('network.churn=[]',
          'models.m.param_changes=[{"at": 2.0, "hyperparams": {"epochs_per_visit": 4}}, '
          '{"at": 500, "hyperparams": {"gain": 0.5}}]')


def test_param_change_replans_the_rest_of_the_route():
    base, _ = scenario_run("churn", overrides=("network.churn=[]",))
    run, _ = scenario_run("churn", overrides=RETUNE)
    job = run.jobs["m"]
    assert base.jobs["m"].replans == 0 and job.replans == 1
    assert job.status == "done" and job.hp.epochs_per_visit == 4
    # the visit already under way at t=2 keeps its epochs; everything after uses the new ones
    assert job.visited[0] == "d" and all(v.epochs == 4 for v in job.plan.visits)
    events = [e["event"] for e in job.log]
    assert events.index("params_changed") < events.index("trained") < events.index("replan")


def test_param_change_after_the_job_ends_is_recorded_as_ignored():
    report = json.loads(scenario_run("churn", overrides=RETUNE)[1])
    ignored = [e for e in report["models"][0]["timeline"] if e["event"] == "param_change_ignored"]
    assert ignored == [{"t": 500.0, "event": "param_change_ignored", "status": "done", "gain": 0.5}]


def test_param_change_is_validated_and_round_trips():
    r = apply_override(raw(), 'models.m.param_changes=[{"at": 1, "hyperparams": {"gain": 1.5}}]')
    errors = validate_dict(r)
    assert len(errors) == 1 and "param_changes" in errors[0] and "gain" in errors[0]
    r = apply_override(raw(), RETUNE[1])
    once = to_dict(parse(r))
    assert [c["at"] for c in once["models"][0]["param_changes"]] == [2.0, 500]
    assert to_dict(parse(json.loads(json.dumps(once)))) == once

import csv
import io
import json
from pathlib import Path

import pytest

from conftest import SCENARIOS, TOPOLOGIES
from streamorch.cli import EXIT_INVALID, EXIT_OK, format_inject, main
from streamorch.errors import ScenarioError
from streamorch.eventlog import read_log
from streamorch.scenario import bundled_scenarios, load_scenario, run_scenario, validate_paths

GOLDEN = Path(__file__).parent / "golden"


def _scenario(tmp_path, **overrides):
    doc = {
        "name": "mini",
        "topologyFiles": [str(TOPOLOGIES / "fig2.json")],
        "appConfigs": [{"id": "fig2", "appName": "Figure2"}],
        "policy": {"name": "observer", "params": {"scopes": [{"key": "u", "kind": "UserEvent"}], "submit": ["fig2"]}},
        "run": {"until": 30},
    }
    doc.update(overrides)
    path = tmp_path / "mini.json"
    path.write_text(json.dumps(doc))
    return path


def _run(args, stdin=""):
    out = io.StringIO()
    code = main(args, stdin=io.StringIO(stdin), stdout=out)
    return code, out.getvalue()


@pytest.mark.parametrize("scenario", bundled_scenarios(), ids=lambda p: p.stem)
def test_bundled_scenarios_match_golden_logs(scenario, tmp_path):
    log = tmp_path / "out.jsonl"
    code, _ = _run(["run", "--scenario", str(scenario), "--log", str(log)])
    assert code == EXIT_OK
    assert log.read_bytes() == (GOLDEN / f"{scenario.stem}.jsonl").read_bytes()


def test_fig7_log_times(tmp_path):
    run = run_scenario(SCENARIOS / "fig7_dependencies.json", tmp_path / "log.jsonl")
    submitted = [(r.t, r.fields["config"]) for r in run.log.of_kind("job_submitted")]
    assert submitted == [(0, "fb"), (0, "fox"), (0, "msnbc"), (0, "tw"), (20000, "sn"), (80000, "all")]


def test_ratio_scenario_single_action(tmp_path):
    run = run_scenario(SCENARIOS / "ratio_sentiment.json", tmp_path / "log.jsonl")
    actions = run.log.of_kind("external_action")
    assert [a.fields["name"] for a in actions] == ["hadoop_recompute"]
    fired = [r for r in run.log.of_kind("policy_measure") if r.fields["fire"]]
    assert fired[0].fields["epoch"] == 250


def test_every_record_in_time_order(tmp_path):
    for scenario in bundled_scenarios():
        records = run_scenario(scenario, tmp_path / f"{scenario.stem}.jsonl").log.records
        assert [(r.t, r.seq) for r in records] == sorted((r.t, r.seq) for r in records)
        assert [r.seq for r in records] == list(range(1, len(records) + 1))


def test_malformed_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "run": {"until": 1}, "injections": [{"time": 0, "action": "explode"}]}')
    code, _ = _run(["run", "--scenario", str(bad), "--log", str(tmp_path / "l.jsonl")])
    assert code == EXIT_INVALID
    assert "unknown action 'explode'" in capsys.readouterr().err
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_injection_outside_horizon(tmp_path):
    path = _scenario(tmp_path, injections=[{"time": 99, "action": "userEvent", "args": {"name": "late"}}])
    assert validate_paths([path])[0][1].startswith("ScenarioError")


def test_validate_reports(tmp_path):
    ok = TOPOLOGIES / "fig2.json"
    cyclic = _scenario(
        tmp_path,
        appConfigs=[{"id": "a", "appName": "Figure2"}, {"id": "b", "appName": "Figure2"}],
        dependencies=[{"dependent": "a", "dependency": "b"}, {"dependent": "b", "dependency": "a"}],
        policy={"name": "observer", "params": {}},
    )
    results = dict(validate_paths([ok, cyclic]))
    assert results[str(ok)] == "ok"
    assert results[str(cyclic)].startswith("CycleError")
    dangling = _scenario(tmp_path, traces=[{"config": "fig2", "owner": "ghost", "metric": "m", "series": [[0, 1]]}])
    assert validate_paths([dangling])[0][1].startswith("UnknownOperator")
    code, out = _run(["validate", str(ok), str(dangling)])
    assert code == EXIT_INVALID
    assert f"{ok}: ok" in out


def test_inject_command_line():
    code, out = _run(["inject", "--name", "promote", "--kv", "b=2", "--kv", "a=x y"])
    assert code == EXIT_OK
    assert out.strip() == "inject --name promote --kv a=1".replace("a=1", "'a=x y'") + " --kv b=2"
    assert format_inject("p", {}) == "inject --name p"


def test_stepped_run_delivers_injected_event(tmp_path):
    path = _scenario(tmp_path)
    log = tmp_path / "log.jsonl"
    commands = "step 5\n" + format_inject("promote", {"level": "2"}) + "\nstep 10\n"
    code, out = _run(["run", "--scenario", str(path), "--log", str(log), "--step"], stdin=commands)
    assert code == EXIT_OK
    assert "t=5000 injected promote" in out
    dispatched = [r for r in read_log(log) if r.kind == "event_dispatch" and r.fields["event"] == "UserEvent"]
    assert [(r.t, r.fields["name"], r.fields["payload"], r.fields["keys"]) for r in dispatched] == [
        (5000, "promote", {"level": "2"}, ["u"])
    ]


def test_stepped_inject_without_scope_is_unmatched(tmp_path):
    path = _scenario(tmp_path, policy={"name": "observer", "params": {}})
    log = tmp_path / "log.jsonl"
    code, _ = _run(["run", "--scenario", str(path), "--log", str(log), "--step"], stdin="inject --name promote\n")
    assert code == EXIT_OK
    unmatched = [r for r in read_log(log) if r.kind == "event_unmatched"]
    assert [r.fields["name"] for r in unmatched] == ["promote"]


def test_user_event_injections_queue_in_order(tmp_path):
    inj = [{"time": 1, "action": "userEvent", "args": {"name": n}} for n in ("a", "b", "c")]
    run = run_scenario(_scenario(tmp_path, injections=inj), tmp_path / "log.jsonl")
    assert [c[1].name for c in run.policy.seen] == ["a", "b", "c"]


def test_report_outputs(tmp_path):
    log = tmp_path / "ratio.jsonl"
    code, _ = _run(["run", "--scenario", str(SCENARIOS / "ratio_sentiment.json"), "--log", str(log),
                    "--report-dir", str(tmp_path / "rep")])
    assert code == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "rep").iterdir())
    assert names == ["jobs.csv", "jobs.png", "ratio.csv", "ratio.png"]
    with (tmp_path / "rep" / "ratio.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["fire"] == "1" for r in rows) == 1
    assert (tmp_path / "rep" / "ratio.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_report_command_for_failover(tmp_path):
    log = tmp_path / "fo.jsonl"
    run_scenario(SCENARIOS / "failover_trend.json", log)
    code, out = _run(["report", "--log", str(log), "--out", str(tmp_path / "rep")])
    assert code == EXIT_OK
    with (tmp_path / "rep" / "replica_status.csv").open() as fh:
        active = [(r["t"], r["config"]) for r in csv.DictReader(fh) if r["status"] == "ACTIVE"]
    assert active == [("0.000", "r0"), ("200.000", "r1"), ("400.000", "r2")]


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    import streamorch.cli as cli

    def boom(*a, **k):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli, "write_report", boom)
    code, _ = _run(["run", "--scenario", str(_scenario(tmp_path)), "--log", str(tmp_path / "l.jsonl"),
                    "--report-dir", str(tmp_path / "r")])
    assert code == cli.EXIT_RUNTIME

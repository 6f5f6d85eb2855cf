import math

from conftest import load_bundled_topology, make_orca
from streamorch.delivery import OperatorMetricContext
from streamorch.dependencies import AppConfig
from streamorch.errors import NoHostAvailable
from streamorch.orchestrator import read_status_file
from streamorch.policies import DynamicCompositionPolicy, RatioTriggerPolicy, ReplicaFailoverPolicy
from streamorch.runtime import MetricTrace


def _ratio():
    policy = RatioTriggerPolicy("s", "SentimentAnalysis", ("correlate", "unknownCauses"), ("correlate", "knownCauses"))
    sim, orca, _ = make_orca([load_bundled_topology("sentiment.json")], configs=[AppConfig("s", "SentimentAnalysis")], handler=policy)
    orca.start()
    return sim, orca, policy


def _feed(policy, epoch, unknown, known):
    for metric, value in (("unknownCauses", unknown), ("knownCauses", known)):
        policy.on_operator_metric(OperatorMetricContext(1, "SentimentAnalysis", "correlate", metric, value, epoch, 2), ["causeMetrics"])


def test_ratio_below_threshold():
    sim, orca, policy = _ratio()
    _feed(policy, 1, 50, 100)
    assert orca.external_actions == []


def test_ratio_fires_then_rate_limits():
    sim, orca, policy = _ratio()
    sim.advance(10)
    _feed(policy, 1, 150, 100)
    assert [a.name for a in orca.external_actions] == ["hadoop_recompute"]
    sim.advance(310)
    _feed(policy, 2, 150, 100)
    assert len(orca.external_actions) == 1
    sim.advance(610)
    _feed(policy, 3, 150, 100)
    assert len(orca.external_actions) == 2
    assert policy.fired == [10.0, 610.0]


def test_ratio_ignores_mixed_epochs():
    sim, orca, policy = _ratio()
    policy.on_operator_metric(OperatorMetricContext(1, "SentimentAnalysis", "correlate", "knownCauses", 100, 1, 2), [])
    policy.on_operator_metric(OperatorMetricContext(1, "SentimentAnalysis", "correlate", "unknownCauses", 500, 2, 2), [])
    assert orca.external_actions == []
    assert orca.log.of_kind("policy_measure") == []


def test_ratio_zero_known():
    assert RatioTriggerPolicy.ratio(5, 0) == math.inf
    assert RatioTriggerPolicy.ratio(0, 0) == 0.0
    sim, orca, policy = _ratio()
    _feed(policy, 1, 5, 0)
    assert len(orca.external_actions) == 1
    assert orca.log.of_kind("policy_measure")[0].fields["ratio"] == "inf"


def _failover(tmp_path, hosts=7):
    policy = ReplicaFailoverPolicy(["r0", "r1", "r2"], "TrendCalculator", tmp_path / "status")
    sim, orca, _ = make_orca(
        [load_bundled_topology("trend.json")],
        hosts=[f"h{i}" for i in range(1, hosts + 1)],
        configs=[AppConfig(f"r{i}", "TrendCalculator") for i in range(3)],
        handler=policy,
    )
    orca.start()
    return sim, orca, policy


def _crash(sim, orca, cid, pe_id, at):
    pe = sim.pe_instance(orca.job_of_config(cid), pe_id)
    sim.inject_pe_crash(pe.pe_instance_id, at=at)
    sim.advance(at)
    return pe


def test_failover_start_state(tmp_path):
    sim, orca, policy = _failover(tmp_path)
    assert read_status_file(tmp_path / "status") == [("r0", "ACTIVE"), ("r1", "BACKUP"), ("r2", "BACKUP")]
    hosts = [{p.host for p in sim.job(orca.job_of_config(f"r{i}")).pes} for i in range(3)]
    assert not (hosts[0] & hosts[1] or hosts[0] & hosts[2] or hosts[1] & hosts[2])


def test_failover_not_enough_hosts(tmp_path):
    sim, orca, policy = _failover(tmp_path, hosts=5)
    errors = orca.log.of_kind("error")
    assert [e.fields["code"] for e in errors] == [NoHostAvailable.__name__]
    assert len(orca.log.of_kind("handler_error")) == 1
    assert sim.jobs == {}


def test_failover_to_oldest_backup(tmp_path):
    sim, orca, policy = _failover(tmp_path)
    _crash(sim, orca, "r2", 1, 50)
    assert read_status_file(tmp_path / "status")[0] == ("r0", "ACTIVE")
    pe = _crash(sim, orca, "r0", 2, 100)
    assert read_status_file(tmp_path / "status") == [("r0", "BACKUP"), ("r1", "ACTIVE"), ("r2", "BACKUP")]
    assert pe.restart_count == 1


def test_backup_failure_changes_nothing(tmp_path):
    sim, orca, policy = _failover(tmp_path)
    before = (tmp_path / "status").read_text()
    pe = _crash(sim, orca, "r1", 1, 30)
    assert (tmp_path / "status").read_text() == before
    assert pe.restart_count == 1


def test_host_failure_on_active_single_failover(tmp_path):
    sim, orca, policy = _failover(tmp_path)
    active_pes = sim.job(orca.job_of_config("r0")).pes
    sim.inject_host_failure(active_pes[0].host, at=10)
    sim.advance(10)
    assert len(policy.failovers) == 1
    assert policy.active == "r1"
    assert sum(p.restart_count for p in active_pes) == 2
    statuses = [s for _, s in read_status_file(tmp_path / "status")]
    assert statuses.count("ACTIVE") == 1


def _composition(threshold=1500):
    attrs = [{"attribute": "gender", "c3Config": "c3_gender",
              "metrics": [["TwitterQuery", "sink", "profilesGender"], ["BlogQuery", "sink", "profilesGender"]]}]
    policy = DynamicCompositionPolicy(["tr"], ["tq", "bq"], attrs, threshold=threshold)
    files = ["c1_twitter.json", "c2_twitter.json", "c2_blog.json", "c3_aggregator.json"]
    configs = [AppConfig("tr", "TwitterStreamReader"), AppConfig("tq", "TwitterQuery"), AppConfig("bq", "BlogQuery"),
               AppConfig("c3_gender", "AttributeAggregator", {"attribute": "gender"})]
    sim, orca, _ = make_orca([load_bundled_topology(f) for f in files], configs=configs, handler=policy)
    return sim, orca, policy


def test_composition_threshold_crossing():
    sim, orca, policy = _composition()
    sim.add_trace(MetricTrace("tq", "sink", "profilesGender", [(0, 900)]))
    sim.add_trace(MetricTrace("bq", "sink", "profilesGender", [(0, 700)]))
    sim.add_trace(MetricTrace("c3_gender", "sink", "finalPunctsReceived", [(0, 0), (20, 1)]))
    orca.run(15)
    c3 = orca.job_of_config("c3_gender")
    assert c3 is not None
    assert policy.watches["gender"].submissions == 1
    orca.run(60)
    assert orca.job_of_config("c3_gender") is None
    assert [r.fields["job_id"] for r in orca.log.of_kind("job_cancelled")] == [c3]


def test_composition_just_below_threshold():
    sim, orca, policy = _composition()
    sim.add_trace(MetricTrace("tq", "sink", "profilesGender", [(0, 1000)]))
    sim.add_trace(MetricTrace("bq", "sink", "profilesGender", [(0, 499)]))
    orca.run(60)
    assert orca.job_of_config("c3_gender") is None


def test_composition_dependencies_registered_with_zero_uptime():
    sim, orca, policy = _composition()
    orca.start()
    assert {(e.dependent, e.dependency, e.uptime) for e in orca.deps.edges} == {("tq", "tr", 0.0), ("bq", "tr", 0.0)}
    assert orca.job_of_config("tr") is not None


def test_composition_submission_bound():
    sim, orca, policy = _composition(threshold=500)
    sim.add_trace(MetricTrace("tq", "sink", "profilesGender", [(t, 100 * t) for t in range(0, 400, 10)]))
    sim.add_trace(MetricTrace("c3_gender", "sink", "finalPunctsReceived", [(0, 0), (10, 1)]))
    orca.run(400)
    total = 100 * 390
    assert 1 <= policy.watches["gender"].submissions <= total // 500 + 1
    submitted = [r.fields["job_id"] for r in orca.log.of_kind("job_submitted") if r.fields["config"] == "c3_gender"]
    cancelled = [r.fields["job_id"] for r in orca.log.of_kind("job_cancelled") if r.fields["config"] == "c3_gender"]
    assert cancelled == submitted[: len(cancelled)]
    assert len(submitted) - len(cancelled) <= 1

from __future__ import annotations

from pathlib import Path

import pytest

from streamorch.dependencies import AppConfig
from streamorch.eventlog import EventLog
from streamorch.orchestrator import OrcaService, Orchestrator
from streamorch.runtime import Simulator
from streamorch.topology import load_topology

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "streamorch" / "scenarios"
TOPOLOGIES = SCENARIOS / "topologies"


def load_bundled_topology(name: str):
    return load_topology((TOPOLOGIES / name).read_text())


@pytest.fixture
def fig2():
    return load_bundled_topology("fig2.json")


class Recorder(Orchestrator):
    """Handler that remembers every delivery and runs an optional start hook."""

    def __init__(self, on_start=None):
        self.calls = []
        self._on_start = on_start

    def on_orca_start(self, ctx):
        self.calls.append(("OrcaStart", ctx, []))
        if self._on_start:
            self._on_start(self.orca)

    def on_operator_metric(self, ctx, keys):
        self.calls.append(("OperatorMetric", ctx, keys))

    def on_pe_metric(self, ctx, keys):
        self.calls.append(("PEMetric", ctx, keys))

    def on_operator_port_metric(self, ctx, keys):
        self.calls.append(("OperatorPortMetric", ctx, keys))

    def on_pe_failure(self, ctx, keys):
        self.calls.append(("PEFailure", ctx, keys))

    def on_job_submitted(self, ctx, keys):
        self.calls.append(("JobSubmitted", ctx, keys))

    def on_job_cancelled(self, ctx, keys):
        self.calls.append(("JobCancelled", ctx, keys))

    def on_timer(self, ctx, keys):
        self.calls.append(("Timer", ctx, keys))

    def on_user_event(self, ctx, keys):
        self.calls.append(("UserEvent", ctx, keys))

    def of(self, kind):
        return [c for c in self.calls if c[0] == kind]


def make_orca(topologies, hosts=(), configs=(), handler=None, pull_period=15.0):
    sim = Simulator(hosts)
    handler = handler or Recorder()
    orca = OrcaService(sim, list(topologies), handler, EventLog(), pull_period=pull_period)
    for cfg in configs:
        orca.register_app_config(cfg if isinstance(cfg, AppConfig) else AppConfig(*cfg))
    return sim, orca, handler


@pytest.fixture
def recorder_cls():
    return Recorder


FIG7_FILES = ["fig7_fb.json", "fig7_tw.json", "fig7_fox.json", "fig7_msnbc.json", "fig7_sn.json", "fig7_all.json"]
FIG7_CONFIGS = [
    AppConfig("fb", "FacebookStream", gc_enabled=True, gc_timeout=10),
    AppConfig("tw", "TwitterStream", gc_enabled=True, gc_timeout=30),
    AppConfig("fox", "FoxNews", gc_enabled=False),
    AppConfig("msnbc", "MsnbcNews", gc_enabled=True, gc_timeout=10),
    AppConfig("sn", "SocialNetwork", gc_enabled=False),
    AppConfig("all", "AllSources", gc_enabled=False),
]
FIG7_EDGES = [("sn", "fb", 20), ("sn", "tw", 20), ("all", "fb", 80), ("all", "tw", 80), ("all", "fox", 80), ("all", "msnbc", 80)]


def fig7_orca(handler=None):
    sim, orca, h = make_orca([load_bundled_topology(f) for f in FIG7_FILES], configs=FIG7_CONFIGS, handler=handler)
    for edge in FIG7_EDGES:
        orca.register_dependency(*edge)
    orca.start()
    return sim, orca, h


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

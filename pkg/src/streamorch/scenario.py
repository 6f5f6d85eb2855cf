"""Declarative scenarios: load, validate and replay them deterministically.

A scenario is a JSON file::

    {"name": "fig7",
     "topologyFiles": ["topologies/fig7_fb.json", ...],     # relative to the file
     "hosts": ["h1", "h2"],                                 # optional
     "appConfigs": [{"id": "fb", "appName": "FacebookStream", "gcEnabled": true, "gcTimeout": 10}],
     "dependencies": [{"dependent": "sn", "dependency": "fb", "uptime": 20}],
     "policy": {"name": "observer", "params": {...}},
     "traces": [{"config": "fb", "owner": "src", "metric": "m", "series": [[0, 1], [30, 5]]}],
     "injections": [{"time": 0, "action": "startConfig", "args": {"config": "all"}}],
     "run": {"until": 200, "metricPullPeriod": 15, "metricPushPeriod": 3}}

Times are seconds (decimals allowed) and become integer milliseconds on load.
Injection actions: ``crashPE``, ``failHost``, ``reviveHost``, ``userEvent``,
``startConfig``, ``cancelConfig`` and ``bindExternalAction``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .delivery import DEFAULT_PULL_PERIOD
from .dependencies import AppConfig, DependencyManager
from .errors import NotRunning, OrcaError, ScenarioError, UnknownConfig, UnknownPE
from .eventlog import EventLog
from .orchestrator import OrcaService, Orchestrator
from .policies import POLICIES
from .runtime import DEFAULT_PUSH_PERIOD, FailureReason, MetricTrace, Scheduler, Simulator, to_ms
from .topology import TopologyDescriptor, load_topology

ACTIONS = {"crashPE", "failHost", "reviveHost", "userEvent", "startConfig", "cancelConfig", "bindExternalAction"}
_SCENARIO_KEYS = {"name", "description", "topologyFiles", "hosts", "appConfigs", "dependencies", "policy", "traces", "injections", "run"}


@dataclass
class Injection:
    time_ms: int
    action: str
    args: dict[str, Any]


@dataclass
class Scenario:
    name: str
    topologies: dict[str, TopologyDescriptor]
    app_configs: list[AppConfig]
    dependencies: list[tuple[str, str, float]]
    policy_name: str
    policy_params: dict[str, Any]
    traces: list[MetricTrace]
    injections: list[Injection]
    until_ms: int
    hosts: list[str] = field(default_factory=list)
    pull_period: float = DEFAULT_PULL_PERIOD
    push_period: float = DEFAULT_PUSH_PERIOD
    source: Path | None = None


def _snake(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).lower()


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ScenarioError(f"{where}: missing {key!r}")
    return obj[key]


def _trace_from_spec(spec: dict, where: str) -> MetricTrace:
    unknown = set(spec) - {"config", "owner", "metric", "series", "resetOnRestart", "port"}
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    port = spec.get("port")
    port_key = None if port is None else (int(port["index"]), str(port["direction"]))
    series = [(float(t), int(v)) for t, v in _require(spec, "series", where)]
    try:
        return MetricTrace(
            _require(spec, "config", where),
            _require(spec, "owner", where),
            _require(spec, "metric", where),
            series,
            bool(spec.get("resetOnRestart", True)),
            port_key,
        )
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    """Parse a scenario file and every topology it references; checks syntax only."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: expected an object")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"{path}: unknown keys {sorted(unknown)}")
    topologies: dict[str, TopologyDescriptor] = {}
    for rel in doc.get("topologyFiles", []):
        tpath = path.parent / rel
        try:
            text = tpath.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"{tpath}: {exc}") from None
        topo = load_topology(text)
        topologies[topo.app_name] = topo
    configs = []
    for i, c in enumerate(doc.get("appConfigs", [])):
        where = f"appConfigs[{i}]"
        try:
            configs.append(
                AppConfig(
                    str(_require(c, "id", where)),
                    str(_require(c, "appName", where)),
                    {str(k): str(v) for k, v in c.get("params", {}).items()},
                    bool(c.get("gcEnabled", True)),
                    float(c.get("gcTimeout", 0.0)),
                )
            )
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
    deps = [
        (_require(d, "dependent", "dependencies"), _require(d, "dependency", "dependencies"), float(d.get("uptime", 0.0)))
        for d in doc.get("dependencies", [])
    ]
    policy = doc.get("policy", {"name": "observer", "params": {}})
    traces = [_trace_from_spec(t, f"traces[{i}]") for i, t in enumerate(doc.get("traces", []))]
    injections = []
    for i, inj in enumerate(doc.get("injections", [])):
        where = f"injections[{i}]"
        action = _require(inj, "action", where)
        if action not in ACTIONS:
            raise ScenarioError(f"{where}: unknown action {action!r}")
        injections.append(Injection(to_ms(float(_require(inj, "time", where))), action, dict(inj.get("args", {}))))
    run = _require(doc, "run", str(path))
    hosts = list(doc.get("hosts", []))
    if not hosts:
        for t in topologies.values():
            for pool in t.host_pools:
                hosts.extend(h for h in pool.hosts if h not in hosts)
    return Scenario(
        name=doc.get("name", path.stem),
        topologies=topologies,
        app_configs=configs,
        dependencies=deps,
        policy_name=_require(policy, "name", "policy"),
        policy_params=dict(policy.get("params", {})),
        traces=traces,
        injections=injections,
        until_ms=to_ms(float(_require(run, "until", "run"))),
        hosts=hosts,
        pull_period=float(run.get("metricPullPeriod", DEFAULT_PULL_PERIOD)),
        push_period=float(run.get("metricPushPeriod", DEFAULT_PUSH_PERIOD)),
        source=path,
    )


def validate_scenario(sc: Scenario) -> None:
    """Check every cross-reference; raises the first problem found."""
    if sc.policy_name not in POLICIES:
        raise ScenarioError(f"unknown policy {sc.policy_name!r}")
    # registering on a scratch manager reuses the real duplicate/cycle checks
    scratch = DependencyManager(Scheduler(), sc.topologies, lambda c: 0, lambda c, j: None)
    for cfg in sc.app_configs:
        scratch.register_app_config(cfg)
    for dependent, dependency, uptime in sc.dependencies:
        scratch.register_dependency(dependent, dependency, uptime)
    by_ref: dict[str, TopologyDescriptor] = dict(sc.topologies)
    for cfg in sc.app_configs:
        by_ref[cfg.id] = sc.topologies[cfg.app_name]
    for tr in sc.traces:
        topo = by_ref.get(tr.job_config_ref)
        if topo is None:
            raise UnknownConfig(f"trace references unknown config {tr.job_config_ref!r}")
        if tr.owner_name.startswith("pe:"):
            topo.partition(int(tr.owner_name[3:]))
        else:
            topo.operator(tr.owner_name)
    for inj in sc.injections:
        if not 0 <= inj.time_ms <= sc.until_ms:
            raise ScenarioError(f"injection {inj.action} at {inj.time_ms} ms is outside [0, until]")
        args = inj.args
        if inj.action in ("crashPE", "startConfig", "cancelConfig"):
            cid = args.get("config")
            if cid not in scratch.configs:
                raise UnknownConfig(f"{inj.action} references unknown config {cid!r}")
            if inj.action == "crashPE":
                sc.topologies[scratch.configs[cid].app_name].partition(int(args.get("pe", -1)))
                FailureReason(args.get("reason", "ProcessCrash"))
        elif inj.action in ("failHost", "reviveHost"):
            if args.get("host") not in sc.hosts:
                raise ScenarioError(f"{inj.action} references unknown host {args.get('host')!r}")
        elif inj.action == "userEvent":
            if not args.get("name"):
                raise ScenarioError("userEvent needs a name")
        elif inj.action == "bindExternalAction":
            if not args.get("name"):
                raise ScenarioError("bindExternalAction needs a name")
            if "setTrace" in args:
                tr = _trace_from_spec(args["setTrace"], "bindExternalAction.setTrace")
                topo = by_ref.get(tr.job_config_ref)
                if topo is None:
                    raise UnknownConfig(f"trace references unknown config {tr.job_config_ref!r}")
                topo.operator(tr.owner_name)


@dataclass
class ScenarioRun:
    scenario: Scenario
    sim: Simulator
    orca: OrcaService
    policy: Orchestrator
    log: EventLog

    @property
    def now(self) -> float:
        return self.sim.now

    def advance(self, until: float) -> None:
        self.sim.advance(min(until, self.scenario.until_ms / 1000))

    def finish(self) -> EventLog:
        if self.sim.now_ms < self.scenario.until_ms:
            self.sim.advance(self.scenario.until_ms / 1000)
        return self.log

    def inject_user_event(self, name: str, payload: dict[str, str] | None = None) -> None:
        """Queue a user event at the current simulated time."""
        self.sim.scheduler.at(self.sim.now_ms, lambda: self._apply(Injection(self.sim.now_ms, "userEvent", {"name": name, "payload": payload or {}})))

    def _apply(self, inj: Injection) -> None:
        orca, args = self.orca, inj.args
        self.log.record(self.sim.now_ms, "injection", {"action": inj.action, "args": args})
        before = len(self.log)
        try:
            if inj.action == "crashPE":
                job = orca.job_of_config(args["config"])
                if job is None:
                    raise UnknownPE(f"{args['config']} is not running")
                pe = self.sim.pe_instance(job, int(args["pe"]))
                self.sim.inject_pe_crash(pe.pe_instance_id, FailureReason(args.get("reason", "ProcessCrash")))
            elif inj.action == "failHost":
                self.sim.inject_host_failure(args["host"])
            elif inj.action == "reviveHost":
                self.sim.revive_host(args["host"])
            elif inj.action == "userEvent":
                orca.send_user_event(args["name"], {str(k): str(v) for k, v in args.get("payload", {}).items()})
            elif inj.action == "startConfig":
                orca.submit(args["config"])
            elif inj.action == "cancelConfig":
                job = orca.job_of_config(args["config"])
                if job is None:
                    raise NotRunning(f"{args['config']} is not running")
                orca.cancel(job)
            elif inj.action == "bindExternalAction":
                orca.bind_external_action(args["name"], self._binding(args))
        except OrcaError as exc:
            # actuations log their own errors
            if not any(r.kind == "error" for r in self.log.records[before:]):
                self.log.record(self.sim.now_ms, "error", {"op": inj.action, "code": exc.code, "message": str(exc)})

    def _binding(self, args: dict[str, Any]):
        delay = to_ms(float(args.get("delay", 0)))
        spec = args.get("setTrace")

        def bound(orca: OrcaService, action_args: dict[str, str]) -> None:
            if spec is None:
                return
            trace = _trace_from_spec(spec, "bindExternalAction.setTrace")

            def switch() -> None:
                self.sim.switch_trace(trace)
                self.log.record(
                    self.sim.now_ms,
                    "trace_switch",
                    {"config": trace.job_config_ref, "owner": trace.owner_name, "metric": trace.metric_name, "cause": args["name"]},
                )

            self.sim.scheduler.after(delay, switch, f"trace switch {trace.owner_name}")

        return bound


def build_policy(sc: Scenario, workdir: Path) -> Orchestrator:
    cls = POLICIES[sc.policy_name]
    params = {_snake(k): v for k, v in sc.policy_params.items()}
    if sc.policy_name == "failover":
        status = Path(params.get("status_file", f"{sc.name}.status"))
        params["status_file"] = status if status.is_absolute() else workdir / status
    try:
        return cls(**params)
    except TypeError as exc:
        raise ScenarioError(f"policy {sc.policy_name!r}: {exc}") from None


def prepare(sc: Scenario, workdir: str | Path = ".") -> ScenarioRun:
    """Wire a validated scenario into a fresh simulator; nothing has run yet except the start event."""
    validate_scenario(sc)
    workdir = Path(workdir)
    log = EventLog()
    sim = Simulator(sc.hosts, push_period=sc.push_period)
    for tr in sc.traces:
        sim.add_trace(tr)
    policy = build_policy(sc, workdir)
    orca = OrcaService(sim, sc.topologies, policy, log, pull_period=sc.pull_period)
    for cfg in sc.app_configs:
        orca.register_app_config(cfg)
    for dependent, dependency, uptime in sc.dependencies:
        orca.register_dependency(dependent, dependency, uptime)
    run = ScenarioRun(sc, sim, orca, policy, log)
    for inj in sc.injections:
        sim.scheduler.at(inj.time_ms, lambda inj=inj: run._apply(inj), f"inject {inj.action}")
    orca.start()
    return run


def execute(sc: Scenario, workdir: str | Path = ".", until: float | None = None) -> ScenarioRun:
    run = prepare(sc, workdir)
    if until is not None:
        sc.until_ms = min(sc.until_ms, to_ms(until))
    run.finish()
    return run


def run_scenario(path: str | Path, log_path: str | Path, until: float | None = None) -> ScenarioRun:
    sc = load_scenario(path)
    log_path = Path(log_path)
    run = execute(sc, log_path.parent, until)
    run.log.write(log_path)
    return run


def bundled_scenarios() -> list[Path]:
    here = Path(__file__).parent / "scenarios"
    return sorted(here.glob("*.json"))


def validate_paths(paths: Iterable[str | Path]) -> list[tuple[str, str]]:
    """Validate topology or scenario files; returns ``(path, "ok" | "<Code>: message")`` pairs."""
    out = []
    for p in paths:
        p = Path(p)
        try:
            text = p.read_text(encoding="utf-8")
            try:
                doc = json.loads(text)
            except json.JSONDecodeError:
                doc = None
            if isinstance(doc, dict) and "run" in doc:
                validate_scenario(load_scenario(p))
            else:
                load_topology(text)
            out.append((str(p), "ok"))
        except OrcaError as exc:
            out.append((str(p), f"{exc.code}: {exc}"))
        except OSError as exc:
            out.append((str(p), f"ScenarioError: {exc}"))
    return out

"""Handler interface for adaptation logic and the service it talks to.

Adaptation logic subclasses :class:`Orchestrator` and overrides the ``on_*``
hooks it cares about. The :class:`OrcaService` drives it: it owns the event
scope, delivers events one at a time, and exposes actuation (submit, cancel,
PE restart/stop, exclusive host pools, external actions) and inspection
queries. Actuation and inspection only accept jobs the service started itself.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from . import topology as topo_q
from .delivery import (
    DEFAULT_PULL_PERIOD,
    Event,
    EventService,
    JobLifecycleContext,
    OperatorMetricContext,
    OperatorPortMetricContext,
    OrcaStartContext,
    PEFailureContext,
    PEMetricContext,
    TimerContext,
    UserEventContext,
)
from .dependencies import AppConfig, ConfigState, DependencyManager, SubmissionPlan
from .errors import AlreadySubmitted, NoHostAvailable, NotRunning, OrcaError, UnknownConfig, UnmanagedJob
from .eventlog import EventLog
from .runtime import JobState, PEState, Simulator
from .scope import EventKind, Subscope
from .topology import HostPool, TopologyDescriptor

log = logging.getLogger(__name__)


class Orchestrator:
    """Base class for adaptation logic; every hook defaults to doing nothing.

    ``self.orca`` is set by the service before :meth:`on_orca_start` runs.
    """

    orca: "OrcaService"

    def on_orca_start(self, ctx: OrcaStartContext) -> None:
        pass

    def on_operator_metric(self, ctx: OperatorMetricContext, keys: list[str]) -> None:
        pass

    def on_pe_metric(self, ctx: PEMetricContext, keys: list[str]) -> None:
        pass

    def on_operator_port_metric(self, ctx: OperatorPortMetricContext, keys: list[str]) -> None:
        pass

    def on_pe_failure(self, ctx: PEFailureContext, keys: list[str]) -> None:
        pass

    def on_job_submitted(self, ctx: JobLifecycleContext, keys: list[str]) -> None:
        pass

    def on_job_cancelled(self, ctx: JobLifecycleContext, keys: list[str]) -> None:
        pass

    def on_timer(self, ctx: TimerContext, keys: list[str]) -> None:
        pass

    def on_user_event(self, ctx: UserEventContext, keys: list[str]) -> None:
        pass


_HOOKS = {
    EventKind.OPERATOR_METRIC: "on_operator_metric",
    EventKind.PE_METRIC: "on_pe_metric",
    EventKind.OPERATOR_PORT_METRIC: "on_operator_port_metric",
    EventKind.PE_FAILURE: "on_pe_failure",
    EventKind.JOB_SUBMITTED: "on_job_submitted",
    EventKind.JOB_CANCELLED: "on_job_cancelled",
    EventKind.TIMER: "on_timer",
    EventKind.USER_EVENT: "on_user_event",
}


@dataclass(frozen=True)
class ExternalActionRecord:
    name: str
    args: dict[str, str]
    request_ms: int


ActionBinding = Callable[["OrcaService", dict[str, str]], None]


class OrcaService:
    def __init__(
        self,
        sim: Simulator,
        applications: Iterable[TopologyDescriptor] | Mapping[str, TopologyDescriptor],
        handler: Orchestrator,
        event_log: EventLog | None = None,
        pull_period: float = DEFAULT_PULL_PERIOD,
    ) -> None:
        self.sim = sim
        if isinstance(applications, Mapping):
            self.applications = dict(applications)
        else:
            self.applications = {t.app_name: t for t in applications}
        self.handler = handler
        self.log = event_log if event_log is not None else EventLog()
        self.managed: dict[int, str] = {}
        self.external_actions: list[ExternalActionRecord] = []
        self.action_bindings: dict[str, list[ActionBinding]] = {}
        self._exclusive_hosts: dict[str, str] = {}  # host -> config id
        self.events = EventService(sim, self, self._deliver, lambda: self.managed.keys(), self.log, pull_period)
        self.deps = DependencyManager(sim.scheduler, self.applications, self._launch, self._terminate, self.log)
        self._started = False
        handler.orca = self

    # -- plumbing ---------------------------------------------------------

    @property
    def now(self) -> float:
        return self.sim.now

    def start(self) -> None:
        """Deliver the start event (exactly once) before anything else happens."""
        self.events.start()
        self.events.pump()

    def run(self, until: float) -> None:
        self.start()
        self.sim.advance(until)

    def _deliver(self, event: Event) -> None:
        if event.kind is EventKind.ORCA_START:
            self._started = True
            self.handler.on_orca_start(event.context)
            return
        getattr(self.handler, _HOOKS[event.kind])(event.context, list(event.matched_keys))

    def _actuate(self, op: str, fields: dict[str, Any], fn: Callable[[], Any]) -> Any:
        """Run one actuation, logging either its outcome or its error (exactly one record)."""
        try:
            result = fn()
        except OrcaError as exc:
            self.log.record(self.sim.now_ms, "error", {"op": op, **fields, "code": exc.code, "message": str(exc)})
            raise
        self.log.record(self.sim.now_ms, "actuation", {"op": op, **fields, "result": result})
        return result

    # TopologyIndex
    def topology_of(self, job_id: int) -> TopologyDescriptor:
        return self.sim.job(job_id).topology

    def pe_operators(self, pe_instance_id: int) -> list[str]:
        pe = self.sim.pe(pe_instance_id)
        return list(self.topology_of(pe.job_id).partition(pe.pe_id).operator_names)

    # -- event scope ------------------------------------------------------

    def register_event_scope(self, subscope: Subscope) -> None:
        self.events.registry.register(subscope)
        self.log.record(
            self.sim.now_ms,
            "scope_registered",
            {
                "key": subscope.key,
                "scope": subscope.kind.value,
                "applications": subscope.application_filter,
                "compositeTypes": subscope.composite_type_filter,
                "operatorTypes": subscope.operator_type_filter,
                "metrics": subscope.metric_name_filter,
            },
        )

    def set_metric_pull_period(self, seconds: float) -> None:
        self.events.set_metric_pull_period(seconds)

    def register_timer(self, delay: float, timer_key: str) -> None:
        self.events.register_timer(delay, timer_key)

    def send_user_event(self, name: str, payload: dict[str, str] | None = None) -> None:
        self.log.record(self.sim.now_ms, "user_event", {"name": name, "payload": dict(payload or {})})
        self.events.user_event(name, payload)

    # -- application configurations ---------------------------------------

    def register_app_config(self, cfg: AppConfig) -> None:
        self.deps.register_app_config(cfg)

    def register_dependency(self, dependent: str, dependency: str, uptime: float = 0.0) -> None:
        self.deps.register_dependency(dependent, dependency, uptime)

    def _launch(self, cid: str) -> int:
        cfg = self.deps.configs[cid]
        job_id = self.sim.submit_job(self.deps.topologies[cid], cfg.params, config_ref=cid)
        self.managed[job_id] = cid
        job = self.sim.job(job_id)
        self.log.record(
            self.sim.now_ms,
            "job_submitted",
            {
                "job_id": job_id,
                "config": cid,
                "app_name": job.app_name,
                "pes": [{"pe": p.pe_id, "pe_instance_id": p.pe_instance_id, "host": p.host} for p in job.pes],
            },
        )
        self.events.job_submitted(JobLifecycleContext(job_id, cid, job.app_name, self.sim.now_ms))
        return job_id

    def _terminate(self, cid: str, job_id: int) -> None:
        job = self.sim.job(job_id)
        self.sim.cancel_job(job_id)
        self.log.record(self.sim.now_ms, "job_cancelled", {"job_id": job_id, "config": cid, "app_name": job.app_name})
        self.events.job_cancelled(JobLifecycleContext(job_id, cid, job.app_name, self.sim.now_ms))

    def job_of_config(self, cid: str) -> int | None:
        if cid not in self.deps.configs:
            raise UnknownConfig(f"no configuration {cid!r}")
        return self.deps.job_of(cid)

    # -- actuation --------------------------------------------------------

    def submit(self, config_id: str) -> int | None:
        """Start a configuration (and its dependencies).

        Returns the job id when the configuration is running once the call
        returns, or None when its submission waits on uptime requirements.
        """

        def go() -> int | None:
            self.deps.request_start(config_id)
            return self.deps.job_of(config_id)

        return self._actuate("submit", {"config": config_id}, go)

    def submission_plan(self, config_id: str) -> SubmissionPlan:
        self.deps._config(config_id)
        return self.deps.plan()

    def _managed_config(self, job_id: int) -> str:
        if job_id not in self.managed:
            raise UnmanagedJob(f"job {job_id} was not started by this orchestrator")
        return self.managed[job_id]

    def cancel(self, job_id: int) -> None:
        def go() -> None:
            cid = self._managed_config(job_id)
            if self.deps.job_of(cid) != job_id:
                raise NotRunning(f"job {job_id} is no longer running")
            self.deps.request_cancel(cid)

        self._actuate("cancel", {"job_id": job_id}, go)

    def _managed_pe(self, pe_instance_id: int):
        pe = self.sim.pe(pe_instance_id)
        self._managed_config(pe.job_id)
        return pe

    def restart_pe(self, pe_instance_id: int) -> None:
        def go() -> str:
            pe = self._managed_pe(pe_instance_id)
            self.sim.restart_pe(pe_instance_id)
            return pe.host

        self._actuate("restart_pe", {"pe_instance_id": pe_instance_id}, go)

    def stop_pe(self, pe_instance_id: int) -> None:
        def go() -> None:
            self._managed_pe(pe_instance_id)
            self.sim.stop_pe(pe_instance_id)

        self._actuate("stop_pe", {"pe_instance_id": pe_instance_id}, go)

    def set_exclusive_host_pools(self, config_id: str) -> list[str]:
        """Give every host pool of the configuration its own fresh hosts.

        Each pool keeps its size; hosts are taken lowest-index first among
        cluster hosts that are healthy, idle and not already reserved.
        """

        def go() -> list[str]:
            self.deps._config(config_id)
            if self.deps.state(config_id) is not ConfigState.NOT_RUNNING:
                raise AlreadySubmitted(f"{config_id} is already running")
            for host, owner in list(self._exclusive_hosts.items()):
                if owner == config_id:
                    del self._exclusive_hosts[host]
            busy = self.sim.hosts_in_use() | self.sim.failed_hosts | set(self._exclusive_hosts)
            free = [h for h in self.sim.hosts if h not in busy]
            topo = self.deps.topologies[config_id]
            pools = []
            taken: list[str] = []
            for pool in topo.host_pools:
                need = len(pool.hosts)
                if len(free) < need:
                    raise NoHostAvailable(f"{config_id}: pool {pool.name!r} needs {need} free hosts, {len(free)} left")
                hosts, free = free[:need], free[need:]
                taken.extend(hosts)
                pools.append(HostPool(pool.name, tuple(hosts), True))
            for h in taken:
                self._exclusive_hosts[h] = config_id
            self.deps.topologies[config_id] = topo.with_host_pools(pools)
            return taken

        return self._actuate("set_exclusive_host_pools", {"config": config_id}, go)

    def invoke_external_action(self, name: str, args: dict[str, str] | None = None) -> None:
        rec = ExternalActionRecord(name, dict(args or {}), self.sim.now_ms)
        self.external_actions.append(rec)
        self.log.record(self.sim.now_ms, "external_action", {"name": name, "args": rec.args})
        for binding in self.action_bindings.get(name, []):
            binding(self, rec.args)

    def bind_external_action(self, name: str, binding: ActionBinding) -> None:
        self.action_bindings.setdefault(name, []).append(binding)

    # -- inspection -------------------------------------------------------

    def _inspect(self, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except OrcaError as exc:
            self.log.record(self.sim.now_ms, "error", {"op": "inspect", "code": exc.code, "message": str(exc)})
            raise

    def operators_in_pe(self, pe_instance_id: int) -> list[str]:
        def go():
            pe = self._managed_pe(pe_instance_id)
            return topo_q.operators_in_pe(self.topology_of(pe.job_id), pe.pe_id)

        return self._inspect(go)

    def composites_in_pe(self, pe_instance_id: int) -> list[str]:
        def go():
            pe = self._managed_pe(pe_instance_id)
            return topo_q.composites_in_pe(self.topology_of(pe.job_id), pe.pe_id)

        return self._inspect(go)

    def enclosing_composite(self, job_id: int, operator_name: str) -> str | None:
        def go():
            self._managed_config(job_id)
            return topo_q.enclosing_composite(self.topology_of(job_id), operator_name)

        return self._inspect(go)

    def pe_of_operator(self, job_id: int, operator_name: str) -> int:
        """Runtime PE instance id hosting the operator in the given job."""

        def go():
            self._managed_config(job_id)
            pe_id = topo_q.pe_of_operator(self.topology_of(job_id), operator_name)
            return self.sim.pe_instance(job_id, pe_id).pe_instance_id

        return self._inspect(go)

    def job_pes(self, job_id: int) -> list[int]:
        def go():
            self._managed_config(job_id)
            return [p.pe_instance_id for p in self.sim.job(job_id).pes]

        return self._inspect(go)

    def job_effective_start(self, job_id: int) -> float | None:
        """Latest (re)start among the job's PEs, or None if any PE is down."""
        self._managed_config(job_id)
        job = self.sim.job(job_id)
        if job.state is not JobState.RUNNING or any(p.state is not PEState.RUNNING for p in job.pes):
            return None
        return max([job.submit_ms] + [p.start_ms for p in job.pes]) / 1000


# -- status file -------------------------------------------------------------

STATUSES = ("ACTIVE", "BACKUP")


def write_status_file(path: str | Path, statuses: Iterable[tuple[str, str]]) -> str:
    """Atomically replace ``path`` with one ``<configId> <ACTIVE|BACKUP>`` line per replica."""
    lines = []
    for cid, status in statuses:
        if status not in STATUSES:
            raise ValueError(f"bad status {status!r}")
        lines.append(f"{cid} {status}\n")
    text = "".join(lines)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return text


def read_status_file(path: str | Path) -> list[tuple[str, str]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            cid, status = line.split()
            out.append((cid, status))
    return out

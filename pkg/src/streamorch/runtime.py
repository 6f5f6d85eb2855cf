"""Deterministic discrete-event simulation of the stream runtime.

One :class:`Simulator` plays the three daemon roles: job submission and PE
lifecycle (application manager), host bookkeeping, failure detection and the
metric store (resource manager), and the periodic metric push performed by the
per-host controllers.

Time is kept as integer milliseconds (``now_ms``); public methods take
durations and absolute times in seconds, which are rounded to the millisecond.
Every state change happens inside :meth:`Simulator.advance`, in
``(time, sequence)`` order, so identical inputs give identical histories.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import (
    AlreadyCancelled,
    InvalidStateTransition,
    NoHostAvailable,
    UnknownHost,
    UnknownJob,
    UnknownPE,
)
from .topology import HostPool, StreamSpec, TopologyDescriptor, export_matches

log = logging.getLogger(__name__)

DEFAULT_PUSH_PERIOD = 3.0

# metrics every operator / PE carries even when the topology declares none
OPERATOR_BUILTINS = ("nTuplesProcessed",)
PE_BUILTINS = ("nTupleBytesProcessed",)


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


class JobState(enum.Enum):
    RUNNING = "Running"
    CANCELLED = "Cancelled"


class PEState(enum.Enum):
    RUNNING = "Running"
    CRASHED = "Crashed"
    STOPPED = "Stopped"


class FailureReason(enum.Enum):
    PROCESS_CRASH = "ProcessCrash"
    HOST_FAILURE = "HostFailure"
    USER_KILL = "UserKill"


class MetricScope(enum.Enum):
    OPERATOR = "operator"
    OPERATOR_PORT = "operatorPort"
    PE = "pe"


@dataclass
class PEProcess:
    pe_instance_id: int
    job_id: int
    pe_id: int
    host: str
    state: PEState
    start_ms: int
    restart_count: int = 0

    @property
    def start_time(self) -> float:
        return self.start_ms / 1000


@dataclass
class Job:
    job_id: int
    topology: TopologyDescriptor
    params: dict[str, str]
    state: JobState
    submit_ms: int
    pes: list[PEProcess]
    config_ref: str | None = None

    @property
    def app_name(self) -> str:
        return self.topology.app_name

    @property
    def submit_time(self) -> float:
        return self.submit_ms / 1000


@dataclass(frozen=True)
class FailureNotification:
    pe_instance_id: int
    job_id: int
    detection_ms: int
    reason: FailureReason

    @property
    def detection_timestamp(self) -> float:
        return self.detection_ms / 1000


@dataclass
class MetricTrace:
    """Scripted values for one metric.

    ``series`` holds ``(seconds, value)`` pairs; the time axis is relative to
    the owning job's submission (or to the last PE restart when
    ``reset_on_restart`` is set, or to the last scripted switch).
    """

    job_config_ref: str
    owner_name: str
    metric_name: str
    series: list[tuple[float, int]]
    reset_on_restart: bool = True
    port: tuple[int, str] | None = None
    switched_ms: int = 0
    _times: list[int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._times = [to_ms(t) for t, _ in self.series]
        if any(b <= a for a, b in zip(self._times, self._times[1:])):
            raise ValueError(f"trace {self.owner_name}.{self.metric_name}: times must be strictly increasing")

    def value_at(self, elapsed_ms: int) -> int:
        i = bisect_right(self._times, elapsed_ms)
        return int(self.series[i - 1][1]) if i else 0

    @property
    def key(self) -> tuple:
        return (self.job_config_ref, self.owner_name, self.metric_name, self.port)


@dataclass(frozen=True)
class MetricSample:
    job_id: int
    app_name: str
    scope: MetricScope
    owner: str
    metric: str
    value: int
    last_push_ms: int | None
    pe_instance_id: int
    port: tuple[int, str] | None = None


@dataclass
class _Task:
    fn: Callable[[], None]
    label: str
    cancelled: bool = False


class Scheduler:
    """Time-ordered task queue; equal times run in insertion order."""

    def __init__(self) -> None:
        self.now_ms = 0
        self._heap: list[tuple[int, int, _Task]] = []
        self._seq = itertools.count()
        self.after_task: list[Callable[[], None]] = []

    def at(self, time_ms: int, fn: Callable[[], None], label: str = "") -> _Task:
        if time_ms < self.now_ms:
            time_ms = self.now_ms
        task = _Task(fn, label)
        heapq.heappush(self._heap, (time_ms, next(self._seq), task))
        return task

    def after(self, delay_ms: int, fn: Callable[[], None], label: str = "") -> _Task:
        return self.at(self.now_ms + max(0, delay_ms), fn, label)

    def run_until(self, until_ms: int) -> None:
        if until_ms < self.now_ms:
            raise ValueError("cannot move the clock backwards")
        while self._heap and self._heap[0][0] <= until_ms:
            time_ms, _, task = heapq.heappop(self._heap)
            self.now_ms = time_ms
            if task.cancelled:
                continue
            task.fn()
            for hook in self.after_task:
                hook()
        self.now_ms = until_ms
        for hook in self.after_task:
            hook()

    def pending(self) -> int:
        return sum(1 for _, _, t in self._heap if not t.cancelled)


class Simulator:
    def __init__(self, hosts: Iterable[str] = (), push_period: float = DEFAULT_PUSH_PERIOD) -> None:
        self.scheduler = Scheduler()
        self.hosts: list[str] = []
        for h in hosts:
            self.add_host(h)
        self.failed_hosts: set[str] = set()
        self.jobs: dict[int, Job] = {}
        self._pes: dict[int, PEProcess] = {}
        self._job_ids = itertools.count(1)
        self._pe_ids = itertools.count(1)
        self._host_owner: dict[str, int] = {}
        # (importer job, importer operator, exporter job, exporter operator)
        self.connections: list[tuple[int, str, int, str]] = []
        self.traces: dict[tuple, MetricTrace] = {}
        self._store: dict[tuple, tuple[int, int | None]] = {}
        self.failure_listeners: list[Callable[[FailureNotification], None]] = []
        self._emitted: list[FailureNotification] = []
        self._push_ms = to_ms(push_period)
        self._push_task: _Task | None = None
        self._last_push_ms = 0
        self._schedule_push()

    # -- clock ------------------------------------------------------------

    @property
    def now_ms(self) -> int:
        return self.scheduler.now_ms

    @property
    def now(self) -> float:
        return self.scheduler.now_ms / 1000

    def advance(self, until: float) -> list[FailureNotification]:
        """Run every task scheduled up to ``until`` seconds; return the failure notifications emitted."""
        self._emitted = []
        self.scheduler.run_until(to_ms(until))
        out, self._emitted = self._emitted, []
        return out

    def schedule(self, at: float, fn: Callable[[], None], label: str = "") -> _Task:
        return self.scheduler.at(to_ms(at), fn, label)

    # -- hosts ------------------------------------------------------------

    def add_host(self, host: str) -> None:
        if host not in self.hosts:
            self.hosts.append(host)

    def _host_free_for(self, host: str, job_id: int, exclusive: bool) -> bool:
        if host in self.failed_hosts:
            return False
        owner = self._host_owner.get(host)
        if owner is not None and owner != job_id:
            return False
        if exclusive:
            for pe in self._pes.values():
                if pe.host == host and pe.job_id != job_id and pe.state is PEState.RUNNING:
                    return False
        return True

    def hosts_in_use(self) -> set[str]:
        used = set(self._host_owner)
        used.update(pe.host for pe in self._pes.values() if pe.state is PEState.RUNNING)
        return used

    # -- jobs -------------------------------------------------------------

    def submit_job(
        self,
        topology: TopologyDescriptor,
        params: dict[str, str] | None = None,
        host_pool_override: Iterable[HostPool] | None = None,
        config_ref: str | None = None,
    ) -> int:
        if host_pool_override is not None:
            topology = topology.with_host_pools(host_pool_override)
        job_id = next(self._job_ids)
        placement = self._place(topology, job_id)
        pes = []
        for part in topology.partitions:
            pe = PEProcess(next(self._pe_ids), job_id, part.pe_id, placement[part.pe_id], PEState.RUNNING, self.now_ms)
            pes.append(pe)
            self._pes[pe.pe_instance_id] = pe
        for pool in topology.host_pools:
            if pool.exclusive:
                for pe in pes:
                    if topology.partition(pe.pe_id).host_pool == pool.name:
                        self._host_owner[pe.host] = job_id
                # reserve the whole pool so nobody else lands there later
                for h in pool.hosts:
                    self._host_owner.setdefault(h, job_id)
        job = Job(job_id, topology, dict(params or {}), JobState.RUNNING, self.now_ms, pes, config_ref)
        self.jobs[job_id] = job
        self._connect(job)
        for op in topology.operators:
            for metric in _operator_metrics(op.declared_metrics):
                self._store.setdefault((job_id, MetricScope.OPERATOR, op.name, metric, None), (0, None))
        for pe in pes:
            for metric in PE_BUILTINS:
                self._store.setdefault((job_id, MetricScope.PE, str(pe.pe_instance_id), metric, None), (0, None))
        log.debug("t=%d submitted job %d (%s)", self.now_ms, job_id, topology.app_name)
        return job_id

    def _place(self, topology: TopologyDescriptor, job_id: int) -> dict[int, str]:
        for pool in topology.host_pools:
            for h in pool.hosts:
                self.add_host(h)
        cursors: dict[str, int] = {}
        placement: dict[int, str] = {}
        for part in sorted(topology.partitions, key=lambda p: p.pe_id):
            pool = topology.host_pool(part.host_pool)
            n = len(pool.hosts)
            start = cursors.get(pool.name, 0)
            for k in range(n):
                idx = (start + k) % n
                host = pool.hosts[idx]
                if self._host_free_for(host, job_id, pool.exclusive):
                    placement[part.pe_id] = host
                    cursors[pool.name] = idx + 1
                    break
            else:
                raise NoHostAvailable(f"{topology.app_name}: no available host in pool {pool.name!r} for PE {part.pe_id}")
        return placement

    def job(self, job_id: int) -> Job:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownJob(f"no job {job_id}") from None

    def cancel_job(self, job_id: int) -> None:
        job = self.job(job_id)
        if job.state is JobState.CANCELLED:
            raise AlreadyCancelled(f"job {job_id} already cancelled")
        job.state = JobState.CANCELLED
        for pe in job.pes:
            pe.state = PEState.STOPPED
        for host, owner in list(self._host_owner.items()):
            if owner == job_id:
                del self._host_owner[host]
        self.connections = [c for c in self.connections if c[0] != job_id and c[2] != job_id]
        for key in [k for k in self._store if k[0] == job_id]:
            del self._store[key]

    def running_jobs(self) -> list[Job]:
        return [j for j in self.jobs.values() if j.state is JobState.RUNNING]

    # -- import/export ----------------------------------------------------

    def _connect(self, new_job: Job) -> None:
        live = self.running_jobs()
        exports = [(j.job_id, e) for j in live for e in j.topology.exports]
        for imp in new_job.topology.imports:
            for job_id, exp in exports:
                if job_id != new_job.job_id and export_matches(imp, exp):
                    self._add_connection(new_job.job_id, imp, job_id, exp)
        for exp in new_job.topology.exports:
            for j in live:
                if j.job_id == new_job.job_id:
                    continue
                for imp in j.topology.imports:
                    if export_matches(imp, exp):
                        self._add_connection(j.job_id, imp, new_job.job_id, exp)

    def _add_connection(self, imp_job: int, imp: StreamSpec, exp_job: int, exp: StreamSpec) -> None:
        conn = (imp_job, imp.operator_name, exp_job, exp.operator_name)
        if conn not in self.connections:
            self.connections.append(conn)

    def connection_count(self, job_id: int) -> int:
        """Number of live import connections feeding ``job_id``."""
        return sum(1 for c in self.connections if c[0] == job_id)

    # -- PEs --------------------------------------------------------------

    def pe(self, pe_instance_id: int) -> PEProcess:
        try:
            return self._pes[pe_instance_id]
        except KeyError:
            raise UnknownPE(f"no PE instance {pe_instance_id}") from None

    def pe_instance(self, job_id: int, pe_id: int) -> PEProcess:
        for pe in self.job(job_id).pes:
            if pe.pe_id == pe_id:
                return pe
        raise UnknownPE(f"job {job_id} has no PE {pe_id}")

    def restart_pe(self, pe_instance_id: int) -> None:
        pe = self.pe(pe_instance_id)
        job = self.jobs[pe.job_id]
        if pe.state is PEState.RUNNING or job.state is JobState.CANCELLED:
            raise InvalidStateTransition(f"PE {pe_instance_id} is {pe.state.value}; cannot restart")
        if not self._host_free_for(pe.host, pe.job_id, False):
            pe.host = self._relocate(job, pe)
        pe.state = PEState.RUNNING
        pe.restart_count += 1
        pe.start_ms = self.now_ms

    def _relocate(self, job: Job, pe: PEProcess) -> str:
        pool = job.topology.host_pool(job.topology.partition(pe.pe_id).host_pool)
        for host in pool.hosts:
            if self._host_free_for(host, job.job_id, pool.exclusive):
                return host
        raise NoHostAvailable(f"no host left in pool {pool.name!r} to restart PE {pe.pe_instance_id}")

    def stop_pe(self, pe_instance_id: int) -> None:
        pe = self.pe(pe_instance_id)
        if pe.state is not PEState.RUNNING:
            raise InvalidStateTransition(f"PE {pe_instance_id} is {pe.state.value}; cannot stop")
        pe.state = PEState.STOPPED

    # -- failures ---------------------------------------------------------

    def inject_pe_crash(self, pe_instance_id: int, reason: FailureReason = FailureReason.PROCESS_CRASH, at: float | None = None) -> None:
        self.pe(pe_instance_id)
        when = self.now_ms if at is None else to_ms(at)
        self.scheduler.at(when, lambda: self._crash([pe_instance_id], reason), f"crash PE {pe_instance_id}")

    def inject_host_failure(self, host: str, at: float | None = None) -> None:
        if host not in self.hosts:
            raise UnknownHost(f"no host {host!r}")
        when = self.now_ms if at is None else to_ms(at)
        self.scheduler.at(when, lambda: self._fail_host(host), f"fail host {host}")

    def revive_host(self, host: str, at: float | None = None) -> None:
        if host not in self.hosts:
            raise UnknownHost(f"no host {host!r}")
        when = self.now_ms if at is None else to_ms(at)
        self.scheduler.at(when, lambda: self.failed_hosts.discard(host), f"revive host {host}")

    def _fail_host(self, host: str) -> None:
        self.failed_hosts.add(host)
        victims = [pe.pe_instance_id for pe in self._pes.values() if pe.host == host]
        self._crash(victims, FailureReason.HOST_FAILURE)

    def _crash(self, pe_ids: list[int], reason: FailureReason) -> None:
        for pid in sorted(pe_ids):
            pe = self._pes[pid]
            if pe.state is not PEState.RUNNING:
                continue
            pe.state = PEState.CRASHED
            note = FailureNotification(pid, pe.job_id, self.now_ms, reason)
            self._emitted.append(note)
            for listener in self.failure_listeners:
                listener(note)

    # -- metrics ----------------------------------------------------------

    def add_trace(self, trace: MetricTrace) -> None:
        self.traces[trace.key] = trace

    def switch_trace(self, trace: MetricTrace) -> None:
        """Replace a trace; the new series' clock starts now."""
        trace.switched_ms = self.now_ms
        self.traces[trace.key] = trace

    def _trace_for(self, job: Job, owner: str, metric: str, port=None) -> MetricTrace | None:
        for ref in (job.config_ref, job.app_name):
            if ref is None:
                continue
            tr = self.traces.get((ref, owner, metric, port))
            if tr is not None:
                return tr
        return None

    def _trace_value(self, job: Job, pe: PEProcess, owner: str, metric: str, port=None) -> int:
        tr = self._trace_for(job, owner, metric, port)
        if tr is None:
            return 0
        base = max(job.submit_ms, tr.switched_ms)
        if tr.reset_on_restart and pe.restart_count:
            base = max(base, pe.start_ms)
        return tr.value_at(self.now_ms - base)

    @property
    def push_period(self) -> float:
        return self._push_ms / 1000

    def set_push_period(self, seconds: float) -> None:
        if seconds <= 0:
            raise ValueError("push period must be positive")
        self._push_ms = to_ms(seconds)
        self._schedule_push()

    def _schedule_push(self) -> None:
        if self._push_task is not None:
            self._push_task.cancelled = True
        self._push_task = self.scheduler.at(self._last_push_ms + self._push_ms, self._push_tick, "hc push")

    def _push_tick(self) -> None:
        self._last_push_ms = self.now_ms
        self.hc_push_metrics()
        self._push_task = self.scheduler.at(self.now_ms + self._push_ms, self._push_tick, "hc push")

    def hc_push_metrics(self) -> None:
        """Copy current trace values of every Running PE into the metric store."""
        now = self.now_ms
        for job in self.running_jobs():
            for pe in job.pes:
                if pe.state is not PEState.RUNNING:
                    continue
                for name in job.topology.partition(pe.pe_id).operator_names:
                    op = job.topology.operator(name)
                    metrics = set(_operator_metrics(op.declared_metrics))
                    metrics.update(tr.metric_name for tr in self._traces_for_owner(job, name) if tr.port is None)
                    for metric in sorted(metrics):
                        value = self._trace_value(job, pe, name, metric)
                        self._store[(job.job_id, MetricScope.OPERATOR, name, metric, None)] = (value, now)
                    for tr in self._traces_for_owner(job, name):
                        if tr.port is not None:
                            value = self._trace_value(job, pe, name, tr.metric_name, tr.port)
                            self._store[(job.job_id, MetricScope.OPERATOR_PORT, name, tr.metric_name, tr.port)] = (value, now)
                owner = f"pe:{pe.pe_id}"
                for metric in PE_BUILTINS:
                    value = self._trace_value(job, pe, owner, metric)
                    self._store[(job.job_id, MetricScope.PE, str(pe.pe_instance_id), metric, None)] = (value, now)

    def _traces_for_owner(self, job: Job, owner: str) -> list[MetricTrace]:
        refs = {job.config_ref, job.app_name} - {None}
        return [tr for tr in self.traces.values() if tr.owner_name == owner and tr.job_config_ref in refs]

    def srm_snapshot(self, job_ids: Iterable[int]) -> list[MetricSample]:
        """Latest stored value of every metric of the given (running) jobs."""
        wanted = {j for j in job_ids if j in self.jobs and self.jobs[j].state is JobState.RUNNING}
        out = []
        for key in sorted(self._store, key=_store_sort_key):
            job_id, scope, owner, metric, port = key
            if job_id not in wanted:
                continue
            job = self.jobs[job_id]
            value, pushed = self._store[key]
            if scope is MetricScope.PE:
                pe_instance = int(owner)
            else:
                pe_instance = self._pe_of(job, owner).pe_instance_id
            out.append(MetricSample(job_id, job.app_name, scope, owner, metric, value, pushed, pe_instance, port))
        return out

    def _pe_of(self, job: Job, operator_name: str) -> PEProcess:
        for pe in job.pes:
            if operator_name in job.topology.partition(pe.pe_id).operator_names:
                return pe
        raise UnknownPE(operator_name)


def _operator_metrics(declared: Iterable[str]) -> list[str]:
    out = list(OPERATOR_BUILTINS)
    out.extend(m for m in declared if m not in out)
    return out


def _store_sort_key(key: tuple) -> tuple:
    job_id, scope, owner, metric, port = key
    return (job_id, scope.value, owner, metric, port or (-1, ""))

"""Application configurations, dependency DAG, submission ordering and GC.

A start request prunes the graph to the requested configuration and everything
it transitively depends on, submits the roots right away and then submits each
remaining configuration once all its dependencies are running and every
incoming edge's uptime requirement has elapsed since that dependency's
submission. Among eligible configurations the earliest wake time wins; ties go
to the lexicographically smaller id.

Cancellation is refused while a running (or scheduled) dependent still relies
on the configuration. Once a configuration goes away its dependencies are
garbage-collected after their timeout unless they are not collectable, still
in use, or were themselves started explicitly.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .errors import (
    CycleError,
    DuplicateId,
    NegativeUptime,
    NotPendingCancel,
    NotRunning,
    OrcaError,
    StarvationError,
    UnknownApplication,
    UnknownConfig,
)
from .eventlog import EventLog
from .runtime import Scheduler, to_ms
from .topology import TopologyDescriptor

log = logging.getLogger(__name__)


@dataclass
class AppConfig:
    id: str
    app_name: str
    params: dict[str, str] = field(default_factory=dict)
    gc_enabled: bool = True
    gc_timeout: float = 0.0

    def __post_init__(self) -> None:
        if self.gc_timeout < 0:
            raise ValueError(f"{self.id}: gc timeout must be non-negative")


@dataclass(frozen=True)
class DependencyEdge:
    dependent: str
    dependency: str
    uptime: float = 0.0


class ConfigState(enum.Enum):
    NOT_RUNNING = "NotRunning"
    RUNNING = "Running"
    PENDING_CANCEL = "PendingCancel"


@dataclass
class ConfigRuntime:
    state: ConfigState = ConfigState.NOT_RUNNING
    job_id: int | None = None
    submit_ms: int | None = None
    explicit: bool = False
    deadline_ms: int | None = None
    _gc_task: object = None


@dataclass(frozen=True)
class SubmissionPlan:
    entries: tuple[tuple[str, int], ...]  # (config id, earliest submit time in ms)

    def order(self) -> list[str]:
        return [cid for cid, _ in self.entries]


def next_target(
    pending: Iterable[str], edges: Iterable[DependencyEdge], submit_ms: Mapping[str, int]
) -> tuple[str, int] | None:
    """Pick the next configuration to submit.

    ``submit_ms`` maps every running configuration to its submission time.
    Candidates are pending configurations not yet running whose dependencies
    all run; the one with the smallest wake time wins, ties by id. A wake time
    of 0 means "no dependencies".
    """
    incoming: dict[str, list[DependencyEdge]] = {}
    for e in edges:
        incoming.setdefault(e.dependent, []).append(e)
    best: tuple[int, str] | None = None
    for cid in pending:
        if cid in submit_ms:
            continue
        deps = incoming.get(cid, [])
        if any(e.dependency not in submit_ms for e in deps):
            continue
        wake = max((submit_ms[e.dependency] + to_ms(e.uptime) for e in deps), default=0)
        if best is None or (wake, cid) < best:
            best = (wake, cid)
    return None if best is None else (best[1], best[0])


class DependencyManager:
    def __init__(
        self,
        scheduler: Scheduler,
        applications: Mapping[str, TopologyDescriptor],
        launch: Callable[[str], int],
        terminate: Callable[[str, int], None],
        event_log: EventLog | None = None,
    ) -> None:
        self.scheduler = scheduler
        self.applications = applications
        self._launch = launch
        self._terminate = terminate
        self.log = event_log if event_log is not None else EventLog()
        self.configs: dict[str, AppConfig] = {}
        self.topologies: dict[str, TopologyDescriptor] = {}
        self.edges: list[DependencyEdge] = []
        self.runtime: dict[str, ConfigRuntime] = {}
        self.pending: set[str] = set()
        self._wakeup = None

    # -- registration -----------------------------------------------------

    def register_app_config(self, cfg: AppConfig) -> None:
        if cfg.id in self.configs:
            raise DuplicateId(f"configuration {cfg.id!r} already registered")
        if cfg.app_name not in self.applications:
            raise UnknownApplication(f"no topology named {cfg.app_name!r}")
        self.configs[cfg.id] = cfg
        self.topologies[cfg.id] = self.applications[cfg.app_name]
        self.runtime[cfg.id] = ConfigRuntime()

    def _config(self, cid: str) -> AppConfig:
        try:
            return self.configs[cid]
        except KeyError:
            raise UnknownConfig(f"no configuration {cid!r}") from None

    def register_dependency(self, dependent: str, dependency: str, uptime: float = 0.0) -> None:
        self._config(dependent)
        self._config(dependency)
        if uptime < 0:
            raise NegativeUptime(f"uptime {uptime} < 0")
        if dependent == dependency or dependent in self.closure(dependency):
            raise CycleError(f"{dependent} -> {dependency} would close a cycle")
        edge = DependencyEdge(dependent, dependency, float(uptime))
        if edge not in self.edges:
            self.edges.append(edge)

    def dependencies_of(self, cid: str) -> list[str]:
        return sorted({e.dependency for e in self.edges if e.dependent == cid})

    def dependents_of(self, cid: str) -> list[str]:
        return sorted({e.dependent for e in self.edges if e.dependency == cid})

    def closure(self, cid: str) -> set[str]:
        """``cid`` plus everything it transitively depends on."""
        seen = {cid}
        stack = [cid]
        while stack:
            for dep in self.dependencies_of(stack.pop()):
                if dep not in seen:
                    seen.add(dep)
                    stack.append(dep)
        return seen

    # -- state helpers ----------------------------------------------------

    def state(self, cid: str) -> ConfigState:
        self._config(cid)
        return self.runtime[cid].state

    def is_running(self, cid: str) -> bool:
        return self.runtime[cid].state is not ConfigState.NOT_RUNNING

    def job_of(self, cid: str) -> int | None:
        return self.runtime[cid].job_id if self.is_running(cid) else None

    def config_of_job(self, job_id: int) -> str | None:
        for cid, rt in self.runtime.items():
            if rt.job_id == job_id and rt.state is not ConfigState.NOT_RUNNING:
                return cid
        return None

    def users(self, cid: str) -> list[str]:
        """Dependents that still need ``cid``: running, pending cancellation, or waiting to be submitted."""
        return [d for d in self.dependents_of(cid) if self.is_running(d) or d in self.pending]

    def _submit_times(self) -> dict[str, int]:
        return {cid: rt.submit_ms for cid, rt in self.runtime.items() if rt.state is not ConfigState.NOT_RUNNING}

    # -- submission -------------------------------------------------------

    def request_start(self, cid: str) -> SubmissionPlan:
        self._config(cid)
        closure = self.closure(cid)
        for c in sorted(closure):
            if self.runtime[c].state is ConfigState.PENDING_CANCEL:
                self.reuse_rescue(c)
        self.runtime[cid].explicit = True
        self.pending.update(c for c in closure if not self.is_running(c))
        plan = self.plan()
        # roots first, as one batch
        for c in sorted(closure):
            if not self.is_running(c) and not self.dependencies_of(c):
                self._submit(c)
        self._drive()
        return plan

    def plan(self) -> SubmissionPlan:
        """Projected submission order of the pending set, assuming every submission succeeds on time."""
        now = self.scheduler.now_ms
        times = self._submit_times()
        entries = []
        pending = set(self.pending)
        while True:
            target = next_target(pending, self.edges, times)
            if target is None:
                break
            c, wake = target
            wake = max(wake, now)
            entries.append((c, wake))
            times[c] = wake
            pending.discard(c)
        return SubmissionPlan(tuple(entries))

    def next_target(self) -> tuple[str, int] | None:
        return next_target(self.pending, self.edges, self._submit_times())

    def _drive(self) -> None:
        if self._wakeup is not None:
            self._wakeup.cancelled = True
            self._wakeup = None
        while True:
            target = self.next_target()
            if target is None:
                return
            c, wake = target
            if wake <= self.scheduler.now_ms:
                self._submit(c)
                continue
            self._wakeup = self.scheduler.at(wake, self._on_wakeup, f"submit {c}")
            return

    def _on_wakeup(self) -> None:
        self._wakeup = None
        self._drive()

    def _submit(self, cid: str) -> None:
        self.pending.discard(cid)
        try:
            job_id = self._launch(cid)
        except OrcaError as exc:
            self.log.record(self.scheduler.now_ms, "error", {"op": "submit", "config": cid, "code": exc.code, "message": str(exc)})
            self._abandon_dependents(cid)
            return
        rt = self.runtime[cid]
        rt.state = ConfigState.RUNNING
        rt.job_id = job_id
        rt.submit_ms = self.scheduler.now_ms

    def _abandon_dependents(self, cid: str) -> None:
        stack = [cid]
        while stack:
            for d in self.dependents_of(stack.pop()):
                if d in self.pending:
                    self.pending.discard(d)
                    stack.append(d)

    # -- cancellation and GC ----------------------------------------------

    def request_cancel(self, cid: str) -> None:
        self._config(cid)
        if not self.is_running(cid):
            raise NotRunning(f"{cid} is not running")
        users = self.users(cid)
        if users:
            raise StarvationError(f"{cid} still feeds {', '.join(users)}")
        self._cancel(cid)

    def _cancel(self, cid: str) -> None:
        rt = self.runtime[cid]
        job_id = rt.job_id
        if rt._gc_task is not None:
            rt._gc_task.cancelled = True
        self.runtime[cid] = ConfigRuntime()
        self.pending.discard(cid)
        self._terminate(cid, job_id)
        self.gc_evaluate(self.closure(cid) - {cid})

    def gc_evaluate(self, candidates: Iterable[str] | None = None) -> list[str]:
        """Move collectable configurations to the cancellation queue; returns the ones queued now."""
        now = self.scheduler.now_ms
        queued = []
        for c in sorted(self.configs if candidates is None else candidates):
            rt = self.runtime[c]
            cfg = self.configs[c]
            if rt.state is not ConfigState.RUNNING:
                continue
            if not cfg.gc_enabled or rt.explicit or self.users(c):
                continue
            rt.state = ConfigState.PENDING_CANCEL
            rt.deadline_ms = now + to_ms(cfg.gc_timeout)
            rt._gc_task = self.scheduler.at(rt.deadline_ms, lambda c=c: self._gc_fire(c), f"gc {c}")
            self.log.record(now, "gc_pending", {"config": c, "deadline": rt.deadline_ms})
            queued.append(c)
        return queued

    def _gc_fire(self, cid: str) -> None:
        rt = self.runtime[cid]
        if rt.state is not ConfigState.PENDING_CANCEL:
            return
        if self.users(cid):
            rt.state = ConfigState.RUNNING
            rt.deadline_ms = None
            return
        self._cancel(cid)

    def reuse_rescue(self, cid: str) -> None:
        self._config(cid)
        rt = self.runtime[cid]
        if rt.state is not ConfigState.PENDING_CANCEL:
            raise NotPendingCancel(f"{cid} is not waiting for cancellation")
        if rt._gc_task is not None:
            rt._gc_task.cancelled = True
            rt._gc_task = None
        rt.state = ConfigState.RUNNING
        rt.deadline_ms = None
        self.log.record(self.scheduler.now_ms, "gc_rescue", {"config": cid, "job_id": rt.job_id})

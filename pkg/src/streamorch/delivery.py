"""Event generation, epoch tagging, queuing and serial dispatch.

Metric events come from periodic pulls of the runtime's metric store; every
pull is one *epoch* and all events it yields carry that epoch. Failure events
are pushed by the runtime; failures with the same reason and detection time
share an epoch of their own. Events wait in a FIFO queue and reach the handler
one at a time; events raised while a handler runs are queued behind it.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .errors import NonPositivePeriod
from .eventlog import EventLog
from .runtime import FailureNotification, FailureReason, MetricSample, MetricScope, Simulator, to_ms
from .scope import EventKind, ScopeRegistry, TopologyIndex, match_event

log = logging.getLogger(__name__)

DEFAULT_PULL_PERIOD = 15.0


@dataclass(frozen=True)
class OrcaStartContext:
    start_ms: int


@dataclass(frozen=True)
class OperatorMetricContext:
    job_id: int
    app_name: str
    instance_name: str
    metric: str
    value: int
    epoch: int
    pe_instance_id: int


@dataclass(frozen=True)
class OperatorPortMetricContext:
    job_id: int
    app_name: str
    instance_name: str
    port_index: int
    direction: str
    metric: str
    value: int
    epoch: int
    pe_instance_id: int


@dataclass(frozen=True)
class PEMetricContext:
    job_id: int
    app_name: str
    pe_instance_id: int
    metric: str
    value: int
    epoch: int


@dataclass(frozen=True)
class PEFailureContext:
    job_id: int
    app_name: str
    pe_instance_id: int
    detection_ms: int
    reason: FailureReason
    epoch: int

    @property
    def detection_timestamp(self) -> float:
        return self.detection_ms / 1000


@dataclass(frozen=True)
class JobLifecycleContext:
    job_id: int
    app_config_id: str
    app_name: str
    time_ms: int


@dataclass(frozen=True)
class TimerContext:
    timer_key: str
    fired_ms: int


@dataclass(frozen=True)
class UserEventContext:
    name: str
    payload: dict[str, str]


@dataclass
class Event:
    kind: EventKind
    context: Any
    matched_keys: list[str] = field(default_factory=list)
    seq: int = 0


def context_fields(ctx: Any) -> dict[str, Any]:
    """Flatten a context into JSON-friendly fields."""
    out = {}
    for f in dataclasses.fields(ctx):
        value = getattr(ctx, f.name)
        if isinstance(value, FailureReason):
            value = value.value
        elif isinstance(value, dict):
            value = dict(sorted(value.items()))
        out[f.name] = value
    return out


@dataclass
class EpochCounters:
    metric_epoch: int = 0
    failure_epochs: dict[tuple[FailureReason, int], int] = field(default_factory=dict)
    next_failure_epoch: int = 1

    def failure_epoch(self, reason: FailureReason, detection_ms: int) -> int:
        key = (reason, detection_ms)
        if key not in self.failure_epochs:
            self.failure_epochs[key] = self.next_failure_epoch
            self.next_failure_epoch += 1
        return self.failure_epochs[key]


class EventService:
    """Queue and dispatcher sitting between the runtime and a handler.

    ``deliver`` is called with each event whose matched keys are non-empty
    (``OrcaStart`` always); ``managed_jobs`` returns the job ids whose events
    this service may raise.
    """

    def __init__(
        self,
        sim: Simulator,
        index: TopologyIndex,
        deliver: Callable[[Event], None],
        managed_jobs: Callable[[], Iterable[int]],
        event_log: EventLog | None = None,
        pull_period: float = DEFAULT_PULL_PERIOD,
    ) -> None:
        self.sim = sim
        self.index = index
        self.registry = ScopeRegistry()
        self.epochs = EpochCounters()
        self.queue: deque[Event] = deque()
        self._deliver = deliver
        self._managed_jobs = managed_jobs
        self.log = event_log if event_log is not None else EventLog()
        self._pull_ms = to_ms(pull_period)
        self._poll_task = None
        self._last_poll_ms: int | None = None
        self._started = False
        self._dispatching = False
        self._seq = 0
        sim.failure_listeners.append(self.on_failure_notification)
        sim.scheduler.after_task.append(self.pump)

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self._last_poll_ms = self.sim.now_ms
        self.log.record(self.sim.now_ms, "orca_start", {})
        self._enqueue(Event(EventKind.ORCA_START, OrcaStartContext(self.sim.now_ms)))
        self._schedule_poll()

    @property
    def metric_pull_period(self) -> float:
        return self._pull_ms / 1000

    def set_metric_pull_period(self, seconds: float) -> None:
        if seconds <= 0:
            raise NonPositivePeriod(f"pull period must be positive, got {seconds}")
        self._pull_ms = to_ms(seconds)
        self.log.record(self.sim.now_ms, "pull_period", {"period_ms": self._pull_ms})
        if self._started:
            self._schedule_poll()

    def _schedule_poll(self) -> None:
        if self._poll_task is not None:
            self._poll_task.cancelled = True
        self._poll_task = self.sim.scheduler.at(self._last_poll_ms + self._pull_ms, self._poll_tick, "srm poll")

    def _poll_tick(self) -> None:
        self._last_poll_ms = self.sim.now_ms
        self._poll_task = None
        self.poll_srm()
        self._schedule_poll()

    # -- producers --------------------------------------------------------

    def poll_srm(self) -> int:
        """One metric pull round; returns the number of events enqueued."""
        self.epochs.metric_epoch += 1
        epoch = self.epochs.metric_epoch
        samples = self.sim.srm_snapshot(sorted(self._managed_jobs()))
        count = 0
        for sample in samples:
            event = _metric_event(sample, epoch)
            if match_event(event, self.registry, self.index):
                self._enqueue(event)
                count += 1
        self.log.record(self.sim.now_ms, "metric_poll", {"epoch": epoch, "events": count})
        return count

    def on_failure_notification(self, note: FailureNotification) -> None:
        if note.job_id not in set(self._managed_jobs()):
            return
        epoch = self.epochs.failure_epoch(note.reason, note.detection_ms)
        job = self.sim.job(note.job_id)
        ctx = PEFailureContext(note.job_id, job.app_name, note.pe_instance_id, note.detection_ms, note.reason, epoch)
        self.log.record(self.sim.now_ms, "pe_failure", context_fields(ctx))
        self._enqueue(Event(EventKind.PE_FAILURE, ctx))

    def job_submitted(self, ctx: JobLifecycleContext) -> None:
        self._enqueue(Event(EventKind.JOB_SUBMITTED, ctx))

    def job_cancelled(self, ctx: JobLifecycleContext) -> None:
        self._enqueue(Event(EventKind.JOB_CANCELLED, ctx))

    def register_timer(self, delay: float, timer_key: str) -> None:
        if delay < 0:
            raise ValueError("timer delay must be non-negative")

        def fire() -> None:
            self._enqueue(Event(EventKind.TIMER, TimerContext(timer_key, self.sim.now_ms)))

        self.sim.scheduler.after(to_ms(delay), fire, f"timer {timer_key}")

    def user_event(self, name: str, payload: dict[str, str] | None = None) -> None:
        self._enqueue(Event(EventKind.USER_EVENT, UserEventContext(name, dict(payload or {}))))

    def _enqueue(self, event: Event) -> None:
        self._seq += 1
        event.seq = self._seq
        self.queue.append(event)

    # -- dispatch ---------------------------------------------------------

    def dispatch_next(self) -> Event | None:
        """Deliver the oldest deliverable event; drop unmatched ones on the way."""
        if self._dispatching:
            return None
        while self.queue:
            event = self.queue.popleft()
            if event.kind is EventKind.ORCA_START:
                event.matched_keys = []
            else:
                event.matched_keys = match_event(event, self.registry, self.index)
                if not event.matched_keys:
                    self.log.record(self.sim.now_ms, "event_unmatched", {"event": event.kind.value, "event_seq": event.seq, **context_fields(event.context)})
                    continue
            self.log.record(
                self.sim.now_ms,
                "event_dispatch",
                {"event": event.kind.value, "event_seq": event.seq, "keys": list(event.matched_keys), **context_fields(event.context)},
            )
            self._dispatching = True
            try:
                self._deliver(event)
            except Exception as exc:  # handler bugs must not take the service down
                log.exception("handler failed on %s", event.kind.value)
                self.log.record(self.sim.now_ms, "handler_error", {"event": event.kind.value, "error": f"{type(exc).__name__}: {exc}"})
            finally:
                self._dispatching = False
            return event
        return None

    def pump(self) -> int:
        """Dispatch until the queue is empty; a no-op when called from inside a handler."""
        n = 0
        while not self._dispatching and self.queue:
            if self.dispatch_next() is not None:
                n += 1
        return n


def _metric_event(sample: MetricSample, epoch: int) -> Event:
    if sample.scope is MetricScope.OPERATOR:
        ctx = OperatorMetricContext(sample.job_id, sample.app_name, sample.owner, sample.metric, sample.value, epoch, sample.pe_instance_id)
        return Event(EventKind.OPERATOR_METRIC, ctx)
    if sample.scope is MetricScope.OPERATOR_PORT:
        index, direction = sample.port
        ctx = OperatorPortMetricContext(
            sample.job_id, sample.app_name, sample.owner, index, direction, sample.metric, sample.value, epoch, sample.pe_instance_id
        )
        return Event(EventKind.OPERATOR_PORT_METRIC, ctx)
    ctx = PEMetricContext(sample.job_id, sample.app_name, sample.pe_instance_id, sample.metric, sample.value, epoch)
    return Event(EventKind.PE_METRIC, ctx)

"""Ready-made adaptation policies.

* :class:`ObserverPolicy` registers a fixed list of subscopes and starts some
  configurations; useful for replays that only inspect delivery.
* :class:`RatioTriggerPolicy` compares two operator metrics from the same pull
  round and calls an external action when their ratio crosses a threshold, at
  most once per rate-limit window.
* :class:`ReplicaFailoverPolicy` runs replicas on disjoint exclusive hosts,
  keeps exactly one ACTIVE and fails over to the longest-running healthy
  replica when a PE of the ACTIVE one dies.
* :class:`DynamicCompositionPolicy` submits a per-attribute analysis job once
  enough new profiles have accumulated and cancels it when its sink reports
  final punctuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .delivery import OperatorMetricContext, OrcaStartContext, PEFailureContext
from .errors import OrcaError
from .orchestrator import Orchestrator, write_status_file
from .scope import EventKind, Subscope, build_subscope


class ObserverPolicy(Orchestrator):
    """Registers ``scopes`` (subscope specs) and submits ``submit`` configs at start."""

    def __init__(self, scopes: list[Mapping[str, Any]] = (), submit: list[str] = (), pull_period: float | None = None) -> None:
        self.scope_specs = [dict(s) for s in scopes]
        self.submit_ids = list(submit)
        self.pull_period = pull_period
        self.seen: list[tuple[str, Any, list[str]]] = []

    def on_orca_start(self, ctx: OrcaStartContext) -> None:
        for spec in self.scope_specs:
            self.orca.register_event_scope(build_subscope(spec))
        if self.pull_period is not None:
            self.orca.set_metric_pull_period(self.pull_period)
        for cid in self.submit_ids:
            self.orca.submit(cid)

    def _seen(self, kind: str, ctx: Any, keys: list[str]) -> None:
        self.seen.append((kind, ctx, keys))

    def on_operator_metric(self, ctx, keys):
        self._seen("OperatorMetric", ctx, keys)

    def on_pe_metric(self, ctx, keys):
        self._seen("PEMetric", ctx, keys)

    def on_operator_port_metric(self, ctx, keys):
        self._seen("OperatorPortMetric", ctx, keys)

    def on_pe_failure(self, ctx, keys):
        self._seen("PEFailure", ctx, keys)

    def on_job_submitted(self, ctx, keys):
        self._seen("JobSubmitted", ctx, keys)

    def on_job_cancelled(self, ctx, keys):
        self._seen("JobCancelled", ctx, keys)

    def on_timer(self, ctx, keys):
        self._seen("Timer", ctx, keys)

    def on_user_event(self, ctx, keys):
        self._seen("UserEvent", ctx, keys)


class RatioTriggerPolicy(Orchestrator):
    def __init__(
        self,
        config: str,
        app_name: str,
        unknown: tuple[str, str],
        known: tuple[str, str],
        threshold: float = 1.0,
        rate_limit: float = 600.0,
        action_name: str = "hadoop_recompute",
        action_args: Mapping[str, str] | None = None,
        pull_period: float | None = None,
    ) -> None:
        self.config = config
        self.app_name = app_name
        self.unknown = tuple(unknown)
        self.known = tuple(known)
        self.threshold = threshold
        self.rate_limit = rate_limit
        self.action_name = action_name
        self.action_args = dict(action_args or {})
        self.pull_period = pull_period
        self.last_action_time: float | None = None
        self.latest: dict[tuple[str, str], tuple[int, int]] = {}
        self._evaluated_epoch: int | None = None
        self.fired: list[float] = []

    def on_orca_start(self, ctx: OrcaStartContext) -> None:
        scope = Subscope("causeMetrics", EventKind.OPERATOR_METRIC)
        scope.add_application_filter(self.app_name)
        scope.add_metric_filter(self.unknown[1], self.known[1])
        self.orca.register_event_scope(scope)
        if self.pull_period is not None:
            self.orca.set_metric_pull_period(self.pull_period)
        self.orca.submit(self.config)

    @staticmethod
    def ratio(unknown: int, known: int) -> float:
        if known == 0:
            return math.inf if unknown > 0 else 0.0
        return unknown / known

    def on_operator_metric(self, ctx: OperatorMetricContext, keys: list[str]) -> None:
        key = (ctx.instance_name, ctx.metric)
        if key not in (self.unknown, self.known):
            return
        self.latest[key] = (ctx.epoch, ctx.value)
        if self.unknown not in self.latest or self.known not in self.latest:
            return
        (ue, uv), (ke, kv) = self.latest[self.unknown], self.latest[self.known]
        if ue != ke or ue == self._evaluated_epoch:
            return
        self._evaluated_epoch = ue
        r = self.ratio(uv, kv)
        now = self.orca.now
        fire = r > self.threshold and (self.last_action_time is None or now - self.last_action_time >= self.rate_limit)
        self.orca.log.record(
            self.orca.sim.now_ms,
            "policy_measure",
            {"policy": "ratio", "epoch": ue, "unknown": uv, "known": kv, "ratio": _fmt_ratio(r), "fire": fire},
        )
        if fire:
            self.last_action_time = now
            self.fired.append(now)
            self.orca.invoke_external_action(self.action_name, self.action_args)


def _fmt_ratio(r: float) -> str:
    return "inf" if math.isinf(r) else f"{r:.6f}"


class ReplicaFailoverPolicy(Orchestrator):
    def __init__(self, replicas: list[str], app_name: str, status_file: str | Path) -> None:
        if not replicas:
            raise ValueError("need at least one replica")
        self.replicas = list(replicas)
        self.app_name = app_name
        self.status_file = Path(status_file)
        self.active: str | None = None
        self.failovers: list[tuple[float, str, str]] = []

    def on_orca_start(self, ctx: OrcaStartContext) -> None:
        scope = Subscope("replicaFailures", EventKind.PE_FAILURE)
        scope.add_application_filter(self.app_name)
        self.orca.register_event_scope(scope)
        for cid in self.replicas:
            self.orca.set_exclusive_host_pools(cid)
        for cid in self.replicas:
            self.orca.submit(cid)
        self.active = self.replicas[0]
        self._write_status()

    def statuses(self) -> list[tuple[str, str]]:
        return [(cid, "ACTIVE" if cid == self.active else "BACKUP") for cid in self.replicas]

    def _write_status(self) -> None:
        text = write_status_file(self.status_file, self.statuses())
        self.orca.log.record(self.orca.sim.now_ms, "status_file", {"contents": text, "active": self.active})

    def oldest_healthy(self, exclude: str) -> str | None:
        best = None
        for cid in self.replicas:
            if cid == exclude:
                continue
            job = self.orca.job_of_config(cid)
            if job is None:
                continue
            start = self.orca.job_effective_start(job)
            if start is None:
                continue
            if best is None or (start, cid) < best:
                best = (start, cid)
        return None if best is None else best[1]

    def on_pe_failure(self, ctx: PEFailureContext, keys: list[str]) -> None:
        failed = self.orca.managed.get(ctx.job_id)
        if failed not in self.replicas:
            return
        if failed == self.active:
            successor = self.oldest_healthy(exclude=failed)
            if successor is not None:
                self.active = successor
                self.failovers.append((self.orca.now, failed, successor))
                self._write_status()
        try:
            self.orca.restart_pe(ctx.pe_instance_id)
        except OrcaError:
            pass  # already logged; the replica stays down until a later failure retries


@dataclass
class AttributeWatch:
    attribute: str
    c3_config: str
    metrics: list[tuple[str, str, str]]  # (app name, operator, metric)
    last_submitted_count: int = 0
    submissions: int = 0


class DynamicCompositionPolicy(Orchestrator):
    def __init__(
        self,
        c1_configs: list[str],
        c2_configs: list[str],
        attributes: list[Mapping[str, Any]],
        threshold: int = 1500,
        final_punct_metric: str = "finalPunctsReceived",
        c3_app_name: str = "AttributeAggregator",
    ) -> None:
        self.c1 = list(c1_configs)
        self.c2 = list(c2_configs)
        self.watches = {
            a["attribute"]: AttributeWatch(a["attribute"], a["c3Config"], [tuple(m) for m in a["metrics"]]) for a in attributes
        }
        self.threshold = threshold
        self.final_punct_metric = final_punct_metric
        self.c3_app_name = c3_app_name
        self.counts: dict[tuple[int, str, str], int] = {}
        self.cancelled_jobs: set[int] = set()

    def on_orca_start(self, ctx: OrcaStartContext) -> None:
        for c2 in self.c2:
            for c1 in self.c1:
                self.orca.register_dependency(c2, c1, 0)
        counts = Subscope("profileCounts", EventKind.OPERATOR_METRIC)
        counts.add_application_filter(sorted({m[0] for w in self.watches.values() for m in w.metrics}))
        counts.add_metric_filter(sorted({m[2] for w in self.watches.values() for m in w.metrics}))
        self.orca.register_event_scope(counts)
        punct = Subscope("finalPunct", EventKind.OPERATOR_METRIC)
        punct.add_application_filter(self.c3_app_name)
        punct.add_metric_filter(self.final_punct_metric)
        self.orca.register_event_scope(punct)
        for cid in self.c2:
            self.orca.submit(cid)

    def aggregate(self, watch: AttributeWatch) -> int:
        total = 0
        for (job_id, op, metric), value in self.counts.items():
            app = self.orca.sim.job(job_id).app_name
            if (app, op, metric) in watch.metrics and self.orca.deps.config_of_job(job_id) is not None:
                total += value
        return total

    def on_operator_metric(self, ctx: OperatorMetricContext, keys: list[str]) -> None:
        if "finalPunct" in keys and ctx.metric == self.final_punct_metric:
            self._maybe_contract(ctx)
        if "profileCounts" in keys:
            self.counts[(ctx.job_id, ctx.instance_name, ctx.metric)] = ctx.value
            for watch in self.watches.values():
                if (ctx.app_name, ctx.instance_name, ctx.metric) in watch.metrics:
                    self._maybe_expand(watch)

    def _maybe_expand(self, watch: AttributeWatch) -> None:
        total = self.aggregate(watch)
        if total - watch.last_submitted_count < self.threshold:
            return
        if self.orca.job_of_config(watch.c3_config) is not None:
            return
        self.orca.log.record(
            self.orca.sim.now_ms,
            "policy_measure",
            {"policy": "composition", "attribute": watch.attribute, "total": total, "base": watch.last_submitted_count},
        )
        self.orca.submit(watch.c3_config)
        watch.last_submitted_count = total
        watch.submissions += 1

    def _maybe_contract(self, ctx: OperatorMetricContext) -> None:
        if ctx.value <= 0 or ctx.job_id in self.cancelled_jobs:
            return
        cid = self.orca.managed.get(ctx.job_id)
        if cid is None or self.orca.job_of_config(cid) != ctx.job_id:
            return
        self.cancelled_jobs.add(ctx.job_id)
        self.orca.cancel(ctx.job_id)


POLICIES: dict[str, type[Orchestrator]] = {
    "observer": ObserverPolicy,
    "ratio": RatioTriggerPolicy,
    "failover": ReplicaFailoverPolicy,
    "composition": DynamicCompositionPolicy,
}

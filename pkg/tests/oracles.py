"""Independent reference implementations used by the property tests.

Nothing here imports the matching or containment code under test. The
containment oracle evaluates a recursive composite-pairs relation to a
fixpoint and then scans tables row by row, the way a relational engine would
run the equivalent recursive query.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from streamorch.delivery import (
    JobLifecycleContext,
    OperatorMetricContext,
    OperatorPortMetricContext,
    PEFailureContext,
    PEMetricContext,
    TimerContext,
    UserEventContext,
)
from streamorch.runtime import FailureReason
from streamorch.scope import EventKind, Subscope
from streamorch.topology import (
    CompositeInstance,
    HostPool,
    OperatorInstance,
    PEPartition,
    StreamConnection,
    TopologyDescriptor,
)

OPERATOR_TYPES = ["Split", "Merge", "Work", "Beacon", "Filter"]
COMPOSITE_TYPES = ["composite1", "composite2", "outer", "inner"]
METRICS = ["queueSize", "nTuplesProcessed", "latency", "drops"]
APPS = ["AppA", "AppB", "Figure2"]


# -- containment ---------------------------------------------------------------


def comp_pairs(composites: list[tuple[str, str, str | None]]) -> set[tuple[str, str]]:
    """Fixpoint of (compName, ancestorName) over rows (compName, compKind, parentName)."""
    pairs = {(name, parent) for name, _, parent in composites if parent is not None}
    while True:
        new = {
            (ci_name, cp_parent)
            for ci_name, _, ci_parent in composites
            for cp_comp, cp_parent in pairs
            if ci_parent == cp_comp
        }
        if new <= pairs:
            return pairs
        pairs |= new


def containing_composites(t: TopologyDescriptor, operator: str) -> set[str]:
    rows = [(c.name, c.composite_type, c.parent_composite) for c in t.composites]
    pairs = comp_pairs(rows)
    op = next(o for o in t.operators if o.name == operator)
    out = set()
    for ci_name, _, _ in rows:
        if op.parent_composite == ci_name:
            out.add(ci_name)
        for cp_comp, cp_parent in pairs:
            if op.parent_composite == cp_comp and ci_name == cp_parent:
                out.add(ci_name)
    return out


def parent_chain(t: TopologyDescriptor, operator: str) -> list[str]:
    """Walk parent pointers one step at a time, innermost first."""
    by_name = {c.name: c for c in t.composites}
    op = next(o for o in t.operators if o.name == operator)
    chain = []
    cur = op.parent_composite
    while cur is not None:
        chain.append(cur)
        cur = by_name[cur].parent_composite
    return chain


def operator_row_matches(t: TopologyDescriptor, operator: str, scope: Subscope) -> bool:
    """Structural part of the query for one operator row."""
    rows = [(c.name, c.composite_type, c.parent_composite) for c in t.composites]
    pairs = comp_pairs(rows)
    for oi in t.operators:
        if oi.name != operator:
            continue
        if scope.operator_type_filter and not any(oi.operator_type == k for k in scope.operator_type_filter):
            continue
        if not scope.composite_type_filter:
            return True
        for ci_name, ci_kind, _ in rows:
            if ci_kind not in scope.composite_type_filter:
                continue
            if oi.parent_composite == ci_name:
                return True
            if any(oi.parent_composite == cp_comp and ci_name == cp_parent for cp_comp, cp_parent in pairs):
                return True
    return False


OPERATOR_KINDS = {EventKind.OPERATOR_METRIC, EventKind.OPERATOR_PORT_METRIC}
PE_KINDS = {EventKind.PE_METRIC, EventKind.PE_FAILURE}


def oracle_matches(kind: EventKind, ctx, scope: Subscope, topologies: dict[int, TopologyDescriptor], pe_map: dict[int, tuple[int, int]]) -> bool:
    if kind != scope.kind:
        return False
    if scope.application_filter:
        app = getattr(ctx, "app_name", None)
        if not any(app == a for a in scope.application_filter):
            return False
    if scope.metric_name_filter:
        metric = getattr(ctx, "metric", None)
        if not any(metric == m for m in scope.metric_name_filter):
            return False
    structural = scope.composite_type_filter or scope.operator_type_filter
    if not structural:
        return True
    if kind in OPERATOR_KINDS:
        return operator_row_matches(topologies[ctx.job_id], ctx.instance_name, scope)
    if kind in PE_KINDS and scope.pe_structural_filters:
        job_id, pe_id = pe_map[ctx.pe_instance_id]
        t = topologies[job_id]
        part = next(p for p in t.partitions if p.pe_id == pe_id)
        return any(operator_row_matches(t, op, scope) for op in part.operator_names)
    return False


# -- dependency schedule ----------------------------------------------------------


def earliest_submit_times(targets: set[str], edges: list[tuple[str, str, float]]) -> dict[str, float]:
    """Longest uptime path from the roots for every config needed by ``targets``."""
    deps: dict[str, list[tuple[str, float]]] = {}
    for dependent, dependency, uptime in edges:
        deps.setdefault(dependent, []).append((dependency, uptime))
    needed = set()
    stack = list(targets)
    while stack:
        c = stack.pop()
        if c in needed:
            continue
        needed.add(c)
        stack.extend(d for d, _ in deps.get(c, []))
    memo: dict[str, float] = {}

    def t(c: str) -> float:
        if c not in memo:
            memo[c] = max((t(d) + u for d, u in deps.get(c, [])), default=0.0)
        return memo[c]

    return {c: t(c) for c in needed}


# -- random generators -------------------------------------------------------------


def random_topology(rng: random.Random, app_name: str = "AppA", max_ops: int = 50, max_depth: int = 4) -> TopologyDescriptor:
    n_comp = rng.randint(0, 8)
    composites: list[CompositeInstance] = []
    depth: dict[str, int] = {}
    for i in range(n_comp):
        name = f"c{i}"
        candidates = [c.name for c in composites if depth[c.name] < max_depth]
        parent = rng.choice(candidates + [None]) if candidates else None
        depth[name] = 1 if parent is None else depth[parent] + 1
        composites.append(CompositeInstance(name, rng.choice(COMPOSITE_TYPES), parent))
    n_ops = rng.randint(1, max_ops)
    operators = []
    for i in range(n_ops):
        parent = rng.choice([c.name for c in composites] + [None]) if composites else None
        metrics = tuple(sorted(rng.sample(METRICS, rng.randint(0, 2))))
        operators.append(OperatorInstance(f"op{i}", rng.choice(OPERATOR_TYPES), parent, metrics))
    names = [o.name for o in operators]
    rng.shuffle(names)
    n_pes = rng.randint(1, min(5, n_ops))
    cuts = sorted(rng.sample(range(1, n_ops), n_pes - 1)) if n_pes > 1 else []
    bounds = [0, *cuts, n_ops]
    partitions = tuple(
        PEPartition(k + 1, tuple(names[bounds[k] : bounds[k + 1]]), "pool") for k in range(n_pes)
    )
    streams = tuple(StreamConnection(f"op{i}", f"op{i + 1}") for i in range(n_ops - 1))
    return TopologyDescriptor(
        app_name=app_name,
        operators=tuple(operators),
        composites=tuple(composites),
        streams=streams,
        partitions=partitions,
        host_pools=(HostPool("pool", ("h1", "h2")),),
    )


def _pick_some(rng: random.Random, values: list[str], p: float = 0.4) -> set[str]:
    if rng.random() >= p:
        return set()
    return set(rng.sample(values, rng.randint(1, min(2, len(values)))))


def random_subscope(rng: random.Random, key: str = "s") -> Subscope:
    kind = rng.choice([k for k in EventKind if k is not EventKind.ORCA_START])
    scope = Subscope(key, kind, pe_structural_filters=rng.random() < 0.5)
    if kind not in (EventKind.TIMER, EventKind.USER_EVENT):
        scope.application_filter = _pick_some(rng, APPS)
    if kind in OPERATOR_KINDS or (kind in PE_KINDS and scope.pe_structural_filters):
        scope.composite_type_filter = _pick_some(rng, COMPOSITE_TYPES, 0.6)
        scope.operator_type_filter = _pick_some(rng, OPERATOR_TYPES, 0.6)
    if kind in OPERATOR_KINDS | {EventKind.PE_METRIC}:
        scope.metric_name_filter = _pick_some(rng, METRICS, 0.5)
    return scope.validate()


@dataclass
class FakeEvent:
    kind: EventKind
    context: object


def random_event(rng: random.Random, t: TopologyDescriptor, job_id: int, pe_base: int) -> FakeEvent:
    """An event against job ``job_id`` whose PE instances are numbered from ``pe_base``."""
    kind = rng.choice([k for k in EventKind if k is not EventKind.ORCA_START])
    app = rng.choice([t.app_name, t.app_name, *APPS])
    op = rng.choice(t.operators).name
    pe_inst = pe_base + rng.randrange(len(t.partitions))
    metric = rng.choice(METRICS)
    ctx: object
    if kind is EventKind.OPERATOR_METRIC:
        ctx = OperatorMetricContext(job_id, app, op, metric, rng.randint(0, 9), 1, pe_inst)
    elif kind is EventKind.OPERATOR_PORT_METRIC:
        ctx = OperatorPortMetricContext(job_id, app, op, 0, "in", metric, 1, 1, pe_inst)
    elif kind is EventKind.PE_METRIC:
        ctx = PEMetricContext(job_id, app, pe_inst, metric, 1, 1)
    elif kind is EventKind.PE_FAILURE:
        ctx = PEFailureContext(job_id, app, pe_inst, 1000, FailureReason.PROCESS_CRASH, 1)
    elif kind in (EventKind.JOB_SUBMITTED, EventKind.JOB_CANCELLED):
        ctx = JobLifecycleContext(job_id, "cfg", app, 0)
    elif kind is EventKind.TIMER:
        ctx = TimerContext("tick", 0)
    else:
        ctx = UserEventContext("promote", {})
    return FakeEvent(kind, ctx)

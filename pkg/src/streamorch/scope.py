"""Event-interest declarations (subscopes) and the matching rules over them.

A subscope names one event kind and optional attribute filters. Values listed
for the same attribute are alternatives; filters on different attributes must
all hold. An empty filter accepts anything. The composite-type filter looks at
every composite instance that contains the operator, however deeply nested.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol

from .errors import DuplicateKey, EmptyKey, IllegalFilterForKind
from .topology import TopologyDescriptor, transitive_composites


class EventKind(enum.Enum):
    OPERATOR_METRIC = "OperatorMetric"
    PE_METRIC = "PEMetric"
    OPERATOR_PORT_METRIC = "OperatorPortMetric"
    PE_FAILURE = "PEFailure"
    JOB_SUBMITTED = "JobSubmitted"
    JOB_CANCELLED = "JobCancelled"
    TIMER = "Timer"
    USER_EVENT = "UserEvent"
    ORCA_START = "OrcaStart"


METRIC_KINDS = frozenset({EventKind.OPERATOR_METRIC, EventKind.PE_METRIC, EventKind.OPERATOR_PORT_METRIC})
OPERATOR_KINDS = frozenset({EventKind.OPERATOR_METRIC, EventKind.OPERATOR_PORT_METRIC})
PE_KINDS = frozenset({EventKind.PE_METRIC, EventKind.PE_FAILURE})
NO_APP_KINDS = frozenset({EventKind.TIMER, EventKind.USER_EVENT})


class TopologyIndex(Protocol):
    """What matching needs to know about the running jobs."""

    def topology_of(self, job_id: int) -> TopologyDescriptor: ...

    def pe_operators(self, pe_instance_id: int) -> list[str]: ...


@dataclass
class StaticIndex:
    """A fixed job/PE mapping, handy outside a live simulation."""

    topologies: dict[int, TopologyDescriptor] = field(default_factory=dict)
    pes: dict[int, tuple[int, int]] = field(default_factory=dict)  # instance -> (job, pe id)

    def topology_of(self, job_id: int) -> TopologyDescriptor:
        return self.topologies[job_id]

    def pe_operators(self, pe_instance_id: int) -> list[str]:
        job_id, pe_id = self.pes[pe_instance_id]
        return list(self.topologies[job_id].partition(pe_id).operator_names)


@dataclass
class Subscope:
    key: str
    kind: EventKind
    application_filter: set[str] = field(default_factory=set)
    composite_type_filter: set[str] = field(default_factory=set)
    operator_type_filter: set[str] = field(default_factory=set)
    metric_name_filter: set[str] = field(default_factory=set)
    # PE kinds honour structural filters only when this is switched on
    pe_structural_filters: bool = False

    def add_application_filter(self, *names: str) -> "Subscope":
        self.application_filter.update(_flatten(names))
        return self

    def add_composite_type_filter(self, *types: str) -> "Subscope":
        self.composite_type_filter.update(_flatten(types))
        return self

    def add_operator_type_filter(self, *types: str) -> "Subscope":
        self.operator_type_filter.update(_flatten(types))
        return self

    def add_metric_filter(self, *names: str) -> "Subscope":
        self.metric_name_filter.update(_flatten(names))
        return self

    def validate(self) -> "Subscope":
        if not self.key:
            raise EmptyKey("subscope key must be non-empty")
        if self.kind is EventKind.ORCA_START:
            raise IllegalFilterForKind("OrcaStart is always in scope and cannot be registered")
        if self.metric_name_filter and self.kind not in METRIC_KINDS:
            raise IllegalFilterForKind(f"{self.kind.value} events carry no metric name")
        structural = self.composite_type_filter or self.operator_type_filter
        if structural and self.kind not in OPERATOR_KINDS:
            if not (self.pe_structural_filters and self.kind in PE_KINDS):
                raise IllegalFilterForKind(f"{self.kind.value} events are not operator-scoped")
        if self.application_filter and self.kind in NO_APP_KINDS:
            raise IllegalFilterForKind(f"{self.kind.value} events carry no application")
        return self


def _flatten(items: Iterable[Any]) -> list[str]:
    out = []
    for item in items:
        if isinstance(item, (list, tuple, set, frozenset)):
            out.extend(item)
        else:
            out.append(item)
    return out


_SPEC_KEYS = {"key", "kind", "applications", "compositeTypes", "operatorTypes", "metrics"}


def build_subscope(spec: Mapping[str, Any], *, pe_structural_filters: bool = False) -> Subscope:
    """Build a validated subscope from a plain mapping.

    Recognised keys: ``key``, ``kind`` (an :class:`EventKind` value such as
    ``"OperatorMetric"``), ``applications``, ``compositeTypes``,
    ``operatorTypes`` and ``metrics``.
    """
    unknown = set(spec) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown subscope keys {sorted(unknown)}")
    kind = spec.get("kind")
    kind = kind if isinstance(kind, EventKind) else EventKind(kind)
    scope = Subscope(
        key=spec.get("key", ""),
        kind=kind,
        application_filter=set(spec.get("applications", ())),
        composite_type_filter=set(spec.get("compositeTypes", ())),
        operator_type_filter=set(spec.get("operatorTypes", ())),
        metric_name_filter=set(spec.get("metrics", ())),
        pe_structural_filters=pe_structural_filters,
    )
    return scope.validate()


class ScopeRegistry:
    def __init__(self) -> None:
        self._scopes: list[Subscope] = []

    def register(self, subscope: Subscope) -> None:
        subscope.validate()
        if any(s.key == subscope.key for s in self._scopes):
            raise DuplicateKey(f"subscope {subscope.key!r} already registered")
        self._scopes.append(subscope)

    def __iter__(self):
        return iter(self._scopes)

    def __len__(self) -> int:
        return len(self._scopes)


def register_event_scope(registry: ScopeRegistry, subscope: Subscope) -> None:
    registry.register(subscope)


def _operator_passes(scope: Subscope, topo: TopologyDescriptor, operator: str) -> bool:
    if scope.operator_type_filter and topo.operator(operator).operator_type not in scope.operator_type_filter:
        return False
    if scope.composite_type_filter:
        types = {topo.composite(c).composite_type for c in transitive_composites(topo, operator)}
        if not types & scope.composite_type_filter:
            return False
    return True


def matches(event: Any, subscope: Subscope, index: TopologyIndex) -> bool:
    """True when ``event`` falls inside ``subscope``.

    ``event`` needs ``kind`` and ``context`` attributes; the context fields
    consulted depend on the kind (``app_name``, ``instance_name``, ``metric``,
    ``pe_instance_id``, ``job_id``).
    """
    if event.kind is not subscope.kind:
        return False
    ctx = event.context
    if subscope.application_filter and getattr(ctx, "app_name", None) not in subscope.application_filter:
        return False
    if subscope.metric_name_filter and getattr(ctx, "metric", None) not in subscope.metric_name_filter:
        return False
    if not (subscope.composite_type_filter or subscope.operator_type_filter):
        return True
    if event.kind in OPERATOR_KINDS:
        return _operator_passes(subscope, index.topology_of(ctx.job_id), ctx.instance_name)
    if event.kind in PE_KINDS and subscope.pe_structural_filters:
        topo = index.topology_of(ctx.job_id)
        return any(_operator_passes(subscope, topo, op) for op in index.pe_operators(ctx.pe_instance_id))
    return False


def match_event(event: Any, registry: Iterable[Subscope], index: TopologyIndex) -> list[str]:
    """Keys of every subscope matching ``event``, in registration order."""
    return [s.key for s in registry if matches(event, s, index)]

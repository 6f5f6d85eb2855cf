"""Logical/physical stream graph of one application.

A :class:`TopologyDescriptor` holds the operator graph (operators, nested
composite instances, stream connections, import/export declarations) together
with its physical mapping (PE partitions and host pools). It is the in-memory
stand-in for a compiled application description and is immutable once loaded.

The on-disk format is a JSON document::

    {"name": "Figure2",
     "operators": [{"name": "op1", "type": "Beacon", "parent": null, "metrics": []}],
     "composites": [{"name": "composite1'", "type": "composite1", "parent": null}],
     "streams": [{"from": "op1", "to": "op3'"}],
     "pes": [{"id": 1, "operators": ["op1"], "hostPool": "pool1"}],
     "hostPools": [{"name": "pool1", "hosts": ["host1"], "exclusive": false}],
     "exports": [{"operator": "op6'", "streamId": "out"}],
     "imports": []}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import ParseError, UnknownOperator, UnknownPE, ValidationError


@dataclass(frozen=True)
class OperatorInstance:
    name: str
    operator_type: str
    parent_composite: str | None = None
    declared_metrics: tuple[str, ...] = ()


@dataclass(frozen=True)
class CompositeInstance:
    name: str
    composite_type: str
    parent_composite: str | None = None


@dataclass(frozen=True)
class StreamConnection:
    from_operator: str
    to_operator: str


@dataclass(frozen=True)
class PEPartition:
    pe_id: int
    operator_names: tuple[str, ...]
    host_pool: str


@dataclass(frozen=True)
class HostPool:
    name: str
    hosts: tuple[str, ...]
    exclusive: bool = False


@dataclass(frozen=True)
class StreamSpec:
    """An export or import declaration on one operator."""

    operator_name: str
    stream_id: str | None = None
    properties: Mapping[str, str] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.operator_name, self.stream_id, tuple(sorted(self.properties.items()))))


ExportSpec = StreamSpec
ImportSpec = StreamSpec


@dataclass(frozen=True)
class TopologyDescriptor:
    app_name: str
    operators: tuple[OperatorInstance, ...]
    composites: tuple[CompositeInstance, ...] = ()
    streams: tuple[StreamConnection, ...] = ()
    partitions: tuple[PEPartition, ...] = ()
    host_pools: tuple[HostPool, ...] = ()
    exports: tuple[StreamSpec, ...] = ()
    imports: tuple[StreamSpec, ...] = ()

    def __post_init__(self) -> None:
        validate_topology(self)

    # lookups used by the queries below; cheap enough to rebuild on demand
    def operator(self, name: str) -> OperatorInstance:
        for op in self.operators:
            if op.name == name:
                return op
        raise UnknownOperator(f"{self.app_name}: no operator {name!r}")

    def composite(self, name: str) -> CompositeInstance:
        for comp in self.composites:
            if comp.name == name:
                return comp
        raise ValidationError(f"{self.app_name}: no composite {name!r}")

    def partition(self, pe_id: int) -> PEPartition:
        for part in self.partitions:
            if part.pe_id == pe_id:
                return part
        raise UnknownPE(f"{self.app_name}: no PE {pe_id}")

    def host_pool(self, name: str) -> HostPool:
        for pool in self.host_pools:
            if pool.name == name:
                return pool
        raise ValidationError(f"{self.app_name}: no host pool {name!r}")

    def with_host_pools(self, pools: Iterable[HostPool]) -> "TopologyDescriptor":
        """Return a copy whose host pools are replaced by ``pools``."""
        return TopologyDescriptor(
            app_name=self.app_name,
            operators=self.operators,
            composites=self.composites,
            streams=self.streams,
            partitions=self.partitions,
            host_pools=tuple(pools),
            exports=self.exports,
            imports=self.imports,
        )


def validate_topology(t: TopologyDescriptor) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    op_names = [op.name for op in t.operators]
    if len(set(op_names)) != len(op_names):
        raise ValidationError("duplicate operator name")
    comp_names = [c.name for c in t.composites]
    if len(set(comp_names)) != len(comp_names):
        raise ValidationError("duplicate composite name")
    comps = {c.name: c for c in t.composites}
    for op in t.operators:
        if op.parent_composite is not None and op.parent_composite not in comps:
            raise ValidationError(f"unknown parent composite {op.parent_composite!r} of operator {op.name!r}")
    for comp in t.composites:
        if comp.parent_composite is not None and comp.parent_composite not in comps:
            raise ValidationError(f"unknown parent composite {comp.parent_composite!r} of composite {comp.name!r}")
        seen = {comp.name}
        cur = comp.parent_composite
        while cur is not None:
            if cur in seen:
                raise ValidationError(f"composite cycle through {comp.name!r}")
            seen.add(cur)
            cur = comps[cur].parent_composite
    ops = set(op_names)
    for s in t.streams:
        for end in (s.from_operator, s.to_operator):
            if end not in ops:
                raise ValidationError(f"stream endpoint {end!r} is not an operator")
    pools = {}
    for pool in t.host_pools:
        if pool.name in pools:
            raise ValidationError(f"duplicate host pool {pool.name!r}")
        if not pool.hosts:
            raise ValidationError(f"empty host pool {pool.name!r}")
        pools[pool.name] = pool
    pe_ids = set()
    owner: dict[str, int] = {}
    for part in t.partitions:
        if part.pe_id in pe_ids:
            raise ValidationError(f"duplicate PE id {part.pe_id}")
        pe_ids.add(part.pe_id)
        if not part.operator_names:
            raise ValidationError(f"empty PE {part.pe_id}")
        for name in part.operator_names:
            if name not in ops:
                raise ValidationError(f"PE {part.pe_id} references unknown operator {name!r}")
            if name in owner:
                raise ValidationError(f"partition overlap: {name!r} in PEs {owner[name]} and {part.pe_id}")
            owner[name] = part.pe_id
        if part.host_pool not in pools:
            raise ValidationError(f"PE {part.pe_id} references unknown host pool {part.host_pool!r}")
    for name in op_names:
        if name not in owner:
            raise ValidationError(f"operator {name!r} is in no PE")
    for spec in (*t.exports, *t.imports):
        if spec.operator_name not in ops:
            raise ValidationError(f"import/export on unknown operator {spec.operator_name!r}")
        if spec.stream_id is None and not spec.properties:
            raise ValidationError(f"import/export on {spec.operator_name!r} needs a streamId or properties")


# -- file format -------------------------------------------------------------

_TOP_KEYS = {"name", "operators", "composites", "streams", "pes", "hostPools", "exports", "imports"}


def _check_keys(obj: Any, where: str, required: set[str], optional: set[str] = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    unknown = set(obj) - required - optional
    if unknown:
        raise ParseError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ParseError(f"{where}: missing keys {sorted(missing)}")
    return obj


def _str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise ParseError(f"{where}: expected a string")
    return value


def _opt_str(value: Any, where: str) -> str | None:
    return None if value is None else _str(value, where)


def _str_list(value: Any, where: str) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise ParseError(f"{where}: expected a list")
    return tuple(_str(v, where) for v in value)


def _list(doc: dict, key: str) -> list:
    value = doc.get(key, [])
    if not isinstance(value, list):
        raise ParseError(f"{key}: expected a list")
    return value


def _stream_spec(obj: Any, where: str) -> StreamSpec:
    _check_keys(obj, where, {"operator"}, {"streamId", "properties"})
    props = obj.get("properties") or {}
    if not isinstance(props, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in props.items()):
        raise ParseError(f"{where}.properties: expected a string map")
    return StreamSpec(_str(obj["operator"], where), _opt_str(obj.get("streamId"), where), dict(props))


def topology_from_dict(doc: Any) -> TopologyDescriptor:
    """Build a descriptor from an already-decoded JSON document."""
    _check_keys(doc, "topology", {"name", "operators"}, _TOP_KEYS - {"name", "operators"})
    operators = []
    for i, o in enumerate(_list(doc, "operators")):
        where = f"operators[{i}]"
        _check_keys(o, where, {"name", "type"}, {"parent", "metrics"})
        operators.append(
            OperatorInstance(
                _str(o["name"], where),
                _str(o["type"], where),
                _opt_str(o.get("parent"), where),
                _str_list(o.get("metrics", []), where),
            )
        )
    composites = []
    for i, c in enumerate(_list(doc, "composites")):
        where = f"composites[{i}]"
        _check_keys(c, where, {"name", "type"}, {"parent"})
        composites.append(CompositeInstance(_str(c["name"], where), _str(c["type"], where), _opt_str(c.get("parent"), where)))
    streams = []
    for i, s in enumerate(_list(doc, "streams")):
        where = f"streams[{i}]"
        _check_keys(s, where, {"from", "to"})
        streams.append(StreamConnection(_str(s["from"], where), _str(s["to"], where)))
    partitions = []
    for i, p in enumerate(_list(doc, "pes")):
        where = f"pes[{i}]"
        _check_keys(p, where, {"id", "operators", "hostPool"})
        if not isinstance(p["id"], int) or isinstance(p["id"], bool):
            raise ParseError(f"{where}.id: expected an integer")
        partitions.append(PEPartition(p["id"], _str_list(p["operators"], where), _str(p["hostPool"], where)))
    pools = []
    for i, h in enumerate(_list(doc, "hostPools")):
        where = f"hostPools[{i}]"
        _check_keys(h, where, {"name", "hosts"}, {"exclusive"})
        exclusive = h.get("exclusive", False)
        if not isinstance(exclusive, bool):
            raise ParseError(f"{where}.exclusive: expected a boolean")
        pools.append(HostPool(_str(h["name"], where), _str_list(h["hosts"], where), exclusive))
    exports = [_stream_spec(e, f"exports[{i}]") for i, e in enumerate(_list(doc, "exports"))]
    imports = [_stream_spec(e, f"imports[{i}]") for i, e in enumerate(_list(doc, "imports"))]
    return TopologyDescriptor(
        app_name=_str(doc["name"], "name"),
        operators=tuple(operators),
        composites=tuple(composites),
        streams=tuple(streams),
        partitions=tuple(partitions),
        host_pools=tuple(pools),
        exports=tuple(exports),
        imports=tuple(imports),
    )


def load_topology(document: str | bytes) -> TopologyDescriptor:
    """Parse and validate a topology document."""
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return topology_from_dict(doc)


def topology_to_dict(t: TopologyDescriptor) -> dict:
    def spec(s: StreamSpec) -> dict:
        out: dict[str, Any] = {"operator": s.operator_name}
        if s.stream_id is not None:
            out["streamId"] = s.stream_id
        if s.properties:
            out["properties"] = dict(s.properties)
        return out

    return {
        "name": t.app_name,
        "operators": [
            {"name": o.name, "type": o.operator_type, "parent": o.parent_composite, "metrics": list(o.declared_metrics)}
            for o in t.operators
        ],
        "composites": [{"name": c.name, "type": c.composite_type, "parent": c.parent_composite} for c in t.composites],
        "streams": [{"from": s.from_operator, "to": s.to_operator} for s in t.streams],
        "pes": [{"id": p.pe_id, "operators": list(p.operator_names), "hostPool": p.host_pool} for p in t.partitions],
        "hostPools": [{"name": h.name, "hosts": list(h.hosts), "exclusive": h.exclusive} for h in t.host_pools],
        "exports": [spec(s) for s in t.exports],
        "imports": [spec(s) for s in t.imports],
    }


def dump_topology(t: TopologyDescriptor) -> str:
    return json.dumps(topology_to_dict(t), indent=2, sort_keys=True)


# -- inspection queries ------------------------------------------------------


def transitive_composites(t: TopologyDescriptor, operator_name: str) -> list[str]:
    """Composite instances containing the operator, innermost first."""
    op = t.operator(operator_name)
    parents = {c.name: c.parent_composite for c in t.composites}
    chain = []
    cur = op.parent_composite
    while cur is not None:
        chain.append(cur)
        cur = parents[cur]
    return chain


def enclosing_composite(t: TopologyDescriptor, operator_name: str) -> str | None:
    return t.operator(operator_name).parent_composite


def operators_in_pe(t: TopologyDescriptor, pe_id: int) -> list[str]:
    return sorted(t.partition(pe_id).operator_names)


def composites_in_pe(t: TopologyDescriptor, pe_id: int) -> list[str]:
    found: set[str] = set()
    for name in t.partition(pe_id).operator_names:
        found.update(transitive_composites(t, name))
    return sorted(found)


def pe_of_operator(t: TopologyDescriptor, operator_name: str) -> int:
    t.operator(operator_name)
    for part in t.partitions:
        if operator_name in part.operator_names:
            return part.pe_id
    raise UnknownOperator(operator_name)  # unreachable for validated topologies


def export_matches(imp: StreamSpec, exp: StreamSpec) -> bool:
    """Stream ids compare exactly; properties match when the import's pairs are a subset of the export's."""
    if imp.stream_id is not None:
        if exp.stream_id != imp.stream_id:
            return False
    if imp.properties:
        if any(exp.properties.get(k) != v for k, v in imp.properties.items()):
            return False
    return imp.stream_id is not None or bool(imp.properties)


def match_exports(import_spec: StreamSpec, exports: Iterable[tuple[int, StreamSpec]]) -> list[int]:
    """Job ids whose exports satisfy ``import_spec``, without duplicates, in input order."""
    out: list[int] = []
    for job_id, exp in exports:
        if export_matches(import_spec, exp) and job_id not in out:
            out.append(job_id)
    return out

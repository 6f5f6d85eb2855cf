"""Append-only JSON Lines event log.

Records look like ``{"fields": {...}, "kind": "job_submitted", "seq": 7, "t": 80000}``
with ``t`` in integer simulated milliseconds. Keys are sorted so that two runs
of the same scenario serialise to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator


@dataclass(frozen=True)
class EventLogRecord:
    t: int
    seq: int
    kind: str
    fields: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "seq": self.seq, "kind": self.kind, "fields": self.fields}, sort_keys=True, separators=(",", ":"))


class EventLog:
    def __init__(self) -> None:
        self.records: list[EventLogRecord] = []

    def record(self, t_ms: int, kind: str, fields: dict[str, Any]) -> EventLogRecord:
        rec = EventLogRecord(t_ms, len(self.records) + 1, kind, _jsonable(fields))
        self.records.append(rec)
        return rec

    def of_kind(self, *kinds: str) -> list[EventLogRecord]:
        return [r for r in self.records if r.kind in kinds]

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def __iter__(self) -> Iterator[EventLogRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_jsonable(v) for v in items]
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


def read_log(path: str | Path) -> list[EventLogRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(EventLogRecord(d["t"], d["seq"], d["kind"], d["fields"]))
    return out


def iter_kind(records: Iterable[EventLogRecord], kind: str) -> Iterator[EventLogRecord]:
    return (r for r in records if r.kind == kind)

"""Turn an event log into CSV summaries and PNG charts.

Each summary is written only when the log holds records for it:

* ``jobs.csv`` / ``jobs.png``: job submissions and cancellations with the number
  of running jobs per application after each change.
* ``ratio.csv`` / ``ratio.png``: every ratio-policy measurement plus fired actions.
* ``replica_status.csv`` / ``replica_status.png``: replica statuses each time the
  failover status file is rewritten.
"""

from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path
from typing import Iterable

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .eventlog import EventLogRecord, read_log


def _seconds(t_ms: int) -> str:
    return f"{t_ms / 1000:.3f}"


def job_rows(records: Iterable[EventLogRecord]) -> list[dict[str, str]]:
    running: Counter[str] = Counter()
    rows = []
    for r in records:
        if r.kind not in ("job_submitted", "job_cancelled"):
            continue
        app = r.fields["app_name"]
        running[app] += 1 if r.kind == "job_submitted" else -1
        rows.append(
            {
                "t": _seconds(r.t),
                "event": "submitted" if r.kind == "job_submitted" else "cancelled",
                "job_id": str(r.fields["job_id"]),
                "config": str(r.fields.get("config") or ""),
                "app_name": app,
                "running_for_app": str(running[app]),
                "running_total": str(sum(running.values())),
            }
        )
    return rows


def ratio_rows(records: Iterable[EventLogRecord]) -> list[dict[str, str]]:
    rows = []
    for r in records:
        if r.kind == "policy_measure" and r.fields.get("policy") == "ratio":
            f = r.fields
            rows.append(
                {
                    "t": _seconds(r.t),
                    "epoch": str(f["epoch"]),
                    "unknown": str(f["unknown"]),
                    "known": str(f["known"]),
                    "ratio": f["ratio"],
                    "fire": "1" if f["fire"] else "0",
                }
            )
    return rows


def replica_rows(records: Iterable[EventLogRecord]) -> list[dict[str, str]]:
    rows = []
    for r in records:
        if r.kind != "status_file":
            continue
        for line in r.fields["contents"].splitlines():
            cid, status = line.split()
            rows.append({"t": _seconds(r.t), "config": cid, "status": status})
    return rows


def _write_csv(path: Path, rows: list[dict[str, str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _save(fig: Figure, path: Path) -> None:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})


def _plot_jobs(rows: list[dict[str, str]], path: Path) -> None:
    fig = Figure(figsize=(7, 3.5))
    ax = fig.add_subplot()
    apps = sorted({r["app_name"] for r in rows})
    for app in apps:
        pts = [(float(r["t"]), int(r["running_for_app"])) for r in rows if r["app_name"] == app]
        xs, ys = zip(*([(0.0, 0)] + pts))
        ax.step(xs, ys, where="post", label=app)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("running jobs")
    ax.legend(fontsize="small")
    _save(fig, path)


def _plot_ratio(rows: list[dict[str, str]], path: Path) -> None:
    fig = Figure(figsize=(7, 3.5))
    ax = fig.add_subplot()
    finite = [(float(r["t"]), float(r["ratio"])) for r in rows if r["ratio"] != "inf"]
    if finite:
        xs, ys = zip(*finite)
        ax.plot(xs, ys, label="unknown / known")
    ax.axhline(1.0, color="grey", linestyle="--", linewidth=0.8)
    for r in rows:
        if r["fire"] == "1":
            ax.axvline(float(r["t"]), color="red", linewidth=0.8)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("ratio")
    ax.legend(fontsize="small")
    _save(fig, path)


def _plot_replicas(rows: list[dict[str, str]], path: Path) -> None:
    fig = Figure(figsize=(7, 2.5))
    ax = fig.add_subplot()
    replicas = sorted({r["config"] for r in rows})
    active = [(float(r["t"]), replicas.index(r["config"])) for r in rows if r["status"] == "ACTIVE"]
    xs, ys = zip(*active)
    ax.step(xs, ys, where="post")
    ax.set_yticks(range(len(replicas)), replicas)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("ACTIVE replica")
    _save(fig, path)


def write_report(log_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Write every summary the log supports into ``out_dir``; returns the files written."""
    records = read_log(log_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, rows_fn, plot in (
        ("jobs", job_rows, _plot_jobs),
        ("ratio", ratio_rows, _plot_ratio),
        ("replica_status", replica_rows, _plot_replicas),
    ):
        rows = rows_fn(records)
        if not rows:
            continue
        _write_csv(out / f"{stem}.csv", rows)
        plot(rows, out / f"{stem}.png")
        written += [out / f"{stem}.csv", out / f"{stem}.png"]
    return written

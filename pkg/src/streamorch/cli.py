"""``streamorch`` command line.

    streamorch run --scenario S.json --log out.jsonl [--until SECONDS] [--report-dir DIR] [--step]
    streamorch validate FILE...
    streamorch inject --name NAME [--kv k=v ...]
    streamorch report --log out.jsonl --out DIR

With ``--step`` the run pauses after wiring and reads commands from stdin, one
per line: ``step SECONDS`` advances the clock, ``inject --name N --kv k=v``
queues a user event at the current time. End of input runs to the horizon.
The standalone ``inject`` command prints a normalised command line meant to be
piped into a stepped run.

Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path
from typing import Sequence, TextIO

from .errors import OrcaError
from .report import write_report
from .scenario import ScenarioRun, load_scenario, prepare, validate_paths
from .runtime import to_ms

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


def _kv(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected k=v, got {text!r}")
    return key, value


def _inject_parser(prog: str = "inject") -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=prog, add_help=False, exit_on_error=False)
    p.add_argument("--name", required=True)
    p.add_argument("--kv", type=_kv, action="append", default=[])
    return p


def format_inject(name: str, payload: dict[str, str]) -> str:
    parts = ["inject", "--name", name]
    for k in sorted(payload):
        parts += ["--kv", f"{k}={payload[k]}"]
    return shlex.join(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamorch", description="Replay orchestration scenarios on a simulated stream runtime.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its event log")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--log", required=True, type=Path)
    run.add_argument("--until", type=float, help="stop earlier than the scenario horizon (seconds)")
    run.add_argument("--report-dir", type=Path, help="also write CSV summaries and charts here")
    run.add_argument("--step", action="store_true", help="read step/inject commands from stdin")

    val = sub.add_parser("validate", help="check topology or scenario files")
    val.add_argument("paths", nargs="+", type=Path)

    inj = sub.add_parser("inject", help="print a user-event command for a stepped run")
    inj.add_argument("--name", required=True)
    inj.add_argument("--kv", type=_kv, action="append", default=[])

    rep = sub.add_parser("report", help="summarise an event log as CSV and PNG")
    rep.add_argument("--log", required=True, type=Path)
    rep.add_argument("--out", required=True, type=Path)
    return parser


def drive_steps(run: ScenarioRun, commands: TextIO, out: TextIO) -> None:
    """Apply stepped-run commands until end of input."""
    parser = _inject_parser()
    for raw in commands:
        words = shlex.split(raw)
        if not words:
            continue
        if words[0] == "step" and len(words) == 2:
            run.advance(run.now + float(words[1]))
            print(f"t={run.sim.now_ms}", file=out)
        elif words[0] == "inject":
            try:
                ns = parser.parse_args(words[1:])
            except (argparse.ArgumentError, SystemExit) as exc:
                print(f"bad inject command: {exc}", file=out)
                continue
            run.inject_user_event(ns.name, dict(ns.kv))
            run.advance(run.now)
            print(f"t={run.sim.now_ms} injected {ns.name}", file=out)
        else:
            print(f"unknown command: {raw.strip()}", file=out)


def _cmd_run(args: argparse.Namespace, stdin: TextIO, stdout: TextIO) -> int:
    try:
        sc = load_scenario(args.scenario)
        if args.until is not None:
            sc.until_ms = min(sc.until_ms, to_ms(args.until))
        args.log.parent.mkdir(parents=True, exist_ok=True)
        run = prepare(sc, args.log.parent)
    except OrcaError as exc:
        print(f"{args.scenario}: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.step:
            drive_steps(run, stdin, stdout)
        run.finish()
        run.log.write(args.log)
        if args.report_dir is not None:
            write_report(args.log, args.report_dir)
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(run.log)} records to {args.log}", file=stdout)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace, stdout: TextIO) -> int:
    results = validate_paths(args.paths)
    for path, status in results:
        print(f"{path}: {status}", file=stdout)
    return EXIT_OK if all(s == "ok" for _, s in results) else EXIT_INVALID


def main(argv: Sequence[str] | None = None, stdin: TextIO | None = None, stdout: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args, stdin, stdout)
    if args.command == "validate":
        return _cmd_validate(args, stdout)
    if args.command == "inject":
        print(format_inject(args.name, dict(args.kv)), file=stdout)
        return EXIT_OK
    if args.command == "report":
        try:
            written = write_report(args.log, args.out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"cannot read log {args.log}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        for p in written:
            print(p, file=stdout)
        return EXIT_OK
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

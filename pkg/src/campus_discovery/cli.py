"""Operator command line: daemons, queries, rendering, triggers, replay.

Exit codes: 0 success, 1 usage or syntax error, 2 server/network trouble,
3 not found. Results go to stdout, diagnostics to stderr; failure paths
never write to stdout. The server defaults to http://127.0.0.1:8642 and
can be overridden by --server or the CAMPUS_DISCOVERY_SERVER environment
variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import requests

from .agent import AgentConfig, ConfigError as AgentConfigError
from .agent import run as run_agent
from .httpapi import encode_json, host_row
from .model import ClusterView, HostRecord, MetricKind, MetricSample, lexical_form, parse_index
from .query import QuerySyntaxError, parse_query, evaluate_query
from .service import AggregatorConfig, ConfigError as AggregatorConfigError
from .service import run as run_aggregator
from .store import NotFound, SnapshotStore

DEFAULT_SERVER = "http://127.0.0.1:8642"
SERVER_ENV = "CAMPUS_DISCOVERY_SERVER"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SERVER = 2
EXIT_NOT_FOUND = 3


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="campus-discovery", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    agent = sub.add_parser("agent", help="per-host monitoring agent")
    agent_sub = agent.add_subparsers(dest="agent_command", required=True)
    agent_run = agent_sub.add_parser("run", help="run the collect/serve loop")
    agent_run.add_argument("--config", required=True, help="agent JSON config path")

    agg = sub.add_parser("aggregator", help="index aggregator and HTTP service")
    agg_sub = agg.add_subparsers(dest="aggregator_command", required=True)
    agg_run = agg_sub.add_parser("run", help="run the aggregator service")
    agg_run.add_argument("--config", required=True, help="aggregator JSON config path")

    query = sub.add_parser("query", help="evaluate a filter expression on the server")
    query.add_argument("expr", metavar="EXPR")
    query.add_argument("--server", default=None)
    query.add_argument("--output", choices=("table", "json", "xml"), default="table")
    query.add_argument("--project", default="", help="comma-separated metric paths")

    render = sub.add_parser("render", help="fetch a rendered portal view")
    render.add_argument("view", metavar="VIEW")
    render.add_argument("--query", default="", metavar="EXPR")
    render.add_argument("--server", default=None)
    render.add_argument("--out", default=None, metavar="FILE")

    trigger = sub.add_parser("trigger", help="manage trigger rules on the server")
    trigger_sub = trigger.add_subparsers(dest="trigger_command", required=True)
    t_add = trigger_sub.add_parser("add", help="add rules from a JSON file")
    t_add.add_argument("--file", required=True)
    t_add.add_argument("--server", default=None)
    t_list = trigger_sub.add_parser("list", help="list rules")
    t_list.add_argument("--server", default=None)
    t_list.add_argument("--output", choices=("table", "json"), default="table")
    t_rm = trigger_sub.add_parser("rm", help="delete a rule")
    t_rm.add_argument("rule_id", metavar="ID")
    t_rm.add_argument("--server", default=None)

    replay = sub.add_parser("replay", help="query a stored snapshot frame offline")
    replay.add_argument("--store", required=True, metavar="DIR")
    replay.add_argument("--at", required=True, metavar="TIMESTAMP",
                        help="epoch seconds or RFC3339 UTC (2026-01-01T00:00:00Z)")
    replay.add_argument("--query", default="", metavar="EXPR")
    replay.add_argument("--output", choices=("table", "json", "xml"), default="table")
    replay.add_argument("--project", default="", help="comma-separated metric paths")

    return parser


def _server_url(value: Optional[str]) -> str:
    return value or os.environ.get(SERVER_ENV) or DEFAULT_SERVER


def _http(method: str, url: str, **kw) -> requests.Response:
    try:
        resp = requests.request(method, url, timeout=30, **kw)
    except requests.RequestException as exc:
        raise _CliError(EXIT_SERVER, f"cannot reach server: {exc}")
    return resp


def _check(resp: requests.Response) -> requests.Response:
    if resp.status_code == 404:
        raise _CliError(EXIT_NOT_FOUND, _error_text(resp))
    if resp.status_code == 400:
        raise _CliError(EXIT_USAGE, _error_text(resp))
    if resp.status_code >= 300:
        raise _CliError(EXIT_SERVER, f"server returned {resp.status_code}: {_error_text(resp)}")
    return resp


def _error_text(resp: requests.Response) -> str:
    try:
        body = resp.json()
        message = body.get("error", resp.text.strip())
        if "offset" in body:
            message += f" (at offset {body['offset']})"
        return message
    except ValueError:
        return resp.text.strip() or f"HTTP {resp.status_code}"


def format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    for row in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def _rows_table(rows: list[dict]) -> str:
    metric_names = sorted({name for row in rows for name in row["metrics"]})
    headers = ["HOST", "CLUSTER"] + metric_names
    table = []
    for row in rows:
        cells = [row["host_id"], row["cluster"]]
        for name in metric_names:
            entry = row["metrics"].get(name)
            cells.append(_json_value_lexical(entry["value"]) if entry else "n/a")
        table.append(cells)
    return format_table(headers, table)


def _json_value_lexical(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _rows_to_views(rows: list[dict]) -> list[ClusterView]:
    """Rebuild cluster documents from response rows (for xml output)."""
    clusters: dict[str, dict[str, HostRecord]] = {}
    for row in rows:
        samples = {}
        for name, entry in row["metrics"].items():
            value = entry["value"]
            if entry["type"] == "float" and isinstance(value, int):
                value = float(value)
            samples[name] = MetricSample(
                name=name,
                value=value,
                kind=MetricKind(entry["kind"]),
                collected_at=entry["collected_at"],
                ttl_seconds=entry["ttl_seconds"],
                units=entry.get("units", ""),
            )
        record = HostRecord(
            host_id=row["host_id"],
            cluster=row["cluster"],
            agent_version=row["agent_version"],
            heartbeat_at=row["heartbeat_at"],
            samples=samples,
        )
        clusters.setdefault(record.cluster, {})[record.host_id] = record
    views = []
    for name in sorted(clusters):
        hosts = clusters[name]
        generated = max((r.heartbeat_at for r in hosts.values()), default=0)
        views.append(ClusterView(name=name, hosts=hosts, generated_at=generated))
    return views


def _emit_rows(rows: list[dict], output: str, body: Optional[bytes] = None) -> None:
    if output == "json":
        sys.stdout.buffer.write(body if body is not None else encode_json(rows))
    elif output == "xml":
        from .model import serialize_index

        views = _rows_to_views(rows)
        generated = max((v.generated_at for v in views), default=0)
        sys.stdout.buffer.write(serialize_index(views, generated))
    else:
        sys.stdout.write(_rows_table(rows))
    sys.stdout.flush()


# --- subcommands ---------------------------------------------------------------


def _cmd_query(args) -> int:
    try:
        parse_query(args.expr)  # local pre-parse: fail fast, no network
    except QuerySyntaxError as exc:
        sys.stderr.write(f"syntax error: {exc.reason} (at offset {exc.offset})\n")
        return EXIT_USAGE
    project = [p for p in args.project.split(",") if p]
    url = f"{_server_url(args.server)}/v1/query"
    resp = _check(_http("POST", url, json={"q": args.expr, "project": project}))
    _emit_rows(resp.json(), args.output, body=resp.content)
    return EXIT_OK


def _cmd_render(args) -> int:
    url = f"{_server_url(args.server)}/v1/view/{args.view}"
    resp = _check(_http("GET", url, params={"q": args.query}))
    if args.out:
        Path(args.out).write_bytes(resp.content)
    else:
        sys.stdout.buffer.write(resp.content)
        sys.stdout.flush()
    return EXIT_OK


def _cmd_trigger(args) -> int:
    base = f"{_server_url(args.server)}/v1/triggers"
    if args.trigger_command == "add":
        try:
            raw = json.loads(Path(args.file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            sys.stderr.write(f"cannot read rules file: {exc}\n")
            return EXIT_USAGE
        entries = raw if isinstance(raw, list) else [raw]
        for entry in entries:
            resp = _check(_http("POST", base, json=entry))
            sys.stdout.write(f"added {resp.json()['id']}\n")
        return EXIT_OK
    if args.trigger_command == "list":
        resp = _check(_http("GET", base))
        rules = resp.json()
        if args.output == "json":
            sys.stdout.buffer.write(resp.content)
        else:
            rows = [
                [r["id"], "yes" if r["enabled"] else "no", r["condition"],
                 r["action"]["kind"], str(r["sustain_samples"]), str(r["cooldown_seconds"])]
                for r in rules
            ]
            sys.stdout.write(
                format_table(["ID", "ENABLED", "CONDITION", "ACTION", "SUSTAIN", "COOLDOWN"], rows)
            )
        return EXIT_OK
    if args.trigger_command == "rm":
        _check(_http("DELETE", f"{base}/{args.rule_id}"))
        sys.stdout.write(f"removed {args.rule_id}\n")
        return EXIT_OK
    raise AssertionError("unreachable")


def _parse_timestamp(text: str) -> int:
    if text.isdigit():
        return int(text)
    try:
        stamp = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    except ValueError:
        raise _CliError(EXIT_USAGE, f"bad timestamp {text!r} (want epoch seconds or RFC3339 Z)")
    return int(stamp.timestamp())


def _cmd_replay(args) -> int:
    try:
        query = parse_query(args.query, tuple(p for p in args.project.split(",") if p))
    except QuerySyntaxError as exc:
        sys.stderr.write(f"syntax error: {exc.reason} (at offset {exc.offset})\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    at = _parse_timestamp(args.at)
    store = SnapshotStore(args.store)
    try:
        frame = store.frame_at_or_before(at)
    except NotFound as exc:
        raise _CliError(EXIT_NOT_FOUND, str(exc))
    views, _generated = parse_index(frame.data)
    clusters = {v.name: v for v in views}
    records = evaluate_query(clusters, query, now=frame.captured_at)
    rows = [host_row(r, frame.version) for r in records]
    _emit_rows(rows, args.output)
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "agent":
            try:
                config = AgentConfig.from_file(args.config)
            except AgentConfigError as exc:
                sys.stderr.write(f"bad agent config: {exc}\n")
                return EXIT_USAGE
            run_agent(config)
            return EXIT_OK
        if args.command == "aggregator":
            try:
                config = AggregatorConfig.from_file(args.config)
            except AggregatorConfigError as exc:
                sys.stderr.write(f"bad aggregator config: {exc}\n")
                return EXIT_USAGE
            run_aggregator(config)
            return EXIT_OK
        if args.command == "query":
            return _cmd_query(args)
        if args.command == "render":
            return _cmd_render(args)
        if args.command == "trigger":
            return _cmd_trigger(args)
        if args.command == "replay":
            return _cmd_replay(args)
    except _CliError as exc:
        sys.stderr.write(exc.message + "\n")
        return exc.code
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())

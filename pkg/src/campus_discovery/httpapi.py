"""HTTP surface of the index service.

Every handler takes one immutable index snapshot on entry and answers as a
pure function of (snapshot version, request, receipt time); each returned
host row embeds the snapshot version so clients can assert they never see
two versions mixed in one response. JSON bodies are emitted with sorted
keys and compact separators, making response bytes reproducible.

Endpoints (all JSON unless noted):

    GET  /v1/clusters                     cluster names, host counts, version
    GET  /v1/hosts?q=...&project=a,b      query the index
    POST /v1/query      {"q":..., "project":[...]}
    GET  /v1/hosts/{id}                   full record incl. per-metric freshness
    GET  /v1/index.xml                    canonical XML of the whole index
    POST /v1/subscriptions {"q":...}      create a change subscription
    GET  /v1/subscriptions/{id}/events    drain pending change events
    GET  /v1/stream?q=...                 server-sent events, one JSON event each
    GET  /v1/sources                      source registrations w/ lease state
    GET  /v1/view/{name}?q=...            rendered HTML page (text/html)
    GET|POST /v1/triggers, GET|POST|DELETE /v1/triggers/{id}
    GET  /ui/...                          static portal assets (when configured)
"""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from .aggregator import Aggregator, IndexState
from .model import HostRecord
from .query import Query, QuerySyntaxError, evaluate_query, parse_query
from .render import Template, render
from .subscriptions import SubscriptionManager, UnknownSubscription
from .triggers import DuplicateRule, TriggerEngine, ValidationError, rule_from_dict

log = logging.getLogger(__name__)

DEFAULT_MAX_RESULTS = 1000
STREAM_POLL_SECONDS = 0.25


def host_row(record: HostRecord, version: int, now: Optional[int] = None) -> dict:
    """JSON shape of one host; freshness flags only when `now` is given."""
    metrics = {}
    for name, s in record.samples.items():
        entry = {
            "type": s.value_type.value,
            "kind": s.kind.value,
            "value": s.value,
            "units": s.units,
            "collected_at": s.collected_at,
            "ttl_seconds": s.ttl_seconds,
        }
        if now is not None:
            entry["fresh"] = s.is_fresh(now)
        metrics[name] = entry
    return {
        "host_id": record.host_id,
        "cluster": record.cluster,
        "agent_version": record.agent_version,
        "heartbeat_at": record.heartbeat_at,
        "version": version,
        "metrics": metrics,
    }


def encode_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


@dataclass
class ApiContext:
    aggregator: Aggregator
    subscriptions: SubscriptionManager
    triggers: Optional[TriggerEngine] = None
    templates: dict[str, Template] = field(default_factory=dict)
    ui_dir: Optional[Path] = None
    max_results: int = DEFAULT_MAX_RESULTS
    clock: Callable[[], float] = time.time
    stopping: threading.Event = field(default_factory=threading.Event)

    def now(self) -> int:
        return int(self.clock())


class _RequestProblem(Exception):
    def __init__(self, status: int, payload: dict):
        self.status = status
        self.payload = payload


def _bad_request(message: str, **extra) -> _RequestProblem:
    return _RequestProblem(400, {"error": message, **extra})


def _not_found(message: str) -> _RequestProblem:
    return _RequestProblem(404, {"error": message})


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    ctx: ApiContext  # set on the subclass

    # --- plumbing ---------------------------------------------------------

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, obj, status: int = 200) -> None:
        self._send(status, encode_json(obj), "application/json")

    def _read_json_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise _bad_request("request body must be a JSON object")
        try:
            body = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise _bad_request(f"bad JSON body: {exc}")
        if not isinstance(body, dict):
            raise _bad_request("request body must be a JSON object")
        return body

    def _query_from(self, text: str, project) -> Query:
        if isinstance(project, str):
            project = [p for p in project.split(",") if p]
        try:
            return parse_query(text, tuple(project or ()))
        except QuerySyntaxError as exc:
            raise _bad_request(exc.reason, offset=exc.offset)
        except ValueError as exc:
            raise _bad_request(str(exc))

    def _evaluate(self, state: IndexState, query: Query, now: int) -> list[dict]:
        rows = evaluate_query(state.clusters, query, now)
        if len(rows) > self.ctx.max_results:
            raise _bad_request(
                "ResultTooLarge", limit=self.ctx.max_results, matched=len(rows)
            )
        return [host_row(r, state.version) for r in rows]

    # --- dispatch ---------------------------------------------------------

    def do_GET(self):  # noqa: N802  (stdlib handler naming)
        self._dispatch("GET")

    def do_POST(self):  # noqa: N802
        self._dispatch("POST")

    def do_DELETE(self):  # noqa: N802
        self._dispatch("DELETE")

    def _dispatch(self, method: str) -> None:
        try:
            url = urlparse(self.path)
            params = {k: v[-1] for k, v in parse_qs(url.query, keep_blank_values=True).items()}
            segments = [s for s in url.path.split("/") if s]
            self._route(method, url.path, segments, params)
        except _RequestProblem as problem:
            self._send_json(problem.payload, problem.status)
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception:
            log.exception("internal error handling %s %s", method, self.path)
            try:
                self._send_json({"error": "internal server error"}, 500)
            except OSError:
                pass

    def _route(self, method: str, path: str, segments: list[str], params: dict) -> None:
        ctx = self.ctx
        state = ctx.aggregator.snapshot()
        now = ctx.now()

        if segments[:1] == ["ui"] and method == "GET":
            return self._serve_static(segments[1:])
        if path == "/" and method == "GET" and ctx.ui_dir is not None:
            self.send_response(302)
            self.send_header("Location", "/ui/")
            self.send_header("Content-Length", "0")
            self.end_headers()
            return

        if segments[:1] != ["v1"]:
            raise _not_found(f"no such path: {path}")
        rest = segments[1:]

        if rest == ["clusters"] and method == "GET":
            clusters = [
                {"name": name, "hosts": len(state.clusters[name].hosts)}
                for name in sorted(state.clusters)
            ]
            return self._send_json(
                {"version": state.version, "updated_at": state.updated_at, "clusters": clusters}
            )

        if rest == ["hosts"] and method == "GET":
            query = self._query_from(params.get("q", ""), params.get("project", ""))
            return self._send_json(self._evaluate(state, query, now))

        if rest == ["query"] and method == "POST":
            body = self._read_json_body()
            query = self._query_from(body.get("q", ""), body.get("project") or ())
            return self._send_json(self._evaluate(state, query, now))

        if len(rest) == 2 and rest[0] == "hosts" and method == "GET":
            record = state.find_host(rest[1])
            if record is None:
                raise _not_found(f"no host {rest[1]!r}")
            return self._send_json(host_row(record, state.version, now=now))

        if rest == ["index.xml"] and method == "GET":
            return self._send(200, ctx.aggregator.index_xml(state), "application/xml")

        if rest == ["sources"] and method == "GET":
            return self._send_json(
                {
                    "sources": ctx.aggregator.sources_status(now),
                    "dropped_datagrams": ctx.aggregator.dropped_datagrams,
                }
            )

        if rest == ["subscriptions"] and method == "POST":
            body = self._read_json_body()
            query = self._query_from(body.get("q", ""), ())
            sub = ctx.subscriptions.subscribe(query, state.clusters, state.version, now=now)
            return self._send_json({"id": sub.id}, 201)

        if len(rest) == 3 and rest[0] == "subscriptions" and rest[2] == "events" and method == "GET":
            try:
                events = ctx.subscriptions.poll_events(
                    rest[1], state.clusters, state.version, now=now
                )
            except UnknownSubscription as exc:
                raise _not_found(str(exc))
            return self._send_json([e.to_json() for e in events])

        if rest == ["stream"] and method == "GET":
            query = self._query_from(params.get("q", ""), ())
            return self._stream(query)

        if len(rest) == 2 and rest[0] == "view" and method == "GET":
            template = ctx.templates.get(rest[1])
            if template is None:
                raise _not_found(f"no view {rest[1]!r}")
            query = self._query_from(params.get("q", ""), params.get("project", ""))
            hosts = evaluate_query(state.clusters, query, now)
            if len(hosts) > ctx.max_results:
                raise _bad_request("ResultTooLarge", limit=ctx.max_results, matched=len(hosts))
            body = render(template, hosts, state.updated_at)
            return self._send(200, body, "text/html; charset=utf-8")

        if rest[:1] == ["triggers"]:
            return self._triggers(method, rest[1:])

        raise _not_found(f"no such path: {path}")

    # --- triggers ---------------------------------------------------------

    def _triggers(self, method: str, rest: list[str]) -> None:
        engine = self.ctx.triggers
        if engine is None:
            raise _not_found("trigger service not running")
        if not rest:
            if method == "GET":
                return self._send_json([r.to_json() for r in engine.list_rules()])
            if method == "POST":
                body = self._read_json_body()
                try:
                    rule = engine.add_rule(rule_from_dict(body))
                except ValidationError as exc:
                    raise _bad_request(str(exc), rule=exc.rule_id)
                except DuplicateRule as exc:
                    raise _bad_request(str(exc))
                return self._send_json(rule.to_json(), 201)
        elif len(rest) == 1:
            rule_id = rest[0]
            if method == "GET":
                rule = engine.get_rule(rule_id)
                if rule is None:
                    raise _not_found(f"no trigger {rule_id!r}")
                return self._send_json(rule.to_json())
            if method == "DELETE":
                if not engine.remove_rule(rule_id):
                    raise _not_found(f"no trigger {rule_id!r}")
                return self._send_json({"removed": rule_id})
            if method == "POST":
                body = self._read_json_body()
                if "enabled" not in body or not isinstance(body["enabled"], bool):
                    raise _bad_request('body must be {"enabled": true|false}')
                try:
                    rule = engine.set_enabled(rule_id, body["enabled"])
                except KeyError:
                    raise _not_found(f"no trigger {rule_id!r}")
                return self._send_json(rule.to_json())
        raise _not_found("no such trigger endpoint")

    # --- SSE ----------------------------------------------------------------

    def _write_chunk(self, payload: bytes) -> None:
        self.wfile.write(f"{len(payload):X}\r\n".encode("ascii") + payload + b"\r\n")
        self.wfile.flush()

    def _stream(self, query: Query) -> None:
        ctx = self.ctx
        state = ctx.aggregator.snapshot()
        sub = ctx.subscriptions.subscribe(query, state.clusters, state.version, now=ctx.now())
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        # chunked framing so clients see each event as soon as it is written
        self.send_header("Transfer-Encoding", "chunked")
        self.end_headers()
        self.close_connection = True
        try:
            while not ctx.stopping.is_set():
                state = ctx.aggregator.snapshot()
                events = ctx.subscriptions.poll_events(
                    sub.id, state.clusters, state.version, now=ctx.now()
                )
                payload = b""
                for event in events:
                    payload += b"data: " + encode_json(event.to_json()).strip() + b"\n\n"
                if not payload:
                    payload = b": keepalive\n\n"
                self._write_chunk(payload)
                if ctx.stopping.wait(STREAM_POLL_SECONDS):
                    break
            self.wfile.write(b"0\r\n\r\n")
        except (BrokenPipeError, ConnectionResetError, UnknownSubscription):
            pass
        finally:
            ctx.subscriptions.drop(sub.id)

    # --- static assets ----------------------------------------------------

    def _serve_static(self, parts: list[str]) -> None:
        root = self.ctx.ui_dir
        if root is None:
            raise _not_found("no portal assets configured")
        root = root.resolve()
        target = (root.joinpath(*parts) if parts else root).resolve()
        if target.is_dir():
            target = target / "index.html"
        if root not in target.parents and target != root:
            raise _not_found("no such asset")
        if not target.is_file():
            raise _not_found("no such asset")
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._send(200, target.read_bytes(), content_type)


class IndexHTTPServer:
    """Threaded HTTP server bound to the context; start() returns once bound."""

    def __init__(self, context: ApiContext, address: str = "127.0.0.1", port: int = 8642):
        handler = type("BoundHandler", (_Handler,), {"ctx": context})
        self.context = context
        self._httpd = ThreadingHTTPServer((address, port), handler)
        self._httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.context.stopping.set()
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

"""Per-host monitoring agent.

Collects static attributes and dynamic metrics on an interval, keeps the
latest single-host snapshot as an immutable value, serves it verbatim to
any TCP client that connects (pull), and optionally announces the same
bytes as a single UDP datagram (push). The collection loop is the only
writer; pull handlers only ever read the current snapshot reference, so
no reader can observe a half-updated document.

Two collector backends exist: `system` reads the local OS (Linux /proc
plus stdlib fallbacks) and `fixture` replays a JSON-declared metric set
with per-tick value sequences, which is what every deterministic test in
the suite builds on.
"""

from __future__ import annotations

import json
import logging
import os
import platform
import shutil
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from .model import (
    ClusterView,
    HostRecord,
    MetricKind,
    MetricSample,
    ValueType,
    canonical_serialize,
    parse_lexical,
)

log = logging.getLogger(__name__)

MAX_ANNOUNCE_BYTES = 8192

STANDARD_STATIC = ("os.name", "os.release", "cpu.model", "cpu.count", "cpu.mhz", "mem.total_mb")
STANDARD_DYNAMIC = (
    "load.one",
    "load.five",
    "load.fifteen",
    "cpu.util_pct",
    "mem.free_mb",
    "disk.free_mb",
)


class ConfigError(ValueError):
    """Bad agent configuration or fixture file."""


class CollectorUnavailable(RuntimeError):
    """A metric source could not be read."""


class NotReady(RuntimeError):
    """No collection has completed yet."""


class DocumentTooLarge(ValueError):
    """Serialized snapshot exceeds the one-datagram announce budget."""


_CONFIG_KEYS = {
    "cluster",
    "host_id",
    "collect_interval_seconds",
    "announce_target",
    "listen_address",
    "listen_port",
    "static_ttl_seconds",
    "dynamic_ttl_seconds",
    "backend",
    "fixture_path",
}


def _parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ConfigError(f"expected host:port, got {text!r}")
    return host, int(port)


@dataclass(frozen=True)
class AgentConfig:
    cluster: str
    host_id: Optional[str] = None
    collect_interval_seconds: int = 15
    announce_target: Optional[str] = None
    listen_address: str = "0.0.0.0"
    listen_port: int = 8649
    static_ttl_seconds: int = 86400
    dynamic_ttl_seconds: int = 60
    backend: str = "system"
    fixture_path: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.cluster:
            raise ConfigError("cluster must be set")
        for field_name in ("collect_interval_seconds", "static_ttl_seconds", "dynamic_ttl_seconds"):
            if not isinstance(getattr(self, field_name), int) or getattr(self, field_name) <= 0:
                raise ConfigError(f"{field_name} must be a positive integer")
        if not isinstance(self.listen_port, int) or not (0 <= self.listen_port <= 65535):
            raise ConfigError("listen_port must be a TCP port number")
        if self.backend not in ("system", "fixture"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "fixture":
            if not self.fixture_path:
                raise ConfigError("fixture backend requires fixture_path")
            if not Path(self.fixture_path).is_file():
                raise ConfigError(f"fixture file not found: {self.fixture_path}")
        if self.announce_target is not None:
            _parse_hostport(self.announce_target)

    @classmethod
    def from_dict(cls, raw: dict) -> "AgentConfig":
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "AgentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read agent config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("agent config must be a JSON object")
        return cls.from_dict(raw)


# --- fixture backend ----------------------------------------------------------


class FixtureBackend:
    """Replays a declared metric set; dynamic metrics advance one sequence
    step per collect and hold their last value once exhausted."""

    def __init__(self, path: str | Path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read fixture {path}: {exc}") from None
        self._static: list[tuple[str, object, str]] = []
        self._dynamic: list[tuple[str, list, str]] = []
        self._tick = 0
        for entry in doc.get("static", []):
            name, value, units = self._entry(entry, "value")
            self._static.append((name, value, units))
        for entry in doc.get("dynamic", []):
            name, seq, units = self._entry(entry, "sequence")
            if not isinstance(seq, list) or not seq:
                raise ConfigError(f"fixture metric {name}: sequence must be non-empty")
            values = [self._coerce(entry["type"], v, name) for v in seq]
            self._dynamic.append((name, values, units))
        if not self._static and not self._dynamic:
            raise ConfigError("fixture declares no metrics")

    @staticmethod
    def _coerce(type_tag: str, value, name: str):
        ok = {
            "string": lambda v: isinstance(v, str),
            "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "bool": lambda v: isinstance(v, bool),
        }
        if type_tag not in ok:
            raise ConfigError(f"fixture metric {name}: unknown type {type_tag!r}")
        if not ok[type_tag](value):
            raise ConfigError(f"fixture metric {name}: value {value!r} does not match {type_tag}")
        return float(value) if type_tag == "float" else value

    def _entry(self, entry: dict, payload_key: str):
        try:
            name = entry["name"]
            type_tag = entry["type"]
            payload = entry[payload_key]
        except (KeyError, TypeError):
            raise ConfigError(f"fixture metric entries need name/type/{payload_key}") from None
        units = entry.get("units", "")
        if payload_key == "value":
            payload = self._coerce(type_tag, payload, name)
        # validity of the name itself is checked by MetricSample on collect
        ValueType(type_tag)
        return name, payload, units

    def collect(self, now: int, static_ttl: int, dynamic_ttl: int) -> list[MetricSample]:
        samples = [
            MetricSample(name, value, MetricKind.STATIC, now, static_ttl, units=units)
            for name, value, units in self._static
        ]
        for name, seq, units in self._dynamic:
            value = seq[min(self._tick, len(seq) - 1)]
            samples.append(
                MetricSample(name, value, MetricKind.DYNAMIC, now, dynamic_ttl, units=units)
            )
        self._tick += 1
        return samples


# --- system backend -----------------------------------------------------------


class SystemBackend:
    """Reads the local machine. Individual source failures drop that metric
    (logged), never the whole collection."""

    def __init__(self):
        self._prev_stat: Optional[tuple[int, int]] = None

    def collect(self, now: int, static_ttl: int, dynamic_ttl: int) -> list[MetricSample]:
        samples: list[MetricSample] = []

        def add(name, reader, kind, ttl, units=""):
            try:
                value = reader()
            except Exception as exc:
                log.warning("collector: cannot read %s: %s", name, exc)
                return
            if value is None:
                log.warning("collector: no value for %s", name)
                return
            samples.append(MetricSample(name, value, kind, now, ttl, units=units))

        cpuinfo = self._cpuinfo()
        meminfo = self._meminfo()
        add("os.name", platform.system, MetricKind.STATIC, static_ttl)
        add("os.release", platform.release, MetricKind.STATIC, static_ttl)
        add("cpu.model", lambda: cpuinfo[0], MetricKind.STATIC, static_ttl)
        add("cpu.count", os.cpu_count, MetricKind.STATIC, static_ttl)
        add("cpu.mhz", lambda: cpuinfo[1], MetricKind.STATIC, static_ttl, units="MHz")
        add("mem.total_mb", lambda: meminfo[0], MetricKind.STATIC, static_ttl, units="MB")
        loadavg = self._loadavg()
        add("load.one", lambda: loadavg[0], MetricKind.DYNAMIC, dynamic_ttl)
        add("load.five", lambda: loadavg[1], MetricKind.DYNAMIC, dynamic_ttl)
        add("load.fifteen", lambda: loadavg[2], MetricKind.DYNAMIC, dynamic_ttl)
        add("cpu.util_pct", self._cpu_util, MetricKind.DYNAMIC, dynamic_ttl, units="%")
        add("mem.free_mb", lambda: meminfo[1], MetricKind.DYNAMIC, dynamic_ttl, units="MB")
        add(
            "disk.free_mb",
            lambda: int(shutil.disk_usage("/").free // (1024 * 1024)),
            MetricKind.DYNAMIC,
            dynamic_ttl,
            units="MB",
        )
        return samples

    @staticmethod
    def _loadavg() -> tuple[float, float, float]:
        try:
            return os.getloadavg()
        except OSError as exc:
            raise CollectorUnavailable(str(exc)) from None

    @staticmethod
    def _cpuinfo() -> tuple[Optional[str], Optional[float]]:
        model, mhz = None, None
        try:
            with open("/proc/cpuinfo") as fh:
                for line in fh:
                    key, _, value = line.partition(":")
                    key = key.strip()
                    if key == "model name" and model is None:
                        model = value.strip()
                    elif key == "cpu MHz" and mhz is None:
                        mhz = float(value.strip())
                    if model is not None and mhz is not None:
                        break
        except OSError:
            pass
        if model is None:
            model = platform.processor() or platform.machine() or None
        return model, mhz

    @staticmethod
    def _meminfo() -> tuple[Optional[int], Optional[int]]:
        total_kb, avail_kb, free_kb = None, None, None
        try:
            with open("/proc/meminfo") as fh:
                for line in fh:
                    key, _, value = line.partition(":")
                    amount = value.strip().split()
                    if not amount:
                        continue
                    if key == "MemTotal":
                        total_kb = int(amount[0])
                    elif key == "MemAvailable":
                        avail_kb = int(amount[0])
                    elif key == "MemFree":
                        free_kb = int(amount[0])
        except OSError:
            return None, None
        if avail_kb is None:
            avail_kb = free_kb
        total = total_kb // 1024 if total_kb is not None else None
        avail = avail_kb // 1024 if avail_kb is not None else None
        return total, avail

    def _cpu_util(self) -> float:
        with open("/proc/stat") as fh:
            first = fh.readline().split()
        if not first or first[0] != "cpu":
            raise CollectorUnavailable("/proc/stat has no cpu line")
        fields = [int(x) for x in first[1:]]
        total = sum(fields)
        idle = fields[3] + (fields[4] if len(fields) > 4 else 0)
        prev = self._prev_stat
        self._prev_stat = (total, idle)
        if prev is not None:
            d_total, d_idle = total - prev[0], idle - prev[1]
        else:
            d_total, d_idle = total, idle  # first sample: utilization since boot
        if d_total <= 0:
            return 0.0
        return round(100.0 * (d_total - d_idle) / d_total, 2)


def make_backend(config: AgentConfig):
    if config.backend == "fixture":
        return FixtureBackend(config.fixture_path)
    return SystemBackend()


# --- agent core ----------------------------------------------------------------


class Agent:
    """Collection state machine; snapshot swaps are atomic reference updates."""

    def __init__(self, config: AgentConfig, clock: Callable[[], float] = time.time):
        self.config = config
        self.clock = clock
        self.host_id = config.host_id or socket.gethostname()
        self.backend = make_backend(config)
        self._snapshot_bytes: Optional[bytes] = None
        self._announce_sock: Optional[socket.socket] = None
        self._announce_disabled = False

    def collect_once(self, now: Optional[int] = None) -> ClusterView:
        now = int(self.clock()) if now is None else now
        samples = self.backend.collect(
            now, self.config.static_ttl_seconds, self.config.dynamic_ttl_seconds
        )
        record = HostRecord(
            host_id=self.host_id,
            cluster=self.config.cluster,
            agent_version=__version__,
            heartbeat_at=now,
            samples={s.name: s for s in samples},
        )
        view = ClusterView(
            name=self.config.cluster, hosts={record.host_id: record}, generated_at=now
        )
        self._snapshot_bytes = canonical_serialize(view)
        return view

    def snapshot_bytes(self) -> bytes:
        if self._snapshot_bytes is None:
            raise NotReady("no collection has completed yet")
        return self._snapshot_bytes

    def announce(self) -> None:
        """Send the current snapshot as one UDP datagram (fire and forget)."""
        if self.config.announce_target is None:
            return
        payload = self.snapshot_bytes()
        if len(payload) > MAX_ANNOUNCE_BYTES:
            raise DocumentTooLarge(
                f"snapshot is {len(payload)} bytes; announce limit is {MAX_ANNOUNCE_BYTES}"
            )
        if self._announce_sock is None:
            self._announce_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        target = _parse_hostport(self.config.announce_target)
        self._announce_sock.sendto(payload, target)

    def announce_safe(self) -> None:
        """Announce for the service loop: degrades to pull-only, never raises."""
        if self._announce_disabled:
            return
        try:
            self.announce()
        except DocumentTooLarge as exc:
            self._announce_disabled = True
            log.warning("announce disabled, falling back to pull-only: %s", exc)
        except OSError as exc:
            log.warning("announce failed: %s", exc)

    def close(self) -> None:
        if self._announce_sock is not None:
            self._announce_sock.close()
            self._announce_sock = None


class _PullHandler(socketserver.BaseRequestHandler):
    def handle(self):
        agent: Agent = self.server.agent  # type: ignore[attr-defined]
        try:
            payload = agent.snapshot_bytes()
        except NotReady:
            return  # close with no bytes
        try:
            self.request.sendall(payload)
        except OSError:
            pass


class _PullServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class AgentService:
    """Runs the collect/announce loop and the TCP pull server."""

    def __init__(self, config: AgentConfig, clock: Callable[[], float] = time.time):
        self.agent = Agent(config, clock)
        self.config = config
        self._stop = threading.Event()
        self._server: Optional[_PullServer] = None
        self._threads: list[threading.Thread] = []

    @property
    def port(self) -> int:
        assert self._server is not None, "service not started"
        return self._server.server_address[1]

    def start(self) -> None:
        self.agent.collect_once()
        self._server = _PullServer(
            (self.config.listen_address, self.config.listen_port), _PullHandler
        )
        self._server.agent = self.agent  # type: ignore[attr-defined]
        serve = threading.Thread(target=self._server.serve_forever, daemon=True)
        loop = threading.Thread(target=self._loop, daemon=True)
        self._threads = [serve, loop]
        for t in self._threads:
            t.start()
        self.agent.announce_safe()

    def _loop(self) -> None:
        interval = self.config.collect_interval_seconds
        while not self._stop.wait(interval):
            try:
                self.agent.collect_once()
            except Exception:
                log.exception("collection failed; keeping previous snapshot")
                continue
            self.agent.announce_safe()

    def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self.agent.close()


def run(config: AgentConfig) -> None:
    """Blocking entry point for `agent run`."""
    service = AgentService(config)
    service.start()
    log.info(
        "agent %s serving cluster %s on %s:%d",
        service.agent.host_id,
        config.cluster,
        config.listen_address,
        service.port,
    )
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()


def fetch_snapshot(address: str | tuple[str, int], timeout: float = 5.0) -> bytes:
    """Pull one document from an agent (connect, read to EOF, close)."""
    if isinstance(address, str):
        address = _parse_hostport(address)
    with socket.create_connection(address, timeout=timeout) as sock:
        chunks = []
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                break
            chunks.append(chunk)
    return b"".join(chunks)

"""Aggregator runtime: wires the index core to its HTTP API, UDP push
listener, source pollers, stale sweeper, snapshot capture and the trigger
loop, all driven by one stop event.

Each pull/exec source gets its own poller thread. A poller's first poll is
delayed by the source's deterministic jitter fraction, it stops as soon as
the wall clock reaches the source's lease expiry (renewals push that
boundary forward), and it survives poll failures (the registry tracks
consecutive failures and the degraded flag).
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .aggregator import Aggregator, SourceKind, SourceRegistration, first_poll_delay
from .httpapi import ApiContext, IndexHTTPServer
from .render import Template, load_builtin_templates, load_template_dir
from .store import OutOfOrderFrame, SnapshotFrame, SnapshotStore
from .subscriptions import DEFAULT_IDLE_LIFETIME, SubscriptionManager
from .triggers import TriggerEngine, load_rules

log = logging.getLogger(__name__)

DEFAULT_HTTP_PORT = 8642
DEFAULT_PUSH_PORT = 8649


class ConfigError(ValueError):
    pass


def _require_keys(raw: dict, allowed: set[str], what: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class CaptureConfig:
    directory: str
    interval_seconds: int = 60
    retention_seconds: int = 7 * 86400

    @classmethod
    def from_dict(cls, raw: dict) -> "CaptureConfig":
        _require_keys(raw, {"directory", "interval_seconds", "retention_seconds"}, "capture")
        if "directory" not in raw:
            raise ConfigError("capture needs a directory")
        return cls(**raw)


@dataclass(frozen=True)
class TriggerConfig:
    rules_file: Optional[str] = None
    log_file: Optional[str] = None
    cycle_seconds: int = 10

    @classmethod
    def from_dict(cls, raw: dict) -> "TriggerConfig":
        _require_keys(raw, {"rules_file", "log_file", "cycle_seconds"}, "trigger")
        return cls(**raw)


@dataclass(frozen=True)
class AggregatorConfig:
    http_address: str = "127.0.0.1"
    http_port: int = DEFAULT_HTTP_PORT
    push_address: str = "0.0.0.0"
    push_port: Optional[int] = DEFAULT_PUSH_PORT  # None disables the push listener
    sweep_interval_seconds: float = 5
    subscription_idle_seconds: int = DEFAULT_IDLE_LIFETIME
    max_results: int = 1000
    templates_dir: Optional[str] = None
    ui_dir: Optional[str] = None
    capture: Optional[CaptureConfig] = None
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    sources: tuple[dict, ...] = ()

    @classmethod
    def from_dict(cls, raw: dict) -> "AggregatorConfig":
        _require_keys(
            raw,
            {
                "http_address",
                "http_port",
                "push_address",
                "push_port",
                "sweep_interval_seconds",
                "subscription_idle_seconds",
                "max_results",
                "templates_dir",
                "ui_dir",
                "capture",
                "trigger",
                "sources",
            },
            "aggregator config",
        )
        kwargs = dict(raw)
        if kwargs.get("capture") is not None:
            kwargs["capture"] = CaptureConfig.from_dict(kwargs["capture"])
        if "trigger" in kwargs:
            kwargs["trigger"] = TriggerConfig.from_dict(kwargs.get("trigger") or {})
        if "sources" in kwargs:
            if not isinstance(kwargs["sources"], list):
                raise ConfigError("sources must be an array")
            kwargs["sources"] = tuple(kwargs["sources"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "AggregatorConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read aggregator config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("aggregator config must be a JSON object")
        return cls.from_dict(raw)


class AggregatorService:
    def __init__(self, config: AggregatorConfig, clock: Callable[[], float] = time.time):
        self.config = config
        self.clock = clock
        self.aggregator = Aggregator(clock)
        self.subscriptions = SubscriptionManager(clock, config.subscription_idle_seconds)
        rules = []
        if config.trigger.rules_file:
            rules = load_rules(Path(config.trigger.rules_file).read_bytes())
        self.triggers = TriggerEngine(rules, clock=clock, log_path=config.trigger.log_file)
        self.store: Optional[SnapshotStore] = None
        if config.capture is not None:
            self.store = SnapshotStore(config.capture.directory, config.capture.retention_seconds)
        templates: dict[str, Template] = load_builtin_templates()
        if config.templates_dir:
            templates.update(load_template_dir(config.templates_dir))
        self._stop = threading.Event()
        self.context = ApiContext(
            aggregator=self.aggregator,
            subscriptions=self.subscriptions,
            triggers=self.triggers,
            templates=templates,
            ui_dir=Path(config.ui_dir) if config.ui_dir else None,
            max_results=config.max_results,
            clock=clock,
            stopping=self._stop,
        )
        self.http = IndexHTTPServer(self.context, config.http_address, config.http_port)
        self._push_sock: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._poller_lock = threading.Lock()
        self._pollers: dict[str, threading.Thread] = {}

    # --- lifecycle --------------------------------------------------------

    @property
    def http_port(self) -> int:
        return self.http.port

    @property
    def push_port(self) -> Optional[int]:
        if self._push_sock is None:
            return None
        return self._push_sock.getsockname()[1]

    def start(self) -> None:
        self.http.start()
        if self.config.push_port is not None:
            self._push_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._push_sock.bind((self.config.push_address, self.config.push_port))
            self._push_sock.settimeout(0.2)
            self._spawn(self._push_loop, "push-listener")
        self._spawn(self._maintenance_loop, "sweeper")
        if self.store is not None:
            self._spawn(self._capture_loop, "capture")
        self._spawn(self._trigger_loop, "triggers")
        for desc in self.config.sources:
            self.register(desc)
        log.info("aggregator serving HTTP on %s:%d", self.config.http_address, self.http_port)

    def stop(self) -> None:
        self._stop.set()
        self.http.stop()
        if self._push_sock is not None:
            self._push_sock.close()
        for thread in self._threads + list(self._pollers.values()):
            thread.join(timeout=5)

    def _spawn(self, target, name: str) -> None:
        thread = threading.Thread(target=target, name=name, daemon=True)
        self._threads.append(thread)
        thread.start()

    # --- sources ----------------------------------------------------------

    def register(self, desc: dict | SourceRegistration) -> SourceRegistration:
        reg = self.aggregator.register_source(desc)
        if reg.kind in (SourceKind.PULL, SourceKind.EXEC):
            with self._poller_lock:
                thread = threading.Thread(
                    target=self._poll_loop, args=(reg.source_id,), name=f"poll-{reg.source_id}",
                    daemon=True,
                )
                self._pollers[reg.source_id] = thread
                thread.start()
        return reg

    def renew(self, source_id: str) -> SourceRegistration:
        return self.aggregator.renew_lease(source_id)

    # --- loops --------------------------------------------------------------

    def _poll_loop(self, source_id: str) -> None:
        reg = self.aggregator.get_source(source_id)
        if reg is None:
            return
        interval = float(reg.poll_interval_seconds)
        if self._stop.wait(first_poll_delay(source_id, interval)):
            return
        while not self._stop.is_set():
            reg = self.aggregator.get_source(source_id)
            if reg is None:
                return  # deregistered
            if self.clock() >= reg.lease_expires_at:
                log.info("poller for %s stopping at lease expiry", source_id)
                return
            try:
                view = self.aggregator.poll_source(source_id)
                self.aggregator.ingest(view)
            except Exception as exc:
                log.warning("poll of %s failed: %s", source_id, exc)
            if self._stop.wait(interval):
                return

    def _push_loop(self) -> None:
        assert self._push_sock is not None
        while not self._stop.is_set():
            try:
                payload, _addr = self._push_sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                return  # socket closed during shutdown
            self.aggregator.handle_datagram(payload)

    def _maintenance_loop(self) -> None:
        interval = float(self.config.sweep_interval_seconds)
        while not self._stop.wait(interval):
            try:
                self.aggregator.expire_leases()
                self.aggregator.sweep_stale()
                self.subscriptions.gc()
            except Exception:
                log.exception("maintenance pass failed")

    def _capture_loop(self) -> None:
        assert self.store is not None and self.config.capture is not None
        interval = float(self.config.capture.interval_seconds)
        while not self._stop.wait(interval):
            self.capture_now()

    def capture_now(self) -> Optional[SnapshotFrame]:
        """Persist the current index as one frame; no-op when nothing advanced."""
        assert self.store is not None
        state = self.aggregator.snapshot()
        frame = SnapshotFrame(
            captured_at=int(self.clock()),
            version=state.version,
            data=self.aggregator.index_xml(state),
        )
        latest = self.store.latest_key()
        if latest is not None and (frame.version <= latest[1] or frame.key() <= latest):
            return None  # index has not advanced since the last frame
        try:
            self.store.store(frame)
        except OutOfOrderFrame:
            return None
        except OSError as exc:
            log.warning("snapshot capture failed, will retry: %s", exc)
            return None
        return frame

    def _trigger_loop(self) -> None:
        interval = float(self.config.trigger.cycle_seconds)
        while not self._stop.wait(interval):
            try:
                state = self.aggregator.snapshot()
                self.triggers.run_cycle(state.clusters)
            except Exception:
                log.exception("trigger cycle failed")


def run(config: AggregatorConfig) -> None:
    """Blocking entry point for `aggregator run`."""
    service = AggregatorService(config)
    service.start()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()

"""Aggregation core: lease-managed sources feeding a versioned host index.

Sources are registered under a lease and must renew before expiry; expired
sources stop being polled and are deregistered, but the host data they
contributed stays in the index until its own TTLs lapse (data outlives its
source). All mutations run under one lock and replace the immutable
IndexState wholesale, so readers just grab the current reference and get a
consistent snapshot at a version boundary, wait-free.
"""

from __future__ import annotations

import hashlib
import logging
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional

from .agent import fetch_snapshot
from .model import ClusterView, HostRecord, MalformedDocument, merge, parse, parse_index, serialize_index

log = logging.getLogger(__name__)

DEGRADED_AFTER_FAILURES = 3
EXEC_TIMEOUT_SECONDS = 10


class DuplicateSource(ValueError):
    pass


class UnknownSource(LookupError):
    pass


class LeaseExpired(RuntimeError):
    """The lease lapsed; the source must re-register."""


class SourceUnreachable(RuntimeError):
    pass


class ExecFailure(RuntimeError):
    pass


class SourceKind(str, Enum):
    PULL = "pull"
    PUSH = "push"
    EXEC = "exec"


@dataclass
class SourceRegistration:
    source_id: str
    kind: SourceKind
    lifetime_seconds: int
    registered_at: int
    lease_expires_at: int
    address: Optional[str] = None  # pull: host:port
    cluster: Optional[str] = None  # push: expected cluster name
    command: Optional[str] = None  # exec: command line
    poll_interval_seconds: Optional[int] = None
    consecutive_failures: int = 0
    degraded: bool = False
    last_success_at: Optional[int] = None

    def validate(self) -> None:
        if not self.source_id:
            raise ValueError("source_id must be non-empty")
        if self.lifetime_seconds <= 0:
            raise ValueError("lifetime_seconds must be positive")
        if self.kind in (SourceKind.PULL, SourceKind.EXEC):
            if not self.poll_interval_seconds or self.poll_interval_seconds <= 0:
                raise ValueError(f"{self.kind.value} source needs a positive poll interval")
            if self.poll_interval_seconds > self.lifetime_seconds:
                raise ValueError("poll_interval_seconds must not exceed lifetime_seconds")
        if self.kind == SourceKind.PULL and not self.address:
            raise ValueError("pull source needs address")
        if self.kind == SourceKind.PUSH and not self.cluster:
            raise ValueError("push source needs the expected cluster name")
        if self.kind == SourceKind.EXEC and not self.command:
            raise ValueError("exec source needs a command line")

    def is_expired(self, now: int) -> bool:
        return self.lease_expires_at < now

    def status(self, now: int) -> dict:
        info = {
            "source_id": self.source_id,
            "kind": self.kind.value,
            "lifetime_seconds": self.lifetime_seconds,
            "registered_at": self.registered_at,
            "lease_expires_at": self.lease_expires_at,
            "expired": self.is_expired(now),
            "consecutive_failures": self.consecutive_failures,
            "degraded": self.degraded,
            "last_success_at": self.last_success_at,
        }
        if self.kind == SourceKind.PULL:
            info["address"] = self.address
        elif self.kind == SourceKind.PUSH:
            info["cluster"] = self.cluster
        else:
            info["command"] = self.command
        if self.poll_interval_seconds is not None:
            info["poll_interval_seconds"] = self.poll_interval_seconds
        return info


def registration_from_dict(raw: dict, now: int) -> SourceRegistration:
    """Build a registration from a config/JSON description."""
    known = {
        "source_id",
        "kind",
        "address",
        "cluster",
        "command",
        "poll_interval_seconds",
        "lifetime_seconds",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown source key(s): {', '.join(sorted(unknown))}")
    try:
        kind = SourceKind(raw["kind"])
    except (KeyError, ValueError):
        raise ValueError("source kind must be one of pull, push, exec") from None
    reg = SourceRegistration(
        source_id=raw.get("source_id", ""),
        kind=kind,
        lifetime_seconds=int(raw.get("lifetime_seconds", 0)),
        registered_at=now,
        lease_expires_at=now + int(raw.get("lifetime_seconds", 0)),
        address=raw.get("address"),
        cluster=raw.get("cluster"),
        command=raw.get("command"),
        poll_interval_seconds=raw.get("poll_interval_seconds"),
    )
    reg.validate()
    return reg


def first_poll_delay(source_id: str, interval_seconds: float) -> float:
    """Deterministic per-source jitter: a hash fraction of the interval."""
    digest = hashlib.md5(source_id.encode("utf-8")).hexdigest()
    return (int(digest, 16) % 1000) / 1000.0 * interval_seconds


@dataclass(frozen=True)
class IndexState:
    """Immutable snapshot of the whole index at one version."""

    clusters: Mapping[str, ClusterView] = field(default_factory=dict)
    version: int = 0
    updated_at: int = 0

    def host_count(self) -> int:
        return sum(len(v.hosts) for v in self.clusters.values())

    def find_host(self, host_id: str) -> Optional[HostRecord]:
        for name in sorted(self.clusters):
            record = self.clusters[name].hosts.get(host_id)
            if record is not None:
                return record
        return None


class Aggregator:
    """Owns the source registry and the index commit path."""

    def __init__(self, clock: Callable[[], float] = time.time):
        self.clock = clock
        self._lock = threading.Lock()
        self._state = IndexState()
        self._sources: dict[str, SourceRegistration] = {}
        self.dropped_datagrams = 0

    def now(self) -> int:
        return int(self.clock())

    # --- registry -------------------------------------------------------

    def register_source(self, desc: dict | SourceRegistration, now: Optional[int] = None) -> SourceRegistration:
        now = self.now() if now is None else now
        if isinstance(desc, SourceRegistration):
            reg = desc
            reg.validate()
        else:
            reg = registration_from_dict(desc, now)
        with self._lock:
            if reg.source_id in self._sources:
                raise DuplicateSource(f"source {reg.source_id!r} already registered")
            self._sources[reg.source_id] = reg
        log.info("registered %s source %s (lease until %d)", reg.kind.value, reg.source_id, reg.lease_expires_at)
        return reg

    def renew_lease(self, source_id: str, now: Optional[int] = None) -> SourceRegistration:
        now = self.now() if now is None else now
        with self._lock:
            reg = self._sources.get(source_id)
            if reg is None:
                raise UnknownSource(f"no source {source_id!r}")
            if reg.is_expired(now):
                raise LeaseExpired(f"source {source_id!r} lease expired at {reg.lease_expires_at}")
            reg.lease_expires_at = now + reg.lifetime_seconds
            return reg

    def expire_leases(self, now: Optional[int] = None) -> list[str]:
        now = self.now() if now is None else now
        removed = []
        with self._lock:
            for source_id in list(self._sources):
                if self._sources[source_id].is_expired(now):
                    del self._sources[source_id]
                    removed.append(source_id)
        for source_id in removed:
            log.info("lease expired, deregistered source %s", source_id)
        return removed

    def get_source(self, source_id: str) -> Optional[SourceRegistration]:
        with self._lock:
            return self._sources.get(source_id)

    def sources_status(self, now: Optional[int] = None) -> list[dict]:
        now = self.now() if now is None else now
        with self._lock:
            return [self._sources[sid].status(now) for sid in sorted(self._sources)]

    # --- polling --------------------------------------------------------

    def poll_source(self, source_id: str, now: Optional[int] = None) -> ClusterView:
        now = self.now() if now is None else now
        reg = self.get_source(source_id)
        if reg is None:
            raise UnknownSource(f"no source {source_id!r}")
        if reg.kind == SourceKind.PUSH:
            raise ValueError("push sources are not polled")
        try:
            if reg.kind == SourceKind.PULL:
                try:
                    payload = fetch_snapshot(reg.address)
                except OSError as exc:
                    raise SourceUnreachable(f"{reg.address}: {exc}") from None
            else:
                payload = self._run_exec(reg.command)
            view = parse(payload)
        except (SourceUnreachable, ExecFailure, MalformedDocument):
            self._record_failure(reg)
            raise
        self._record_success(reg, now)
        return view

    @staticmethod
    def _run_exec(command: str) -> bytes:
        argv = shlex.split(command)
        try:
            proc = subprocess.run(
                argv, capture_output=True, timeout=EXEC_TIMEOUT_SECONDS, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExecFailure(f"{command!r}: {exc}") from None
        if proc.returncode != 0:
            raise ExecFailure(f"{command!r} exited {proc.returncode}")
        return proc.stdout

    def _record_failure(self, reg: SourceRegistration) -> None:
        with self._lock:
            reg.consecutive_failures += 1
            if reg.consecutive_failures >= DEGRADED_AFTER_FAILURES and not reg.degraded:
                reg.degraded = True
                log.warning(
                    "source %s degraded after %d consecutive failures",
                    reg.source_id,
                    reg.consecutive_failures,
                )

    def _record_success(self, reg: SourceRegistration, now: int) -> None:
        with self._lock:
            reg.consecutive_failures = 0
            reg.degraded = False
            reg.last_success_at = now

    # --- index commits ----------------------------------------------------

    @property
    def state(self) -> IndexState:
        return self._state

    def snapshot(self) -> IndexState:
        return self._state

    def ingest(self, view: ClusterView, now: Optional[int] = None) -> int:
        """Merge every host of the view into its cluster; one version bump."""
        now = self.now() if now is None else now
        with self._lock:
            clusters = dict(self._state.clusters)
            current = clusters.get(view.name)
            hosts = dict(current.hosts) if current is not None else {}
            for host_id, record in view.hosts.items():
                stamped = HostRecord(
                    host_id=record.host_id,
                    cluster=record.cluster,
                    agent_version=record.agent_version,
                    heartbeat_at=now,
                    samples=record.samples,
                )
                held = hosts.get(host_id)
                hosts[host_id] = stamped if held is None else merge(held, stamped)
            clusters[view.name] = ClusterView(name=view.name, hosts=hosts, generated_at=now)
            self._state = IndexState(
                clusters=clusters, version=self._state.version + 1, updated_at=now
            )
            return self._state.version

    def restore_document(self, data: bytes) -> int:
        """Load a stored multi-cluster document verbatim (heartbeats and
        generation times preserved); used by replay and disaster recovery."""
        views, generated = parse_index(data)
        with self._lock:
            clusters = dict(self._state.clusters)
            for view in views:
                held = clusters.get(view.name)
                if held is None:
                    clusters[view.name] = view
                else:
                    hosts = dict(held.hosts)
                    for host_id, record in view.hosts.items():
                        other = hosts.get(host_id)
                        hosts[host_id] = record if other is None else merge(other, record)
                    clusters[view.name] = ClusterView(
                        name=view.name, hosts=hosts, generated_at=view.generated_at
                    )
            self._state = IndexState(
                clusters=clusters, version=self._state.version + 1, updated_at=generated
            )
            return self._state.version

    def sweep_stale(self, now: Optional[int] = None) -> list[str]:
        """Remove hosts whose every sample is stale; prune emptied clusters."""
        now = self.now() if now is None else now
        removed: list[str] = []
        with self._lock:
            clusters = dict(self._state.clusters)
            changed = False
            for name in list(clusters):
                view = clusters[name]
                keep: dict[str, HostRecord] = {}
                for host_id, record in view.hosts.items():
                    if any(s.is_fresh(now) for s in record.samples.values()):
                        keep[host_id] = record
                    else:
                        removed.append(host_id)
                if len(keep) != len(view.hosts):
                    changed = True
                    if keep:
                        clusters[name] = ClusterView(
                            name=name, hosts=keep, generated_at=view.generated_at
                        )
                    else:
                        del clusters[name]
            if changed:
                self._state = IndexState(
                    clusters=clusters, version=self._state.version + 1, updated_at=now
                )
        if removed:
            log.info("swept %d stale host(s): %s", len(removed), ", ".join(sorted(removed)))
        return removed

    # --- push path --------------------------------------------------------

    def handle_datagram(self, payload: bytes, now: Optional[int] = None) -> bool:
        """Ingest a push datagram if its cluster matches a live push source."""
        now = self.now() if now is None else now
        try:
            view = parse(payload)
        except MalformedDocument as exc:
            self.dropped_datagrams += 1
            log.warning("dropped malformed datagram: %s", exc)
            return False
        matched = None
        with self._lock:
            for reg in self._sources.values():
                if (
                    reg.kind == SourceKind.PUSH
                    and reg.cluster == view.name
                    and not reg.is_expired(now)
                ):
                    matched = reg
                    break
        if matched is None:
            self.dropped_datagrams += 1
            log.warning("dropped datagram for unregistered cluster %r", view.name)
            return False
        self.ingest(view, now)
        self._record_success(matched, now)
        return True

    # --- documents ----------------------------------------------------------

    def index_xml(self, state: Optional[IndexState] = None) -> bytes:
        state = self._state if state is None else state
        return serialize_index(state.clusters.values(), state.updated_at)

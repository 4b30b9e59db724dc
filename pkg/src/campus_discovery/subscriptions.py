"""Change notification by match-set diffing.

A subscription remembers the set of hosts (and a per-host content
fingerprint) that matched its query the last time it was polled. Each poll
takes a fresh index snapshot, recomputes the match-set, and emits
host_added / host_removed / metrics_updated events for the difference,
stamped with the snapshot version. Delivery is at-least-once; versions in
one subscription's stream never go backwards. Hosts can also enter or
leave a match-set purely because a TTL lapsed between polls; those events
carry the unchanged snapshot version.

Idle subscriptions (no poll or stream activity) are garbage-collected
after a configurable lifetime, after which polling raises
UnknownSubscription.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from .model import ClusterView, HostRecord
from .query import Query, host_matches

DEFAULT_IDLE_LIFETIME = 300

HOST_ADDED = "host_added"
HOST_REMOVED = "host_removed"
METRICS_UPDATED = "metrics_updated"


class UnknownSubscription(LookupError):
    pass


@dataclass(frozen=True)
class ChangeEvent:
    kind: str
    host_id: str
    cluster: str
    version: int
    matched: bool

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "host_id": self.host_id,
            "cluster": self.cluster,
            "version": self.version,
            "matched": self.matched,
        }


def _fingerprint(record: HostRecord, now: int) -> tuple:
    """Content marker over the host's currently-visible (fresh) samples."""
    visible = []
    for name in sorted(record.samples):
        s = record.samples[name]
        if s.is_fresh(now):
            visible.append((name, s.value, s.collected_at, s.ttl_seconds, s.units, s.kind.value))
    return tuple(visible)


def _match_set(
    clusters: Mapping[str, ClusterView], query: Query, now: int
) -> dict[str, tuple[str, tuple]]:
    matched: dict[str, tuple[str, tuple]] = {}
    for cluster_name in sorted(clusters):
        for host_id, record in clusters[cluster_name].hosts.items():
            if host_matches(record, query.filter, now):
                matched[host_id] = (cluster_name, _fingerprint(record, now))
    return matched


class Subscription:
    def __init__(self, sub_id: str, query: Query, created_at: int):
        self.id = sub_id
        self.query = query
        self.created_at = created_at
        self.last_version_delivered = 0
        self.last_activity_at = created_at
        self._baseline: dict[str, tuple[str, tuple]] = {}


class SubscriptionManager:
    def __init__(
        self,
        clock: Callable[[], float] = time.time,
        idle_lifetime_seconds: int = DEFAULT_IDLE_LIFETIME,
    ):
        self.clock = clock
        self.idle_lifetime_seconds = idle_lifetime_seconds
        self._lock = threading.Lock()
        self._subs: dict[str, Subscription] = {}

    def now(self) -> int:
        return int(self.clock())

    def subscribe(
        self,
        query: Query,
        clusters: Mapping[str, ClusterView],
        version: int,
        now: Optional[int] = None,
    ) -> Subscription:
        """Create a subscription whose baseline is the current match-set;
        existing matches produce no events."""
        now = self.now() if now is None else now
        sub = Subscription(uuid.uuid4().hex, query, now)
        sub._baseline = _match_set(clusters, query, now)
        sub.last_version_delivered = version
        with self._lock:
            self._subs[sub.id] = sub
        return sub

    def _get_live(self, sub_id: str, now: int) -> Subscription:
        with self._lock:
            sub = self._subs.get(sub_id)
            if sub is not None and now - sub.last_activity_at > self.idle_lifetime_seconds:
                del self._subs[sub_id]
                sub = None
            if sub is None:
                raise UnknownSubscription(f"no subscription {sub_id!r}")
            return sub

    def poll_events(
        self,
        sub_id: str,
        clusters: Mapping[str, ClusterView],
        version: int,
        now: Optional[int] = None,
    ) -> list[ChangeEvent]:
        now = self.now() if now is None else now
        sub = self._get_live(sub_id, now)
        # one poller at a time per subscription
        with self._lock:
            sub.last_activity_at = now
        current = _match_set(clusters, sub.query, now)
        events: list[ChangeEvent] = []
        for host_id in sorted(set(sub._baseline) | set(current)):
            before = sub._baseline.get(host_id)
            after = current.get(host_id)
            if before is None and after is not None:
                events.append(ChangeEvent(HOST_ADDED, host_id, after[0], version, True))
            elif before is not None and after is None:
                events.append(ChangeEvent(HOST_REMOVED, host_id, before[0], version, False))
            elif before != after:
                events.append(ChangeEvent(METRICS_UPDATED, host_id, after[0], version, True))
        sub._baseline = current
        sub.last_version_delivered = max(sub.last_version_delivered, version)
        return events

    def get(self, sub_id: str, now: Optional[int] = None) -> Subscription:
        now = self.now() if now is None else now
        return self._get_live(sub_id, now)

    def drop(self, sub_id: str) -> None:
        with self._lock:
            self._subs.pop(sub_id, None)

    def gc(self, now: Optional[int] = None) -> list[str]:
        now = self.now() if now is None else now
        removed = []
        with self._lock:
            for sub_id in list(self._subs):
                if now - self._subs[sub_id].last_activity_at > self.idle_lifetime_seconds:
                    del self._subs[sub_id]
                    removed.append(sub_id)
        return removed

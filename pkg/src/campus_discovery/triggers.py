"""Rule-triggered actions with sustain and cooldown anti-flapping.

Rules are evaluated on whole index snapshots at a fixed cadence, never per
ingest. Each (rule, host) pair owns a tiny state machine: a condition-true
cycle advances a run counter, the rule fires when the counter reaches
sustain_samples, and a fire opens a cooldown window that suppresses
evaluation until it lapses. A false cycle, or the host dropping out of the
rule's scope or the snapshot, resets the counter. Stale metrics make the
condition false, same as queries.

Fired actions are executed (log line, subprocess, or webhook POST), their
outcomes recorded, and every fire appended to the trigger log as one JSON
line. Action failures never abort a cycle.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional

import requests

from .model import ClusterView, lexical_form
from .query import Compare, Query, QuerySyntaxError, host_matches, parse_query

log = logging.getLogger(__name__)

ACTION_TIMEOUT_SECONDS = 10

ARMED = "armed"
PENDING = "pending"
COOLDOWN = "cooldown"


class ValidationError(ValueError):
    def __init__(self, rule_id: str, reason: str):
        super().__init__(f"rule {rule_id!r}: {reason}")
        self.rule_id = rule_id
        self.reason = reason


class DuplicateRule(ValueError):
    pass


@dataclass(frozen=True)
class TriggerAction:
    kind: str  # log | exec | webhook
    message: str = ""  # log template: {rule} {host} {value}
    command: str = ""
    url: str = ""


@dataclass(frozen=True)
class TriggerRule:
    id: str
    condition_text: str
    action: TriggerAction
    scope_text: str = ""  # empty scope watches every host
    sustain_samples: int = 1
    cooldown_seconds: int = 0
    enabled: bool = True
    scope: Query = field(init=False, repr=False, compare=False)
    condition: Compare = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("?", "id must be non-empty")
        if self.sustain_samples < 1:
            raise ValidationError(self.id, "sustain_samples must be >= 1")
        if self.cooldown_seconds < 0:
            raise ValidationError(self.id, "cooldown_seconds must be >= 0")
        try:
            object.__setattr__(self, "scope", parse_query(self.scope_text))
        except QuerySyntaxError as exc:
            raise ValidationError(self.id, f"bad scope: {exc}") from None
        try:
            condition = parse_query(self.condition_text)
        except QuerySyntaxError as exc:
            raise ValidationError(self.id, f"bad condition: {exc}") from None
        if not isinstance(condition.filter, Compare):
            raise ValidationError(self.id, "condition must be a single `path op literal` clause")
        object.__setattr__(self, "condition", condition.filter)
        if self.action.kind not in ("log", "exec", "webhook"):
            raise ValidationError(self.id, f"unknown action kind {self.action.kind!r}")
        if self.action.kind == "exec" and not self.action.command:
            raise ValidationError(self.id, "exec action needs a command")
        if self.action.kind == "webhook" and not self.action.url:
            raise ValidationError(self.id, "webhook action needs a url")

    def to_json(self) -> dict:
        action: dict = {"kind": self.action.kind}
        if self.action.kind == "log":
            action["message"] = self.action.message
        elif self.action.kind == "exec":
            action["command"] = self.action.command
        else:
            action["url"] = self.action.url
        return {
            "id": self.id,
            "scope": self.scope_text,
            "condition": self.condition_text,
            "sustain_samples": self.sustain_samples,
            "cooldown_seconds": self.cooldown_seconds,
            "action": action,
            "enabled": self.enabled,
        }


_RULE_KEYS = {"id", "scope", "condition", "sustain_samples", "cooldown_seconds", "action", "enabled"}
_ACTION_KEYS = {"kind", "message", "command", "url"}


def rule_from_dict(raw: dict) -> TriggerRule:
    if not isinstance(raw, dict):
        raise ValidationError("?", "rule must be a JSON object")
    rule_id = str(raw.get("id", "?"))
    unknown = set(raw) - _RULE_KEYS
    if unknown:
        raise ValidationError(rule_id, f"unknown key(s): {', '.join(sorted(unknown))}")
    action_raw = raw.get("action")
    if not isinstance(action_raw, dict):
        raise ValidationError(rule_id, "action must be an object with a kind")
    unknown = set(action_raw) - _ACTION_KEYS
    if unknown:
        raise ValidationError(rule_id, f"unknown action key(s): {', '.join(sorted(unknown))}")
    try:
        return TriggerRule(
            id=raw.get("id", ""),
            scope_text=raw.get("scope", ""),
            condition_text=raw.get("condition", ""),
            sustain_samples=int(raw.get("sustain_samples", 1)),
            cooldown_seconds=int(raw.get("cooldown_seconds", 0)),
            action=TriggerAction(
                kind=action_raw.get("kind", ""),
                message=action_raw.get("message", ""),
                command=action_raw.get("command", ""),
                url=action_raw.get("url", ""),
            ),
            enabled=bool(raw.get("enabled", True)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(rule_id, str(exc)) from None


def load_rules(data: bytes) -> list[TriggerRule]:
    """Parse a rules file: a JSON array of rule objects."""
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError("?", f"rules file is not valid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise ValidationError("?", "rules file must be a JSON array")
    rules = [rule_from_dict(entry) for entry in raw]
    seen: set[str] = set()
    for rule in rules:
        if rule.id in seen:
            raise DuplicateRule(f"rule {rule.id!r} appears twice")
        seen.add(rule.id)
    return rules


@dataclass
class RuleHostState:
    phase: str = ARMED
    count: int = 0
    cooldown_until: int = 0
    last_fired_at: Optional[int] = None


@dataclass
class FiredAction:
    rule_id: str
    host_id: str
    fired_at: int
    condition_path: str
    condition_value: object
    outcome: Optional[str] = None  # logged | exec_ok | exec_failed | webhook_ok | webhook_failed
    detail: Optional[int] = None  # exit code or HTTP status
    message: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "host_id": self.host_id,
            "fired_at": self.fired_at,
            "condition_path": self.condition_path,
            "condition_value": self.condition_value,
            "outcome": self.outcome,
            "detail": self.detail,
            "message": self.message,
        }


def evaluate_cycle(
    rules: list[TriggerRule],
    clusters: Mapping[str, ClusterView],
    states: dict[tuple[str, str], RuleHostState],
    now: int,
) -> list[FiredAction]:
    """Advance every (enabled rule, in-scope host) state machine one cycle.

    Mutates `states` in place and returns the fires (outcomes unset).
    Deterministic: rules iterate by id, hosts by (cluster, host_id).
    """
    fired: list[FiredAction] = []
    for rule in sorted(rules, key=lambda r: r.id):
        if not rule.enabled:
            continue
        seen: set[str] = set()
        for cluster_name in sorted(clusters):
            view = clusters[cluster_name]
            for host_id in sorted(view.hosts):
                record = view.hosts[host_id]
                if not host_matches(record, rule.scope.filter, now):
                    continue
                seen.add(host_id)
                key = (rule.id, host_id)
                st = states.setdefault(key, RuleHostState())
                if st.phase == COOLDOWN:
                    if now >= st.cooldown_until:
                        st.phase = ARMED
                        st.count = 0
                    else:
                        continue
                if host_matches(record, rule.condition, now):
                    st.count += 1
                    if st.count >= rule.sustain_samples:
                        sample = record.samples.get(rule.condition.path)
                        value = sample.value if sample is not None else None
                        if rule.condition.path == "host.id":
                            value = record.host_id
                        elif rule.condition.path == "host.cluster":
                            value = record.cluster
                        fired.append(
                            FiredAction(
                                rule_id=rule.id,
                                host_id=host_id,
                                fired_at=now,
                                condition_path=rule.condition.path,
                                condition_value=value,
                            )
                        )
                        st.phase = COOLDOWN
                        st.count = 0
                        st.cooldown_until = now + rule.cooldown_seconds
                        st.last_fired_at = now
                    else:
                        st.phase = PENDING
                else:
                    st.phase = ARMED
                    st.count = 0
        # hosts that left the scope or the snapshot reset to armed
        for key in list(states):
            if key[0] == rule.id and key[1] not in seen:
                del states[key]
    return fired


def substitute(template: str, fired: FiredAction) -> str:
    value = fired.condition_value
    text = lexical_form(value) if value is not None else "n/a"
    return (
        template.replace("{rule}", fired.rule_id)
        .replace("{host}", fired.host_id)
        .replace("{value}", text)
    )


def execute_action(action: TriggerAction, fired: FiredAction) -> FiredAction:
    """Run the action and record its outcome on the FiredAction."""
    if action.kind == "log":
        fired.message = substitute(action.message, fired)
        fired.outcome = "logged"
        log.info("trigger %s fired for %s: %s", fired.rule_id, fired.host_id, fired.message)
        return fired
    if action.kind == "exec":
        env = dict(os.environ)
        env["TRIGGER_RULE"] = fired.rule_id
        env["TRIGGER_HOST"] = fired.host_id
        env["TRIGGER_VALUE"] = (
            lexical_form(fired.condition_value) if fired.condition_value is not None else ""
        )
        try:
            proc = subprocess.run(
                shlex.split(action.command),
                env=env,
                capture_output=True,
                timeout=ACTION_TIMEOUT_SECONDS,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            fired.outcome = "exec_failed"
            fired.message = str(exc)
            return fired
        fired.detail = proc.returncode
        fired.outcome = "exec_ok" if proc.returncode == 0 else "exec_failed"
        return fired
    if action.kind == "webhook":
        try:
            resp = requests.post(action.url, json=fired.to_json(), timeout=ACTION_TIMEOUT_SECONDS)
        except requests.RequestException as exc:
            fired.outcome = "webhook_failed"
            fired.detail = 0
            fired.message = str(exc)
            return fired
        fired.detail = resp.status_code
        fired.outcome = "webhook_ok" if 200 <= resp.status_code < 300 else "webhook_failed"
        return fired
    fired.outcome = "exec_failed"
    fired.message = f"unknown action kind {action.kind!r}"
    return fired


class TriggerEngine:
    """Owns rules and per-host state; one evaluation loop at a time."""

    def __init__(
        self,
        rules: list[TriggerRule] = (),
        clock: Callable[[], float] = time.time,
        log_path: Optional[str | Path] = None,
        action_workers: int = 4,
    ):
        self.clock = clock
        self.log_path = Path(log_path) if log_path else None
        self._lock = threading.Lock()
        self._rules: dict[str, TriggerRule] = {}
        self._states: dict[tuple[str, str], RuleHostState] = {}
        self._workers = action_workers
        for rule in rules:
            self.add_rule(rule)

    def add_rule(self, rule: TriggerRule | dict) -> TriggerRule:
        if isinstance(rule, dict):
            rule = rule_from_dict(rule)
        with self._lock:
            if rule.id in self._rules:
                raise DuplicateRule(f"rule {rule.id!r} already exists")
            self._rules[rule.id] = rule
        return rule

    def remove_rule(self, rule_id: str) -> bool:
        with self._lock:
            existed = self._rules.pop(rule_id, None) is not None
            if existed:
                for key in list(self._states):
                    if key[0] == rule_id:
                        del self._states[key]
        return existed

    def set_enabled(self, rule_id: str, enabled: bool) -> TriggerRule:
        with self._lock:
            rule = self._rules.get(rule_id)
            if rule is None:
                raise KeyError(rule_id)
            updated = replace(rule, enabled=enabled)
            self._rules[rule_id] = updated
            return updated

    def get_rule(self, rule_id: str) -> Optional[TriggerRule]:
        with self._lock:
            return self._rules.get(rule_id)

    def list_rules(self) -> list[TriggerRule]:
        with self._lock:
            return [self._rules[rid] for rid in sorted(self._rules)]

    def run_cycle(
        self, clusters: Mapping[str, ClusterView], now: Optional[int] = None
    ) -> list[FiredAction]:
        """Evaluate, execute actions concurrently, commit outcomes, log fires."""
        now = int(self.clock()) if now is None else now
        with self._lock:
            rules = list(self._rules.values())
            fired = evaluate_cycle(rules, clusters, self._states, now)
        if fired:
            by_id = {r.id: r for r in rules}
            with ThreadPoolExecutor(max_workers=self._workers) as pool:
                list(pool.map(lambda f: execute_action(by_id[f.rule_id].action, f), fired))
            self._append_log(fired)
        return fired

    def _append_log(self, fired: list[FiredAction]) -> None:
        if self.log_path is None:
            return
        try:
            with open(self.log_path, "a") as fh:
                for f in fired:
                    fh.write(json.dumps(f.to_json(), sort_keys=True) + "\n")
        except OSError as exc:
            log.error("cannot append trigger log %s: %s", self.log_path, exc)

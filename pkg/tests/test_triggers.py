import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from campus_discovery.model import ClusterView, HostRecord, MetricKind, MetricSample
from campus_discovery.triggers import (
    DuplicateRule,
    FiredAction,
    TriggerAction,
    TriggerEngine,
    TriggerRule,
    ValidationError,
    evaluate_cycle,
    execute_action,
    load_rules,
    rule_from_dict,
    substitute,
)

from trace_sim import simulate


def log_rule(rule_id="r1", condition="load.one > 0.9", sustain=1, cooldown=0,
             scope="", enabled=True, message="{rule} fired on {host} with {value}"):
    return TriggerRule(
        id=rule_id,
        scope_text=scope,
        condition_text=condition,
        sustain_samples=sustain,
        cooldown_seconds=cooldown,
        action=TriggerAction(kind="log", message=message),
        enabled=enabled,
    )


def snapshot_of(**host_values):
    """host_values: host_id -> load.one value (None means host absent)."""
    hosts = {}
    for host_id, value in host_values.items():
        if value is None:
            continue
        s = MetricSample("load.one", float(value), MetricKind.DYNAMIC, 0, 10**9)
        hosts[host_id] = HostRecord(host_id, "lab", "0.1.0", 0, {"load.one": s})
    if not hosts:
        return {}
    return {"lab": ClusterView(name="lab", hosts=hosts, generated_at=0)}


def run_trace(rule, trace_values, start=1):
    """Feed one host's metric values through cycles; returns fire cycle numbers."""
    states = {}
    fires = []
    for i, value in enumerate(trace_values, start=start):
        snap = snapshot_of(hostx=value)
        for f in evaluate_cycle([rule], snap, states, now=i):
            fires.append(i - start + 1)
    return fires


class TestRuleValidation:
    def test_minimal_rule_parses(self):
        rule = rule_from_dict(
            {"id": "r", "condition": "load.one > 0.9", "action": {"kind": "log", "message": "m"}}
        )
        assert rule.sustain_samples == 1 and rule.enabled

    def test_bad_condition_names_rule(self):
        with pytest.raises(ValidationError) as err:
            rule_from_dict({"id": "broken", "condition": "cpu.count >", "action": {"kind": "log"}})
        assert err.value.rule_id == "broken"

    def test_condition_must_be_single_clause(self):
        with pytest.raises(ValidationError):
            log_rule(condition="load.one > 0.9 and cpu.count > 1")
        with pytest.raises(ValidationError):
            log_rule(condition="exists(load.one)")

    def test_bad_scope_rejected(self):
        with pytest.raises(ValidationError):
            log_rule(scope="os.name ==")

    def test_sustain_and_cooldown_bounds(self):
        with pytest.raises(ValidationError):
            log_rule(sustain=0)
        with pytest.raises(ValidationError):
            TriggerRule(
                id="x", condition_text="a.b > 1", cooldown_seconds=-1,
                action=TriggerAction(kind="log"),
            )

    def test_action_shape(self):
        with pytest.raises(ValidationError):
            rule_from_dict({"id": "x", "condition": "a.b > 1", "action": {"kind": "exec"}})
        with pytest.raises(ValidationError):
            rule_from_dict({"id": "x", "condition": "a.b > 1", "action": {"kind": "nope"}})
        with pytest.raises(ValidationError):
            rule_from_dict({"id": "x", "condition": "a.b > 1", "action": {"kind": "log"}, "junk": 1})

    def test_rules_file_roundtrip(self):
        rules = load_rules(json.dumps([
            {"id": "a", "condition": "load.one > 0.5", "action": {"kind": "log", "message": "hi"}},
        ]).encode())
        assert len(rules) == 1
        assert rules[0].to_json()["condition"] == "load.one > 0.5"

    def test_rules_file_duplicate_ids(self):
        doc = json.dumps([
            {"id": "a", "condition": "load.one > 0.5", "action": {"kind": "log"}},
            {"id": "a", "condition": "load.one > 0.7", "action": {"kind": "log"}},
        ]).encode()
        with pytest.raises(DuplicateRule):
            load_rules(doc)

    def test_rules_file_must_be_array(self):
        with pytest.raises(ValidationError):
            load_rules(b"{}")


class TestStateMachine:
    def test_worked_example_fires_at_cycle_three(self):
        rule = log_rule(sustain=2, cooldown=10**6)
        assert run_trace(rule, [0.5, 0.95, 0.97]) == [3]

    def test_never_true_never_fires(self):
        rule = log_rule(sustain=2)
        assert run_trace(rule, [0.1, 0.2, 0.3, 0.4]) == []

    def test_cooldown_suppresses_refire(self):
        rule = log_rule(sustain=2, cooldown=10**6)
        assert run_trace(rule, [0.95, 0.97, 0.99, 0.99]) == [2]

    def test_sustain_one_fires_first_true_cycle(self):
        rule = log_rule(sustain=1, cooldown=10**6)
        assert run_trace(rule, [0.5, 0.95, 0.99]) == [2]

    def test_zero_cooldown_allows_recount(self):
        rule = log_rule(sustain=2, cooldown=0)
        # cooldown(now) expires by the next cycle, counting restarts
        assert run_trace(rule, [0.95, 0.95, 0.95, 0.95, 0.95]) == [2, 4]

    def test_false_resets_pending(self):
        rule = log_rule(sustain=3)
        assert run_trace(rule, [0.95, 0.95, 0.5, 0.95, 0.95, 0.95]) == [6]

    def test_host_absent_resets(self):
        rule = log_rule(sustain=2)
        states = {}
        assert evaluate_cycle([rule], snapshot_of(h=0.95), states, now=1) == []
        assert evaluate_cycle([rule], snapshot_of(h=None), states, now=2) == []
        assert evaluate_cycle([rule], snapshot_of(h=0.95), states, now=3) == []
        fires = evaluate_cycle([rule], snapshot_of(h=0.95), states, now=4)
        assert [f.fired_at for f in fires] == [4]

    def test_stale_metric_is_false(self):
        rule = log_rule(sustain=1)
        s = MetricSample("load.one", 5.0, MetricKind.DYNAMIC, 0, 10)
        host = HostRecord("h", "lab", "0.1.0", 0, {"load.one": s})
        snap = {"lab": ClusterView(name="lab", hosts={"h": host}, generated_at=0)}
        assert evaluate_cycle([rule], snap, {}, now=100) == []
        assert len(evaluate_cycle([rule], snap, {}, now=5)) == 1

    def test_scope_limits_hosts(self):
        rule = log_rule(scope='host.id == "a"', sustain=1)
        fires = evaluate_cycle([rule], snapshot_of(a=0.95, b=0.99), {}, now=1)
        assert [f.host_id for f in fires] == ["a"]

    def test_per_host_state_is_independent(self):
        rule = log_rule(sustain=2, cooldown=10**6)
        states = {}
        evaluate_cycle([rule], snapshot_of(a=0.95, b=0.5), states, now=1)
        fires = evaluate_cycle([rule], snapshot_of(a=0.95, b=0.95), states, now=2)
        assert [f.host_id for f in fires] == ["a"]
        fires = evaluate_cycle([rule], snapshot_of(a=0.95, b=0.95), states, now=3)
        assert [f.host_id for f in fires] == ["b"]

    def test_disabled_rules_do_nothing(self):
        rule = log_rule(enabled=False)
        states = {}
        assert evaluate_cycle([rule], snapshot_of(h=0.99), states, now=1) == []
        assert states == {}

    def test_fired_action_captures_value(self):
        rule = log_rule(sustain=1)
        fires = evaluate_cycle([rule], snapshot_of(h=0.95), {}, now=1)
        assert fires[0].condition_path == "load.one"
        assert fires[0].condition_value == 0.95

    def test_determinism(self):
        rule = log_rule(sustain=2, cooldown=3)
        values = [0.95, 0.97, 0.2, 0.99, 0.99, 0.99, 0.1, 0.95, 0.95]
        assert run_trace(rule, values) == run_trace(rule, values)

    def test_randomized_traces_match_simulator(self):
        rng = random.Random(314)
        for _ in range(150):
            sustain = rng.randint(1, 4)
            cooldown = rng.randint(0, 6)
            rule = log_rule(sustain=sustain, cooldown=cooldown)
            values = [rng.choice([0.5, 0.95]) for _ in range(rng.randrange(1, 25))]
            trace = [v > 0.9 for v in values]
            got = run_trace(rule, values)
            want = simulate(trace, sustain, cooldown)
            assert got == want, (values, sustain, cooldown)


class TestActions:
    def fired(self):
        return FiredAction("r1", "hostA", 10, "load.one", 0.95)

    def test_log_substitution(self, caplog):
        action = TriggerAction(kind="log", message="high load on {host}")
        with caplog.at_level("INFO"):
            out = execute_action(action, self.fired())
        assert out.outcome == "logged"
        assert out.message == "high load on hostA"
        assert "high load on hostA" in caplog.text

    def test_substitute_all_placeholders(self):
        text = substitute("{rule}/{host}/{value}", self.fired())
        assert text == "r1/hostA/0.95"

    def test_exec_ok_gets_env(self, tmp_path):
        out_file = tmp_path / "env.txt"
        script = tmp_path / "dump.sh"
        script.write_text(f'#!/bin/sh\necho "$TRIGGER_RULE $TRIGGER_HOST $TRIGGER_VALUE" > {out_file}\n')
        script.chmod(0o755)
        out = execute_action(TriggerAction(kind="exec", command=f"sh {script}"), self.fired())
        assert out.outcome == "exec_ok"
        assert out.detail == 0
        assert out_file.read_text().strip() == "r1 hostA 0.95"

    def test_exec_failure_code(self):
        out = execute_action(TriggerAction(kind="exec", command="/bin/false"), self.fired())
        assert out.outcome == "exec_failed"
        assert out.detail == 1

    def test_exec_missing_binary(self):
        out = execute_action(TriggerAction(kind="exec", command="/no/such/bin"), self.fired())
        assert out.outcome == "exec_failed"

    def test_exec_timeout_is_a_failure(self, monkeypatch):
        import campus_discovery.triggers as triggers_mod

        monkeypatch.setattr(triggers_mod, "ACTION_TIMEOUT_SECONDS", 0.2)
        out = execute_action(TriggerAction(kind="exec", command="sleep 5"), self.fired())
        assert out.outcome == "exec_failed"
        assert out.detail is None

    def test_webhook_receives_fired_json(self):
        received = []

        class Hook(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                received.append(json.loads(self.rfile.read(length)))
                self.send_response(200)
                self.end_headers()

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Hook)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/hook"
            out = execute_action(TriggerAction(kind="webhook", url=url), self.fired())
            assert out.outcome == "webhook_ok"
            assert out.detail == 200
            assert received[0]["rule_id"] == "r1"
        finally:
            server.shutdown()
            server.server_close()

    def test_webhook_failure_status(self):
        out = execute_action(
            TriggerAction(kind="webhook", url="http://127.0.0.1:1/none"), self.fired()
        )
        assert out.outcome == "webhook_failed"
        assert out.detail == 0


class TestEngine:
    def test_crud_and_cycle(self, tmp_path):
        log_file = tmp_path / "fired.jsonl"
        engine = TriggerEngine(log_path=log_file)
        engine.add_rule(
            {"id": "high", "condition": "load.one > 0.9",
             "action": {"kind": "log", "message": "hot {host}"}}
        )
        with pytest.raises(DuplicateRule):
            engine.add_rule({"id": "high", "condition": "load.one > 0.9", "action": {"kind": "log"}})
        fired = engine.run_cycle(snapshot_of(a=0.95), now=1)
        assert len(fired) == 1 and fired[0].outcome == "logged"
        lines = [json.loads(l) for l in log_file.read_text().splitlines()]
        assert lines[0]["rule_id"] == "high" and lines[0]["message"] == "hot a"

    def test_disable_enable(self):
        engine = TriggerEngine()
        engine.add_rule({"id": "r", "condition": "load.one > 0.9", "action": {"kind": "log"}})
        engine.set_enabled("r", False)
        assert engine.run_cycle(snapshot_of(a=0.95), now=1) == []
        engine.set_enabled("r", True)
        assert len(engine.run_cycle(snapshot_of(a=0.95), now=2)) == 1

    def test_remove_rule_clears_state(self):
        engine = TriggerEngine()
        engine.add_rule({"id": "r", "condition": "load.one > 0.9",
                         "sustain_samples": 2, "action": {"kind": "log"}})
        engine.run_cycle(snapshot_of(a=0.95), now=1)
        assert engine.remove_rule("r") is True
        assert engine.remove_rule("r") is False
        assert engine.list_rules() == []

    def test_action_failure_does_not_abort_cycle(self):
        engine = TriggerEngine()
        engine.add_rule({"id": "a1", "condition": "load.one > 0.9",
                         "action": {"kind": "exec", "command": "/bin/false"}})
        engine.add_rule({"id": "a2", "condition": "load.one > 0.9",
                         "action": {"kind": "log", "message": "ok"}})
        fired = engine.run_cycle(snapshot_of(h=0.95), now=1)
        outcomes = {f.rule_id: f.outcome for f in fired}
        assert outcomes == {"a1": "exec_failed", "a2": "logged"}

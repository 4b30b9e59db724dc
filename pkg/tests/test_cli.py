import json
import time

import pytest
import requests

from campus_discovery.cli import main
from campus_discovery.model import parse_index
from campus_discovery.service import AggregatorConfig, AggregatorService, CaptureConfig, TriggerConfig

from test_httpapi import retimed_golden


@pytest.fixture(scope="module")
def live():
    """One live seeded service shared by the CLI tests."""
    svc = AggregatorService(
        AggregatorConfig(
            http_port=0,
            push_port=None,
            sweep_interval_seconds=3600,
            trigger=TriggerConfig(cycle_seconds=3600),
        )
    )
    svc.start()
    svc.aggregator.ingest(retimed_golden())
    yield svc
    svc.stop()


@pytest.fixture
def base(live):
    return f"http://127.0.0.1:{live.http_port}"


class TestQueryCommand:
    def test_table_lists_matching_host(self, base, capsys):
        code = main(["query", 'os.name == "Linux"', "--server", base])
        out = capsys.readouterr()
        assert code == 0
        assert "node-a.campus.edu" in out.out
        assert "node-b.campus.edu" not in out.out
        assert out.out.splitlines()[0].startswith("HOST")

    def test_json_output_byte_identical_to_http_body(self, base, capsys):
        code = main(["query", "cpu.count >= 2", "--server", base, "--output", "json"])
        captured = capsys.readouterr()
        assert code == 0
        raw = requests.post(f"{base}/v1/query", json={"q": "cpu.count >= 2", "project": []})
        assert captured.out.encode() == raw.content

    def test_projection(self, base, capsys):
        code = main(["query", "", "--server", base, "--project", "cpu.count", "--output", "json"])
        rows = json.loads(capsys.readouterr().out)
        assert code == 0
        assert all(list(r["metrics"]) == ["cpu.count"] for r in rows)

    def test_xml_output_parses(self, base, capsys):
        code = main(["query", "", "--server", base, "--output", "xml"])
        out = capsys.readouterr().out
        assert code == 0
        views, _ = parse_index(out.encode())
        assert sorted(views[0].hosts) == ["node-a.campus.edu", "node-b.campus.edu"]

    def test_syntax_error_exits_1_without_network(self, capsys):
        start = time.time()
        code = main(["query", "cpu.count >", "--server", "http://127.0.0.1:1"])
        out = capsys.readouterr()
        assert code == 1
        assert time.time() - start < 1.0  # no connection attempt
        assert "offset 11" in out.err
        assert out.out == ""

    def test_server_side_syntax_diagnostics_pass_through(self, base, capsys):
        # locally-valid but server-rejected (projection garbage bypasses local parse)
        code = main(["query", "cpu.count >= 2", "--server", base, "--project", "BAD PATH"])
        out = capsys.readouterr()
        assert code == 1
        assert out.out == ""

    def test_unreachable_server_exits_2(self, capsys):
        code = main(["query", "cpu.count >= 2", "--server", "http://127.0.0.1:1"])
        out = capsys.readouterr()
        assert code == 2
        assert out.out == ""
        assert "cannot reach server" in out.err

    def test_env_var_sets_server(self, base, monkeypatch, capsys):
        monkeypatch.setenv("CAMPUS_DISCOVERY_SERVER", base)
        assert main(["query", "", "--output", "json"]) == 0
        assert json.loads(capsys.readouterr().out)

    def test_usage_error_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["query"])  # missing EXPR
        assert exc.value.code == 1


class TestRenderCommand:
    def test_render_to_stdout(self, base, capsys):
        code = main(["render", "basic", "--server", base])
        out = capsys.readouterr().out
        assert code == 0
        assert "Basic Resource Information" in out
        assert "node-a.campus.edu" in out

    def test_render_to_file(self, base, tmp_path, capsys):
        target = tmp_path / "page.html"
        code = main(["render", "processor", "--server", base, "--out", str(target)])
        assert code == 0
        assert b"Processor Information" in target.read_bytes()
        assert capsys.readouterr().out == ""

    def test_render_with_query(self, base, capsys):
        code = main(["render", "basic", "--server", base, "--query", 'os.name == "Windows"'])
        out = capsys.readouterr().out
        assert code == 0
        assert "node-b.campus.edu" in out
        assert "node-a.campus.edu" not in out

    def test_unknown_view_exits_3(self, base, capsys):
        code = main(["render", "nope", "--server", base])
        out = capsys.readouterr()
        assert code == 3
        assert out.out == ""


class TestTriggerCommands:
    def test_add_list_rm_cycle(self, base, tmp_path, capsys):
        rules = [
            {"id": "cli-rule", "condition": "load.one > 0.9",
             "action": {"kind": "log", "message": "hot {host}"}},
        ]
        path = tmp_path / "rules.json"
        path.write_text(json.dumps(rules))
        assert main(["trigger", "add", "--file", str(path), "--server", base]) == 0
        assert "added cli-rule" in capsys.readouterr().out

        assert main(["trigger", "list", "--server", base]) == 0
        out = capsys.readouterr().out
        assert "cli-rule" in out and "load.one > 0.9" in out

        assert main(["trigger", "rm", "cli-rule", "--server", base]) == 0
        capsys.readouterr()
        assert main(["trigger", "rm", "cli-rule", "--server", base]) == 3
        assert capsys.readouterr().out == ""

    def test_add_invalid_rule_exits_1(self, base, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([{"id": "bad", "condition": "x >", "action": {"kind": "log"}}]))
        assert main(["trigger", "add", "--file", str(path), "--server", base]) == 1
        out = capsys.readouterr()
        assert out.out == ""


class TestReplayCommand:
    @pytest.fixture
    def captured(self, tmp_path):
        svc = AggregatorService(
            AggregatorConfig(
                http_port=0,
                push_port=None,
                sweep_interval_seconds=3600,
                trigger=TriggerConfig(cycle_seconds=3600),
                capture=CaptureConfig(directory=str(tmp_path / "frames"), interval_seconds=3600),
            )
        )
        svc.start()
        svc.aggregator.ingest(retimed_golden())
        frame = svc.capture_now()
        yield svc, frame, str(tmp_path / "frames")
        svc.stop()

    def test_replay_matches_live_query(self, captured, capsys):
        svc, frame, store_dir = captured
        base = f"http://127.0.0.1:{svc.http_port}"
        assert main(["query", 'os.name == "Linux"', "--server", base, "--output", "json"]) == 0
        live_rows = capsys.readouterr().out

        code = main([
            "replay", "--store", store_dir, "--at", str(frame.captured_at),
            "--query", 'os.name == "Linux"', "--output", "json",
        ])
        replay_rows = capsys.readouterr().out
        assert code == 0
        assert replay_rows == live_rows

    def test_replay_accepts_rfc3339(self, captured, capsys):
        _svc, frame, store_dir = captured
        from datetime import datetime, timezone

        stamp = datetime.fromtimestamp(frame.captured_at + 5, tz=timezone.utc).strftime(
            "%Y-%m-%dT%H:%M:%SZ"
        )
        code = main(["replay", "--store", store_dir, "--at", stamp, "--output", "json"])
        rows = json.loads(capsys.readouterr().out)
        assert code == 0
        assert len(rows) == 2

    def test_replay_before_first_frame_exits_3(self, captured, capsys):
        _svc, _frame, store_dir = captured
        assert main(["replay", "--store", store_dir, "--at", "5", "--query", ""]) == 3
        assert capsys.readouterr().out == ""

    def test_replay_bad_timestamp_exits_1(self, captured, capsys):
        _svc, _frame, store_dir = captured
        assert main(["replay", "--store", store_dir, "--at", "yesterday"]) == 1


class TestDaemonConfigs:
    def test_agent_bad_config_exits_1(self, tmp_path, capsys):
        path = tmp_path / "agent.json"
        path.write_text(json.dumps({"cluster": "lab", "mystery": 1}))
        assert main(["agent", "run", "--config", str(path)]) == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_aggregator_bad_config_exits_1(self, tmp_path, capsys):
        path = tmp_path / "agg.json"
        path.write_text(json.dumps({"nope": True}))
        assert main(["aggregator", "run", "--config", str(path)]) == 1
        assert "unknown aggregator config" in capsys.readouterr().err

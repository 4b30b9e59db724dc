import pytest

from campus_discovery.model import HostRecord, MetricKind, MetricSample
from campus_discovery.query import parse_query, evaluate_query
from campus_discovery.render import (
    BUILTIN_VIEWS,
    Template,
    TemplateError,
    compile_template,
    load_builtin_templates,
    render,
)

from conftest import DATA_DIR, golden_view


def one_host(host_id="h1", cluster="lab", **metrics):
    samples = {}
    for key, value in metrics.items():
        name = key.replace("__", ".")
        samples[name] = MetricSample(name, value, MetricKind.DYNAMIC, 100, 10**6)
    return HostRecord(host_id, cluster, "0.1.0", 100, samples)


def golden_hosts():
    view = golden_view()
    return [view.hosts[k] for k in sorted(view.hosts)]


class TestCompile:
    def test_single_substitution(self):
        t = compile_template("cpu: {{cpu.count}}")
        assert len(t.nodes) == 2

    def test_unclosed_each_reports_line(self):
        with pytest.raises(TemplateError) as err:
            compile_template("line one\nline two\n{{#each hosts}}\nbody")
        assert err.value.line == 3

    def test_unmatched_close(self):
        with pytest.raises(TemplateError):
            compile_template("{{/each}}")
        with pytest.raises(TemplateError):
            compile_template("{{#each hosts}}{{/if}}")

    def test_unknown_directive(self):
        with pytest.raises(TemplateError):
            compile_template("{{#loop hosts}}{{/loop}}")

    def test_bad_path(self):
        with pytest.raises(TemplateError):
            compile_template("{{Bad.Path}}")
        with pytest.raises(TemplateError):
            compile_template("{{meta.nope}}")

    def test_bad_if_expression(self):
        with pytest.raises(TemplateError):
            compile_template("{{#if cpu.count >}}x{{/if}}")
        with pytest.raises(TemplateError):
            compile_template("{{#if }}x{{/if}}")

    def test_every_builtin_view_compiles(self):
        templates = load_builtin_templates()
        assert set(templates) == set(BUILTIN_VIEWS)
        for t in templates.values():
            assert isinstance(t, Template)


class TestRender:
    def test_substitution_uses_wire_lexical_forms(self):
        t = compile_template("{{#each hosts}}{{load.one}}|{{cpu.count}}|{{gpu.present}}{{/each}}")
        host = one_host(load__one=0.5, cpu__count=8, gpu__present=True)
        assert render(t, [host], 0) == b"0.5|8|true"

    def test_missing_metric_renders_na(self):
        t = compile_template("{{#each hosts}}{{no.such}}{{/each}}")
        assert render(t, [one_host(load__one=1.0)], 0) == b"n/a"

    def test_substitution_outside_each_is_na(self):
        t = compile_template("{{load.one}}")
        assert render(t, [one_host(load__one=1.0)], 0) == b"n/a"

    def test_meta_generated_at(self):
        t = compile_template("at {{meta.generated_at}}")
        assert render(t, [], 1234) == b"at 1234"

    def test_hosts_iterate_in_cluster_then_id_order(self):
        t = compile_template("{{#each hosts}}{{host.cluster}}/{{host.id}} {{/each}}")
        hosts = [one_host("z", "bb"), one_host("a", "bb"), one_host("m", "aa")]
        assert render(t, hosts, 0) == b"aa/m bb/a bb/z "

    def test_if_blocks_filter_per_host(self):
        t = compile_template("{{#each hosts}}{{#if load.one > 0.9}}HOT:{{host.id}} {{/if}}{{/each}}")
        hosts = [one_host("cool", load__one=0.2), one_host("hot", load__one=0.95)]
        assert render(t, hosts, 0) == b"HOT:hot "

    def test_empty_host_list_renders_empty_body(self):
        t = compile_template("<table>{{#each hosts}}<tr>{{host.id}}</tr>{{/each}}</table>")
        assert render(t, [], 0) == b"<table></table>"

    def test_purity(self):
        templates = load_builtin_templates()
        hosts = golden_hosts()
        for t in templates.values():
            assert render(t, hosts, 1700000000) == render(t, hosts, 1700000000)

    def test_metric_values_html_escaped(self):
        t = compile_template("{{#each hosts}}{{evil.name}}{{/each}}")
        host = one_host(evil__name="<script>alert(1)</script>")
        out = render(t, [host], 0)
        assert b"<script>" not in out
        assert b"&lt;script&gt;" in out

    def test_builtin_views_contain_expected_values(self):
        templates = load_builtin_templates()
        hosts = golden_hosts()
        basic = render(templates["basic"], hosts, 1700000000)
        assert b"Linux" in basic and b"16384" in basic
        proc = render(templates["processor"], hosts, 1700000000)
        assert b"Intel Xeon E5-2650" in proc and b"2400.0" in proc
        mem = render(templates["memory"], hosts, 1700000000)
        assert b"9216" in mem and b"51200" in mem
        index = render(templates["index"], hosts, 1700000000)
        assert b"node-a.campus.edu" in index and b"/v1/view/basic" in index

    def test_memory_view_pressure_branches(self):
        templates = load_builtin_templates()
        hosts = golden_hosts()  # node-a has 9216 free (ok), node-b 512 (low)
        out = render(templates["memory"], hosts, 0).decode()
        a_row = out[out.index("node-a") : out.index("node-b")]
        b_row = out[out.index("node-b") :]
        assert ">ok<" in a_row and ">low<" in b_row


class TestGoldenViews:
    @pytest.mark.parametrize("view", BUILTIN_VIEWS)
    def test_byte_identical_to_committed_golden(self, view):
        templates = load_builtin_templates()
        expected = (DATA_DIR / "views" / f"{view}.golden.html").read_bytes()
        hosts = golden_hosts()
        for _ in range(5):
            assert render(templates[view], hosts, 1700000000) == expected

    def test_golden_inputs_via_query_path(self):
        # rendering the evaluate_query output for match-all equals the golden
        templates = load_builtin_templates()
        clusters = {"lab": golden_view()}
        hosts = evaluate_query(clusters, parse_query(""), now=1700000100)
        expected = (DATA_DIR / "views" / "basic.golden.html").read_bytes()
        assert render(templates["basic"], hosts, 1700000000) == expected

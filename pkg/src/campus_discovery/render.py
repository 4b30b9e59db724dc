"""Deterministic template rendering of host lists into portal pages.

A small directive language replaces the usual stylesheet pipeline so the
output is byte-reproducible and testable against golden files:

    {{path}}                substitute a metric's wire lexical form
    {{host.id}}             current host's id
    {{host.cluster}}        current host's cluster
    {{meta.generated_at}}   the render timestamp argument
    {{#each hosts}}...{{/each}}   iterate hosts in (cluster, id) order
    {{#if EXPR}}...{{/if}}        include block when the query expression
                                  matches the current host

Substituted values are HTML-escaped; a missing metric renders as the
literal `n/a`. Rendering is a pure function of (template, hosts, now).
"""

from __future__ import annotations

import html
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .model import METRIC_NAME_RE, HostRecord, lexical_form
from .query import HOST_FIELDS, Node, QuerySyntaxError, host_matches, parse_query

BUILTIN_VIEWS = ("index", "basic", "processor", "memory")

MISSING = "n/a"


class TemplateError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class _Text:
    text: str


@dataclass(frozen=True)
class _Sub:
    path: str  # metric path, host.id, host.cluster or meta.generated_at


@dataclass(frozen=True)
class _Each:
    body: tuple["_TemplateNode", ...]


@dataclass(frozen=True)
class _If:
    condition: Node
    body: tuple["_TemplateNode", ...]


_TemplateNode = Union[_Text, _Sub, _Each, _If]


@dataclass(frozen=True)
class Template:
    name: str
    nodes: tuple[_TemplateNode, ...]


def _split_directives(source: str):
    """Yield (kind, payload, line) tuples; kind is text|directive."""
    line = 1
    pos = 0
    while True:
        start = source.find("{{", pos)
        if start < 0:
            if pos < len(source):
                yield "text", source[pos:], line
            return
        if start > pos:
            chunk = source[pos:start]
            yield "text", chunk, line
            line += chunk.count("\n")
        end = source.find("}}", start)
        if end < 0:
            raise TemplateError("unterminated '{{' directive", line)
        inner = source[start + 2 : end]
        if "\n" in inner:
            raise TemplateError("directive may not span lines", line)
        yield "directive", inner.strip(), line
        pos = end + 2


def compile_template(source: str, name: str = "inline") -> Template:
    """Parse directives; anything unknown or unbalanced is a TemplateError."""
    stack: list[tuple[str, int, list]] = [("root", 0, [])]
    for kind, payload, line in _split_directives(source):
        nodes = stack[-1][2]
        if kind == "text":
            nodes.append(_Text(payload))
            continue
        if payload == "#each hosts":
            stack.append(("each", line, []))
        elif payload.startswith("#if "):
            expr_text = payload[4:]
            try:
                query = parse_query(expr_text)
            except QuerySyntaxError as exc:
                raise TemplateError(f"bad #if expression: {exc}", line) from None
            if query.filter is None:
                raise TemplateError("#if needs a condition", line)
            stack.append(("if", line, [query.filter]))
        elif payload == "/each":
            tag, _, body = stack.pop()
            if tag != "each":
                raise TemplateError("unexpected {{/each}}", line)
            stack[-1][2].append(_Each(tuple(body)))
        elif payload == "/if":
            tag, _, body = stack.pop()
            if tag != "if":
                raise TemplateError("unexpected {{/if}}", line)
            stack[-1][2].append(_If(body[0], tuple(body[1:])))
        elif payload.startswith("#") or payload.startswith("/"):
            raise TemplateError(f"unknown directive {{{{{payload}}}}}", line)
        elif payload == "meta.generated_at" or payload in HOST_FIELDS:
            nodes.append(_Sub(payload))
        elif payload.startswith(("meta.", "host.")):
            # reserved namespaces: only the fields above exist
            raise TemplateError(f"unknown directive {payload!r}", line)
        elif METRIC_NAME_RE.match(payload):
            nodes.append(_Sub(payload))
        else:
            raise TemplateError(f"bad substitution path {payload!r}", line)
    if len(stack) > 1:
        tag, line, _ = stack[-1]
        raise TemplateError(f"unclosed {{{{#{tag}}}}} block", line)
    return Template(name=name, nodes=tuple(stack[0][2]))


def _substitute(path: str, host: Optional[HostRecord], now: int) -> str:
    if path == "meta.generated_at":
        return str(now)
    if host is None:
        return MISSING
    if path == "host.id":
        return html.escape(host.host_id, quote=True)
    if path == "host.cluster":
        return html.escape(host.cluster, quote=True)
    sample = host.samples.get(path)
    if sample is None:
        return MISSING
    return html.escape(lexical_form(sample.value), quote=True)


def _render_nodes(nodes, hosts, host, now, out) -> None:
    for node in nodes:
        if isinstance(node, _Text):
            out.append(node.text)
        elif isinstance(node, _Sub):
            out.append(_substitute(node.path, host, now))
        elif isinstance(node, _Each):
            for record in sorted(hosts, key=lambda h: (h.cluster, h.host_id)):
                _render_nodes(node.body, hosts, record, now, out)
        elif isinstance(node, _If):
            if host is not None and host_matches(host, node.condition, now):
                _render_nodes(node.body, hosts, host, now, out)


def render(template: Template, hosts: list[HostRecord], now: int) -> bytes:
    """Pure: identical (template, hosts, now) yields identical bytes."""
    out: list[str] = []
    _render_nodes(template.nodes, hosts, None, now, out)
    return "".join(out).encode("utf-8")


def load_builtin_templates() -> dict[str, Template]:
    templates = {}
    package_dir = resources.files(__package__) / "templates"
    for view in BUILTIN_VIEWS:
        source = (package_dir / f"{view}.tmpl").read_text(encoding="utf-8")
        templates[view] = compile_template(source, name=view)
    return templates


def load_template_dir(directory: str | Path) -> dict[str, Template]:
    """Compile every <view>.tmpl in a directory (overrides built-ins)."""
    templates = {}
    for path in sorted(Path(directory).glob("*.tmpl")):
        templates[path.stem] = compile_template(path.read_text(encoding="utf-8"), name=path.stem)
    return templates

"""Filter query language over the host index.

Grammar (ASCII, whitespace-insensitive):

    expr    := clause (("and" | "or") clause)*     # left-associative,
                                                   # "and" binds tighter
    clause  := path op literal
             | "exists(" path ")"
             | "(" expr ")"
    op      := == | != | < | <= | > | >= | ~=      # ~= is a glob match
    literal := "double-quoted string" | integer | float | true | false
    path    := dotted lowercase metric path, or host.id / host.cluster

Evaluation is total. A comparison against a missing or stale metric is
false; exists(path) is true only for a present, fresh metric; comparisons
between incompatible value types (string vs number, ordering on booleans)
are false rather than errors. String ordering is byte-wise, which for
UTF-8 coincides with code-point order. host.id and host.cluster always
name the host fields, never metrics.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from typing import Mapping, Optional, Union

from .model import METRIC_NAME_RE, ClusterView, HostRecord, lexical_form

HOST_FIELDS = ("host.id", "host.cluster")

COMPARE_OPS = ("==", "!=", "<=", ">=", "<", ">", "~=")


class QuerySyntaxError(ValueError):
    """Parse failure; `offset` is the byte offset into the query text."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset
        self.reason = message


@dataclass(frozen=True)
class Compare:
    path: str
    op: str
    literal: Union[str, int, float, bool]


@dataclass(frozen=True)
class Exists:
    path: str


@dataclass(frozen=True)
class And:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Or:
    left: "Node"
    right: "Node"


Node = Union[Compare, Exists, And, Or]


@dataclass(frozen=True)
class Query:
    filter: Optional[Node]  # None means match-all
    projection: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for path in self.projection:
            if not METRIC_NAME_RE.match(path):
                raise ValueError(f"invalid projection path: {path!r}")


# --- lexer -------------------------------------------------------------------

_KEYWORDS = {"and", "or", "exists", "true", "false"}


@dataclass(frozen=True)
class _Token:
    kind: str  # op, lparen, rparen, string, number, word, end
    text: str
    value: object
    pos: int  # character offset


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _fail(text: str, pos: int, message: str) -> None:
    raise QuerySyntaxError(message, _byte_offset(text, pos))


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch == "(":
            tokens.append(_Token("lparen", "(", None, i))
            i += 1
            continue
        if ch == ")":
            tokens.append(_Token("rparen", ")", None, i))
            i += 1
            continue
        two = text[i : i + 2]
        if two in ("==", "!=", "<=", ">=", "~="):
            tokens.append(_Token("op", two, None, i))
            i += 2
            continue
        if ch in "<>":
            tokens.append(_Token("op", ch, None, i))
            i += 1
            continue
        if ch == '"':
            start = i
            i += 1
            out = []
            while i < n and text[i] != '"':
                if text[i] == "\\":
                    if i + 1 >= n:
                        _fail(text, n, "unterminated string literal")
                    esc = text[i + 1]
                    if esc not in ('"', "\\"):
                        _fail(text, i, f"bad escape \\{esc}")
                    out.append(esc)
                    i += 2
                else:
                    out.append(text[i])
                    i += 1
            if i >= n:
                _fail(text, n, "unterminated string literal")
            i += 1
            tokens.append(_Token("string", text[start:i], "".join(out), start))
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and text[i + 1].isdigit()):
            start = i
            i += 1
            while i < n and (text[i].isdigit() or text[i] in "._eE+-"):
                # stop '-'/'+' unless it follows an exponent marker
                if text[i] in "+-" and text[i - 1] not in "eE":
                    break
                if text[i] == "_":
                    break
                i += 1
            raw = text[start:i]
            try:
                if any(c in raw for c in ".eE"):
                    value: object = float(raw)
                else:
                    value = int(raw)
            except ValueError:
                _fail(text, start, f"bad number {raw!r}")
            tokens.append(_Token("number", raw, value, start))
            continue
        if ch.islower() or ch.isdigit() or ch == "_":
            start = i
            while i < n and (text[i].islower() or text[i].isdigit() or text[i] in "._"):
                i += 1
            tokens.append(_Token("word", text[start:i], None, start))
            continue
        _fail(text, i, f"unexpected character {ch!r}")
    tokens.append(_Token("end", "", None, n))
    return tokens


# --- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok: _Token, message: str) -> None:
        _fail(self.text, tok.pos, message)

    def parse(self) -> Node:
        node = self.or_expr()
        tok = self.peek()
        if tok.kind != "end":
            self.fail(tok, f"unexpected {tok.text!r}")
        return node

    def or_expr(self) -> Node:
        node = self.and_expr()
        while self.peek().kind == "word" and self.peek().text == "or":
            self.take()
            node = Or(node, self.and_expr())
        return node

    def and_expr(self) -> Node:
        node = self.clause()
        while self.peek().kind == "word" and self.peek().text == "and":
            self.take()
            node = And(node, self.clause())
        return node

    def clause(self) -> Node:
        tok = self.peek()
        if tok.kind == "lparen":
            self.take()
            node = self.or_expr()
            closing = self.take()
            if closing.kind != "rparen":
                self.fail(closing, "expected ')'")
            return node
        if tok.kind == "word" and tok.text == "exists":
            self.take()
            lp = self.take()
            if lp.kind != "lparen":
                self.fail(lp, "expected '(' after exists")
            path = self.path_token()
            rp = self.take()
            if rp.kind != "rparen":
                self.fail(rp, "expected ')'")
            return Exists(path)
        path = self.path_token()
        op = self.take()
        if op.kind != "op":
            self.fail(op, f"expected comparison operator after {path!r}")
        return Compare(path, op.text, self.literal())

    def path_token(self) -> str:
        tok = self.take()
        if tok.kind != "word":
            self.fail(tok, "expected a metric path")
        if tok.text in _KEYWORDS:
            self.fail(tok, f"{tok.text!r} is a reserved word")
        if tok.text not in HOST_FIELDS and not METRIC_NAME_RE.match(tok.text):
            self.fail(tok, f"invalid path {tok.text!r}")
        return tok.text

    def literal(self) -> Union[str, int, float, bool]:
        tok = self.take()
        if tok.kind == "string":
            return tok.value  # type: ignore[return-value]
        if tok.kind == "number":
            return tok.value  # type: ignore[return-value]
        if tok.kind == "word" and tok.text == "true":
            return True
        if tok.kind == "word" and tok.text == "false":
            return False
        self.fail(tok, "expected a literal (string, number, true or false)")
        raise AssertionError("unreachable")


def parse_query(text: str, projection: tuple[str, ...] = ()) -> Query:
    """Parse filter text; empty or blank text means match-all."""
    if not text.strip():
        return Query(filter=None, projection=tuple(projection))
    return Query(filter=_Parser(text).parse(), projection=tuple(projection))


# --- printer (inverse of the parser, used by round-trip tests) ---------------


def _print_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def print_query(query: Query) -> str:
    if query.filter is None:
        return ""
    return _print_node(query.filter)


def _print_node(node: Node) -> str:
    if isinstance(node, Compare):
        return f"{node.path} {node.op} {_print_literal(node.literal)}"
    if isinstance(node, Exists):
        return f"exists({node.path})"
    if isinstance(node, And):
        left = _print_node(node.left)
        right = _print_node(node.right)
        if isinstance(node.left, Or):
            left = f"({left})"
        if isinstance(node.right, (And, Or)):
            right = f"({right})"
        return f"{left} and {right}"
    if isinstance(node, Or):
        left = _print_node(node.left)
        right = _print_node(node.right)
        if isinstance(node.right, Or):
            right = f"({right})"
        return f"{left} or {right}"
    raise TypeError(f"not a query node: {node!r}")


# --- evaluation ---------------------------------------------------------------


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _compare(op: str, value, literal) -> bool:
    if op == "~=":
        if not isinstance(literal, str):
            return False
        return fnmatch.fnmatchcase(lexical_form(value), literal)
    if _is_number(value) and _is_number(literal):
        pass  # numeric comparison below
    elif isinstance(value, str) and isinstance(literal, str):
        pass  # byte-wise string comparison below
    elif isinstance(value, bool) and isinstance(literal, bool):
        if op not in ("==", "!="):
            return False
    else:
        return False  # incompatible types
    if op == "==":
        return value == literal
    if op == "!=":
        return value != literal
    if op == "<":
        return value < literal
    if op == "<=":
        return value <= literal
    if op == ">":
        return value > literal
    if op == ">=":
        return value >= literal
    raise ValueError(f"unknown operator {op!r}")


def _path_value(record: HostRecord, path: str, now: int):
    """Value a path yields for comparison, or None when missing/stale."""
    if path == "host.id":
        return record.host_id
    if path == "host.cluster":
        return record.cluster
    sample = record.samples.get(path)
    if sample is None or not sample.is_fresh(now):
        return None
    return sample.value


def host_matches(record: HostRecord, node: Optional[Node], now: int) -> bool:
    if node is None:
        return True
    if isinstance(node, And):
        return host_matches(record, node.left, now) and host_matches(record, node.right, now)
    if isinstance(node, Or):
        return host_matches(record, node.left, now) or host_matches(record, node.right, now)
    if isinstance(node, Exists):
        if node.path in HOST_FIELDS:
            return True
        return _path_value(record, node.path, now) is not None
    if isinstance(node, Compare):
        value = _path_value(record, node.path, now)
        if value is None:
            return False
        return _compare(node.op, value, node.literal)
    raise TypeError(f"not a query node: {node!r}")


def _strip_and_project(record: HostRecord, projection: tuple[str, ...], now: int) -> HostRecord:
    samples = {
        name: s
        for name, s in record.samples.items()
        if s.is_fresh(now) and (not projection or name in projection)
    }
    return HostRecord(
        host_id=record.host_id,
        cluster=record.cluster,
        agent_version=record.agent_version,
        heartbeat_at=record.heartbeat_at,
        samples=samples,
    )


def evaluate_query(
    clusters: Mapping[str, ClusterView], query: Query, now: int
) -> list[HostRecord]:
    """Matching hosts sorted by (cluster, host_id), stale metrics dropped."""
    results: list[HostRecord] = []
    for cluster_name in sorted(clusters):
        view = clusters[cluster_name]
        for host_id in sorted(view.hosts):
            record = view.hosts[host_id]
            if host_matches(record, query.filter, now):
                results.append(_strip_and_project(record, query.projection, now))
    return results

"""Resource data model and its canonical XML form.

Every component of the suite exchanges host/metric data as the value types
defined here. A ClusterView has exactly one canonical byte serialization
(hosts sorted by id, metrics sorted by name, fixed attribute order), which
is what makes golden-file tests, replay, and push/pull payload comparison
possible. Parsing is more liberal than serialization: attribute order and
whitespace are normalized on read.

All timestamps are integer seconds since the Unix epoch. `collected_at`
is stamped by the agent's clock, `heartbeat_at` by the aggregator's receipt
clock; freshness compares `collected_at` against the evaluator's clock and
accepts cross-clock skew.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union

Scalar = Union[str, int, float, bool]

METRIC_NAME_RE = re.compile(r"[a-z0-9_]+(\.[a-z0-9_]+)*\Z")

# XML 1.0 cannot carry control characters other than tab/LF/CR, nor lone
# surrogates; such strings could never round-trip and are rejected up front.
_XML_UNSAFE_RE = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff]")


class MalformedDocument(ValueError):
    """Raised when bytes cannot be parsed into a valid view."""


class HostMismatch(ValueError):
    """Raised when merging records for two different hosts."""


class UnknownMetric(LookupError):
    """Raised when a named metric is absent from a record."""


class MetricKind(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class ValueType(str, Enum):
    STRING = "string"
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"


def _check_xml_safe(what: str, text: str) -> None:
    if _XML_UNSAFE_RE.search(text):
        raise ValueError(f"{what} contains characters not representable in XML")


def value_type_of(value: Scalar) -> ValueType:
    # bool before int: bool is an int subclass
    if isinstance(value, bool):
        return ValueType.BOOL
    if isinstance(value, str):
        return ValueType.STRING
    if isinstance(value, int):
        return ValueType.INT
    if isinstance(value, float):
        return ValueType.FLOAT
    raise TypeError(f"unsupported metric value type: {type(value).__name__}")


def lexical_form(value: Scalar) -> str:
    """Wire spelling of a scalar: shortest round-trip floats, true/false bools."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_INT_LEXICAL_RE = re.compile(r"-?[0-9]+\Z")


def parse_lexical(type_tag: str, text: str) -> Scalar:
    """Decode an attribute value according to its declared type tag."""
    if type_tag == ValueType.STRING.value:
        return text
    if type_tag == ValueType.INT.value:
        if not _INT_LEXICAL_RE.match(text):
            raise ValueError(f"not an integer: {text!r}")
        return int(text)
    if type_tag == ValueType.FLOAT.value:
        value = float(text)  # ValueError propagates
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite float: {text!r}")
        return value
    if type_tag == ValueType.BOOL.value:
        if text == "true":
            return True
        if text == "false":
            return False
        raise ValueError(f"not a boolean: {text!r}")
    raise ValueError(f"unknown type tag: {type_tag!r}")


@dataclass(frozen=True)
class MetricSample:
    """One named, typed, timestamped attribute of a host."""

    name: str
    value: Scalar
    kind: MetricKind
    collected_at: int
    ttl_seconds: int
    units: str = ""

    def __post_init__(self) -> None:
        if not METRIC_NAME_RE.match(self.name):
            raise ValueError(f"invalid metric name: {self.name!r}")
        value_type_of(self.value)  # raises on unsupported types
        if isinstance(self.value, str):
            _check_xml_safe(f"metric {self.name} value", self.value)
        if isinstance(self.value, float) and not isinstance(self.value, bool):
            if self.value != self.value or self.value in (float("inf"), float("-inf")):
                raise ValueError(f"metric {self.name} value must be finite")
        if not isinstance(self.kind, MetricKind):
            object.__setattr__(self, "kind", MetricKind(self.kind))
        if not isinstance(self.collected_at, int) or self.collected_at < 0:
            raise ValueError(f"metric {self.name}: collected_at must be a non-negative int")
        if not isinstance(self.ttl_seconds, int) or self.ttl_seconds <= 0:
            raise ValueError(f"metric {self.name}: ttl_seconds must be a positive int")
        _check_xml_safe(f"metric {self.name} units", self.units)

    @property
    def value_type(self) -> ValueType:
        return value_type_of(self.value)

    def is_fresh(self, now: int) -> bool:
        """Inclusive boundary: a sample aged exactly ttl_seconds is still fresh."""
        return now - self.collected_at <= self.ttl_seconds


@dataclass(frozen=True)
class HostRecord:
    """A host's full attribute set plus heartbeat metadata."""

    host_id: str
    cluster: str
    agent_version: str
    heartbeat_at: int
    samples: Mapping[str, MetricSample] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.host_id:
            raise ValueError("host_id must be non-empty")
        if not self.cluster:
            raise ValueError("cluster must be non-empty")
        _check_xml_safe("host_id", self.host_id)
        _check_xml_safe("cluster", self.cluster)
        _check_xml_safe("agent_version", self.agent_version)
        if not isinstance(self.heartbeat_at, int) or self.heartbeat_at < 0:
            raise ValueError("heartbeat_at must be a non-negative int")
        samples = dict(self.samples)
        for name, sample in samples.items():
            if name != sample.name:
                raise ValueError(f"sample keyed {name!r} is named {sample.name!r}")
        object.__setattr__(self, "samples", samples)

    def get(self, metric_name: str) -> MetricSample:
        try:
            return self.samples[metric_name]
        except KeyError:
            raise UnknownMetric(f"{self.host_id}: no metric {metric_name!r}") from None


@dataclass(frozen=True)
class ClusterView:
    """Snapshot of every host in one cluster; the unit of serialization."""

    name: str
    hosts: Mapping[str, HostRecord] = field(default_factory=dict)
    generated_at: int = 0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("cluster name must be non-empty")
        _check_xml_safe("cluster name", self.name)
        if not isinstance(self.generated_at, int) or self.generated_at < 0:
            raise ValueError("generated_at must be a non-negative int")
        hosts = dict(self.hosts)
        for host_id, record in hosts.items():
            if host_id != record.host_id:
                raise ValueError(f"host keyed {host_id!r} has id {record.host_id!r}")
            if record.cluster != self.name:
                raise ValueError(
                    f"host {host_id!r} belongs to cluster {record.cluster!r}, "
                    f"not {self.name!r}"
                )
        object.__setattr__(self, "hosts", hosts)


def is_fresh(record: HostRecord, metric_name: str, now: int) -> bool:
    """True iff the named sample exists and now - collected_at <= ttl."""
    return record.get(metric_name).is_fresh(now)


def merge(current: HostRecord, incoming: HostRecord) -> HostRecord:
    """Combine two records for the same host, newest sample per metric winning.

    Ties on collected_at keep the incoming sample. heartbeat_at becomes the
    max of the two; non-metric fields follow the record with the newer
    heartbeat (incoming on ties).
    """
    if current.host_id != incoming.host_id:
        raise HostMismatch(
            f"cannot merge {current.host_id!r} with {incoming.host_id!r}"
        )
    samples = dict(current.samples)
    for name, sample in incoming.samples.items():
        held = samples.get(name)
        if held is None or sample.collected_at >= held.collected_at:
            samples[name] = sample
    newer = incoming if incoming.heartbeat_at >= current.heartbeat_at else current
    return HostRecord(
        host_id=current.host_id,
        cluster=newer.cluster,
        agent_version=newer.agent_version,
        heartbeat_at=max(current.heartbeat_at, incoming.heartbeat_at),
        samples=samples,
    )


# --- canonical serialization -------------------------------------------------

_ESCAPES = [
    ("&", "&amp;"),
    ("<", "&lt;"),
    (">", "&gt;"),
    ('"', "&quot;"),
    ("\t", "&#9;"),
    ("\n", "&#10;"),
    ("\r", "&#13;"),
]


def _escape(text: str) -> str:
    for raw, ref in _ESCAPES:
        text = text.replace(raw, ref)
    return text


def _metric_line(sample: MetricSample, indent: str) -> str:
    parts = [
        f'name="{_escape(sample.name)}"',
        f'type="{sample.value_type.value}"',
        f'kind="{sample.kind.value}"',
        f'val="{_escape(lexical_form(sample.value))}"',
    ]
    if sample.units:
        parts.append(f'units="{_escape(sample.units)}"')
    parts.append(f'tn="{sample.collected_at}"')
    parts.append(f'ttl="{sample.ttl_seconds}"')
    return f"{indent}<metric {' '.join(parts)}/>"


def _cluster_lines(view: ClusterView, indent: str) -> list[str]:
    open_tag = (
        f'{indent}<cluster name="{_escape(view.name)}" '
        f'generated="{view.generated_at}">'
    )
    if not view.hosts:
        return [open_tag + "</cluster>"]
    lines = [open_tag]
    for host_id in sorted(view.hosts):
        record = view.hosts[host_id]
        host_open = (
            f'{indent}  <host name="{_escape(record.host_id)}" '
            f'cluster="{_escape(record.cluster)}" '
            f'heartbeat="{record.heartbeat_at}" '
            f'agent="{_escape(record.agent_version)}">'
        )
        if not record.samples:
            lines.append(host_open + "</host>")
            continue
        lines.append(host_open)
        for name in sorted(record.samples):
            lines.append(_metric_line(record.samples[name], indent + "    "))
        lines.append(f"{indent}  </host>")
    lines.append(f"{indent}</cluster>")
    return lines


def canonical_serialize(view: ClusterView) -> bytes:
    """Emit the unique UTF-8 byte form of a cluster view."""
    return ("\n".join(_cluster_lines(view, "")) + "\n").encode("utf-8")


def serialize_index(views: Iterable[ClusterView], generated_at: int) -> bytes:
    """Emit the canonical multi-cluster document (clusters sorted by name)."""
    ordered = sorted(views, key=lambda v: v.name)
    open_tag = f'<grid generated="{generated_at}">'
    if not ordered:
        return (open_tag + "</grid>\n").encode("utf-8")
    lines = [open_tag]
    for view in ordered:
        lines.extend(_cluster_lines(view, "  "))
    lines.append("</grid>")
    return ("\n".join(lines) + "\n").encode("utf-8")


# --- parsing -----------------------------------------------------------------


def _attrs(elem: ET.Element, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    present = set(elem.keys())
    missing = set(required) - present
    if missing:
        raise MalformedDocument(
            f"<{elem.tag}> missing attribute(s): {', '.join(sorted(missing))}"
        )
    unknown = present - set(required) - set(optional)
    if unknown:
        raise MalformedDocument(
            f"<{elem.tag}> has unknown attribute(s): {', '.join(sorted(unknown))}"
        )
    return dict(elem.attrib)


def _int_attr(elem_tag: str, name: str, text: str) -> int:
    if not _INT_LEXICAL_RE.match(text):
        raise MalformedDocument(f"<{elem_tag}> {name}={text!r} is not an integer")
    return int(text)


def _no_stray_text(elem: ET.Element) -> None:
    texts = [elem.text] + [child.tail for child in elem]
    for text in texts:
        if text is not None and text.strip():
            raise MalformedDocument(f"unexpected text content inside <{elem.tag}>")


def _parse_metric(elem: ET.Element, host_id: str) -> MetricSample:
    attrs = _attrs(elem, ("name", "type", "kind", "val", "tn", "ttl"), ("units",))
    if len(elem) or (elem.text and elem.text.strip()):
        raise MalformedDocument("<metric> must be empty")
    if attrs["kind"] not in (MetricKind.STATIC.value, MetricKind.DYNAMIC.value):
        raise MalformedDocument(f"bad metric kind {attrs['kind']!r}")
    try:
        value = parse_lexical(attrs["type"], attrs["val"])
    except ValueError as exc:
        raise MalformedDocument(f"host {host_id!r} metric {attrs['name']!r}: {exc}") from None
    ttl = _int_attr("metric", "ttl", attrs["ttl"])
    tn = _int_attr("metric", "tn", attrs["tn"])
    try:
        return MetricSample(
            name=attrs["name"],
            value=value,
            kind=MetricKind(attrs["kind"]),
            collected_at=tn,
            ttl_seconds=ttl,
            units=attrs.get("units", ""),
        )
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from None


def _parse_host(elem: ET.Element, cluster_name: str) -> HostRecord:
    attrs = _attrs(elem, ("name", "cluster", "heartbeat", "agent"))
    if attrs["cluster"] != cluster_name:
        raise MalformedDocument(
            f"host {attrs['name']!r} declares cluster {attrs['cluster']!r} "
            f"inside cluster {cluster_name!r}"
        )
    _no_stray_text(elem)
    samples: dict[str, MetricSample] = {}
    for child in elem:
        if child.tag != "metric":
            raise MalformedDocument(f"unexpected element <{child.tag}> inside <host>")
        sample = _parse_metric(child, attrs["name"])
        if sample.name in samples:
            raise MalformedDocument(
                f"host {attrs['name']!r} has duplicate metric {sample.name!r}"
            )
        samples[sample.name] = sample
    try:
        return HostRecord(
            host_id=attrs["name"],
            cluster=attrs["cluster"],
            agent_version=attrs["agent"],
            heartbeat_at=_int_attr("host", "heartbeat", attrs["heartbeat"]),
            samples=samples,
        )
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from None


def _parse_cluster(elem: ET.Element) -> ClusterView:
    attrs = _attrs(elem, ("name", "generated"))
    _no_stray_text(elem)
    hosts: dict[str, HostRecord] = {}
    for child in elem:
        if child.tag != "host":
            raise MalformedDocument(f"unexpected element <{child.tag}> inside <cluster>")
        record = _parse_host(child, attrs["name"])
        if record.host_id in hosts:
            raise MalformedDocument(f"duplicate host {record.host_id!r}")
        hosts[record.host_id] = record
    try:
        return ClusterView(
            name=attrs["name"],
            hosts=hosts,
            generated_at=_int_attr("cluster", "generated", attrs["generated"]),
        )
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from None


def _fromstring(data: bytes) -> ET.Element:
    try:
        return ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedDocument(f"bad XML: {exc}") from None


def parse(data: bytes) -> ClusterView:
    """Inverse of canonical_serialize; tolerates attribute order and whitespace."""
    root = _fromstring(data)
    if root.tag != "cluster":
        raise MalformedDocument(f"expected <cluster> root, got <{root.tag}>")
    return _parse_cluster(root)


def parse_index(data: bytes) -> tuple[list[ClusterView], int]:
    """Parse a multi-cluster <grid> document into (views, generated_at)."""
    root = _fromstring(data)
    if root.tag != "grid":
        raise MalformedDocument(f"expected <grid> root, got <{root.tag}>")
    attrs = _attrs(root, ("generated",))
    _no_stray_text(root)
    views: list[ClusterView] = []
    seen: set[str] = set()
    for child in root:
        if child.tag != "cluster":
            raise MalformedDocument(f"unexpected element <{child.tag}> inside <grid>")
        view = _parse_cluster(child)
        if view.name in seen:
            raise MalformedDocument(f"duplicate cluster {view.name!r}")
        seen.add(view.name)
        views.append(view)
    return views, _int_attr("grid", "generated", attrs["generated"])

"""Common event format shared by every stage of the pipeline.

Collectors normalize raw source data into :class:`NormalizedEvent`; the
correlator condenses events into :class:`Alarm` records. Both carry a
canonical newline-delimited JSON serialization with a fixed key order so
that identical values always produce identical bytes (golden files, signed
storage and report diffing all rely on this).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

LAYERS = (
    "physical_sensor",
    "logical_access",
    "physical_access",
    "network",
    "application",
)

_EVENT_KEYS = (
    "event_id",
    "timestamp",
    "layer",
    "event_type",
    "source",
    "destination",
    "severity",
    "attributes",
)

_ALARM_KEYS = (
    "alarm_id",
    "rule_id",
    "timestamp",
    "contributing_events",
    "description",
    "severity",
)

_ENDPOINT_KEYS = ("ip", "port")


class MalformedEvent(ValueError):
    """Input line cannot be parsed as a canonical event or alarm.

    Callers must quarantine the offending line, never drop it silently.
    """


@dataclass(frozen=True)
class Endpoint:
    ip: str
    port: Optional[int] = None


@dataclass(frozen=True)
class NormalizedEvent:
    """One normalized observation from any monitored layer.

    ``timestamp`` is UTC milliseconds since the epoch; ``attributes`` is an
    ordered string map for source-specific payload (sensor values, usernames,
    raw excerpts). Instances are treated as immutable once constructed.
    """

    event_id: str
    timestamp: int
    layer: str
    event_type: str
    source: Optional[Endpoint] = None
    destination: Optional[Endpoint] = None
    severity: int = 0
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Alarm:
    """Correlator output: one detection with its contributing evidence."""

    alarm_id: str
    rule_id: str
    timestamp: int
    contributing_events: tuple[str, ...]
    description: str
    severity: int


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise MalformedEvent(msg)


def _is_int(value: object) -> bool:
    # bool is an int subclass and must not pass as a timestamp/severity
    return isinstance(value, int) and not isinstance(value, bool)


def _validate_endpoint(ep: Optional[Endpoint], name: str) -> None:
    if ep is None:
        return
    _check(isinstance(ep.ip, str) and ep.ip != "", f"{name}.ip must be a non-empty string")
    if ep.port is not None:
        _check(_is_int(ep.port) and 0 <= ep.port <= 65535, f"{name}.port out of range")


def validate_event(event: NormalizedEvent) -> None:
    """Raise :class:`MalformedEvent` unless ``event`` satisfies all invariants."""
    _check(isinstance(event.event_id, str) and event.event_id != "", "event_id must be a non-empty string")
    _check(_is_int(event.timestamp) and event.timestamp >= 0, "timestamp must be a non-negative integer")
    _check(event.layer in LAYERS, f"unknown layer {event.layer!r}")
    _check(isinstance(event.event_type, str) and event.event_type != "", "event_type must be a non-empty string")
    _validate_endpoint(event.source, "source")
    _validate_endpoint(event.destination, "destination")
    _check(_is_int(event.severity) and 0 <= event.severity <= 10, "severity must be an integer in [0, 10]")
    _check(isinstance(event.attributes, dict), "attributes must be a mapping")
    for k, v in event.attributes.items():
        _check(isinstance(k, str) and isinstance(v, str), "attributes must map strings to strings")


def validate_alarm(alarm: Alarm) -> None:
    _check(isinstance(alarm.alarm_id, str) and alarm.alarm_id != "", "alarm_id must be a non-empty string")
    _check(isinstance(alarm.rule_id, str) and alarm.rule_id != "", "rule_id must be a non-empty string")
    _check(_is_int(alarm.timestamp) and alarm.timestamp >= 0, "timestamp must be a non-negative integer")
    _check(len(alarm.contributing_events) > 0, "contributing_events must be non-empty")
    for eid in alarm.contributing_events:
        _check(isinstance(eid, str) and eid != "", "contributing event ids must be non-empty strings")
    _check(isinstance(alarm.description, str), "description must be a string")
    _check(_is_int(alarm.severity) and 0 <= alarm.severity <= 10, "severity must be an integer in [0, 10]")


def _endpoint_obj(ep: Optional[Endpoint]):
    if ep is None:
        return None
    return {"ip": ep.ip, "port": ep.port}


def serialize_event(event: NormalizedEvent) -> bytes:
    """Canonical one-line encoding: UTF-8 JSON, fixed key order, newline-terminated."""
    validate_event(event)
    obj = {
        "event_id": event.event_id,
        "timestamp": event.timestamp,
        "layer": event.layer,
        "event_type": event.event_type,
        "source": _endpoint_obj(event.source),
        "destination": _endpoint_obj(event.destination),
        "severity": event.severity,
        "attributes": dict(event.attributes),
    }
    return (json.dumps(obj, separators=(",", ":"), ensure_ascii=True) + "\n").encode("utf-8")


def serialize_alarm(alarm: Alarm) -> bytes:
    validate_alarm(alarm)
    obj = {
        "alarm_id": alarm.alarm_id,
        "rule_id": alarm.rule_id,
        "timestamp": alarm.timestamp,
        "contributing_events": list(alarm.contributing_events),
        "description": alarm.description,
        "severity": alarm.severity,
    }
    return (json.dumps(obj, separators=(",", ":"), ensure_ascii=True) + "\n").encode("utf-8")


def _parse_canonical(line: bytes | str, expected_keys: tuple[str, ...]) -> dict:
    if isinstance(line, bytes):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEvent(f"not valid UTF-8: {exc}") from exc
    else:
        text = line
    text = text.rstrip("\n")
    _check(text != "", "empty line")

    pairs_seen: list[list[tuple[str, object]]] = []

    def hook(pairs):
        pairs_seen.append(pairs)
        return dict(pairs)

    try:
        obj = json.loads(text, object_pairs_hook=hook)
    except json.JSONDecodeError as exc:
        raise MalformedEvent(f"bad JSON: {exc}") from exc
    _check(isinstance(obj, dict), "line is not a JSON object")
    # outermost object is parsed last by json; its key order must be canonical
    top_keys = tuple(k for k, _ in pairs_seen[-1])
    _check(top_keys == expected_keys, f"non-canonical keys {top_keys}")
    for pairs in pairs_seen[:-1]:
        keys = tuple(k for k, _ in pairs)
        if set(keys) == set(_ENDPOINT_KEYS):
            _check(keys == _ENDPOINT_KEYS, f"non-canonical endpoint keys {keys}")
        for k, _ in pairs:
            _check(isinstance(k, str), "object keys must be strings")
    return obj


def _parse_endpoint(value: object, name: str) -> Optional[Endpoint]:
    if value is None:
        return None
    _check(isinstance(value, dict), f"{name} must be null or an object")
    _check(set(value.keys()) == set(_ENDPOINT_KEYS), f"{name} must have exactly ip and port")
    ep = Endpoint(ip=value["ip"], port=value["port"])
    _validate_endpoint(ep, name)
    return ep


def deserialize_event(line: bytes | str) -> NormalizedEvent:
    """Parse one canonical event line; raise :class:`MalformedEvent` for anything else."""
    obj = _parse_canonical(line, _EVENT_KEYS)
    attrs = obj["attributes"]
    _check(isinstance(attrs, dict), "attributes must be an object")
    event = NormalizedEvent(
        event_id=obj["event_id"],
        timestamp=obj["timestamp"],
        layer=obj["layer"],
        event_type=obj["event_type"],
        source=_parse_endpoint(obj["source"], "source"),
        destination=_parse_endpoint(obj["destination"], "destination"),
        severity=obj["severity"],
        attributes=attrs,
    )
    validate_event(event)
    return event


def deserialize_alarm(line: bytes | str) -> Alarm:
    obj = _parse_canonical(line, _ALARM_KEYS)
    _check(isinstance(obj["contributing_events"], list), "contributing_events must be a list")
    alarm = Alarm(
        alarm_id=obj["alarm_id"],
        rule_id=obj["rule_id"],
        timestamp=obj["timestamp"],
        contributing_events=tuple(obj["contributing_events"]),
        description=obj["description"],
        severity=obj["severity"],
    )
    validate_alarm(alarm)
    return alarm


def event_field(event: NormalizedEvent, path: str):
    """Look up a dotted field path on an event.

    Supported paths: top-level scalar fields, ``source.ip`` / ``source.port``
    (same for destination) and ``attributes.<key>``. Returns None when the
    path is absent on this event.
    """
    if path in ("event_id", "timestamp", "layer", "event_type", "severity"):
        return getattr(event, path)
    head, _, rest = path.partition(".")
    if head in ("source", "destination") and rest in ("ip", "port"):
        ep = getattr(event, head)
        return getattr(ep, rest) if ep is not None else None
    if head == "attributes" and rest:
        return event.attributes.get(rest)
    raise KeyError(f"unknown event field path {path!r}")


def read_events(lines: Iterable[bytes | str]) -> tuple[list[NormalizedEvent], int]:
    """Parse an event stream, quarantining malformed lines.

    Returns (events, quarantined_count); lines in == events out + quarantined.
    """
    events: list[NormalizedEvent] = []
    quarantined = 0
    for lineno, line in enumerate(lines, start=1):
        try:
            events.append(deserialize_event(line))
        except MalformedEvent as exc:
            quarantined += 1
            logger.warning("quarantined line %d: %s", lineno, exc)
    return events, quarantined


def write_events(events: Iterable[NormalizedEvent]) -> bytes:
    return b"".join(serialize_event(e) for e in events)


def write_alarms(alarms: Iterable[Alarm]) -> bytes:
    return b"".join(serialize_alarm(a) for a in alarms)


def read_alarms(lines: Iterable[bytes | str]) -> tuple[list[Alarm], int]:
    alarms: list[Alarm] = []
    quarantined = 0
    for lineno, line in enumerate(lines, start=1):
        try:
            alarms.append(deserialize_alarm(line))
        except MalformedEvent as exc:
            quarantined += 1
            logger.warning("quarantined alarm line %d: %s", lineno, exc)
    return alarms, quarantined

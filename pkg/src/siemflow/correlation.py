"""Rule-based correlation: attack signatures over the normalized event stream.

A :class:`CorrelationRule` matches events by type (plus optional exact field
constraints), groups them by a key such as (source.ip, destination.ip), and
raises one :class:`Alarm` the moment `threshold` matching events fall inside
the sliding time window. The window for that group then resets, so one burst
yields one alarm instead of a flood.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from siemflow.events import Alarm, NormalizedEvent, event_field


@dataclass(frozen=True)
class CorrelationRule:
    """One attack signature.

    An event matches when its event_type equals ``event_type`` and every
    entry of ``constraints`` (dotted field path -> exact value) holds. The
    window spans event timestamps, not wall clock; two events are within the
    window when their timestamps differ by at most ``window_ms``.
    """

    rule_id: str
    event_type: str
    group_by: tuple[str, ...]
    threshold: int
    window_ms: int
    description: str
    severity: int
    constraints: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError(f"rule {self.rule_id}: threshold must be >= 1")
        if self.window_ms <= 0:
            raise ValueError(f"rule {self.rule_id}: window must be positive")

    def matches(self, event: NormalizedEvent) -> bool:
        if event.event_type != self.event_type:
            return False
        for path, expected in self.constraints.items():
            actual = event_field(event, path)
            if actual is None or str(actual) != str(expected):
                return False
        return True


@dataclass
class WindowState:
    """Per-group sliding window: timestamps and ids of recent matches."""

    entries: deque = field(default_factory=deque)  # (timestamp, event_id)

    def push(self, timestamp: int, event_id: str, window_ms: int) -> None:
        self.entries.append((timestamp, event_id))
        while self.entries and timestamp - self.entries[0][0] > window_ms:
            self.entries.popleft()


@dataclass
class CorrelationResult:
    alarms: list[Alarm]
    skipped_missing_group_field: int


def group_key(rule: CorrelationRule, event: NormalizedEvent) -> Optional[tuple[str, ...]]:
    key = []
    for path in rule.group_by:
        value = event_field(event, path)
        if value is None:
            return None
        key.append(str(value))
    return tuple(key)


def correlate(events: Iterable[NormalizedEvent], rules: list[CorrelationRule]) -> CorrelationResult:
    """Run every rule over a timestamp-ordered event stream.

    Alarms are ordered by detection timestamp, ties broken by rule_id then
    group key. Matching events missing a group_by field are ignored by that
    rule and tallied in the result.
    """
    windows: dict[tuple[str, tuple[str, ...]], WindowState] = {}
    raw_alarms: list[tuple[int, str, tuple[str, ...], list[str], CorrelationRule]] = []
    skipped = 0
    last_ts: Optional[int] = None

    for event in events:
        if last_ts is not None and event.timestamp < last_ts:
            raise ValueError("event stream is not timestamp-ordered")
        last_ts = event.timestamp
        for rule in rules:
            if not rule.matches(event):
                continue
            key = group_key(rule, event)
            if key is None:
                skipped += 1
                continue
            state = windows.setdefault((rule.rule_id, key), WindowState())
            state.push(event.timestamp, event.event_id, rule.window_ms)
            if len(state.entries) >= rule.threshold:
                contributing = [eid for _, eid in state.entries]
                raw_alarms.append((event.timestamp, rule.rule_id, key, contributing, rule))
                state.entries.clear()

    raw_alarms.sort(key=lambda item: (item[0], item[1], item[2]))
    alarms = []
    for n, (ts, rule_id, key, contributing, rule) in enumerate(raw_alarms, start=1):
        alarms.append(
            Alarm(
                alarm_id=f"alm-{n:04d}",
                rule_id=rule_id,
                timestamp=ts,
                contributing_events=tuple(contributing),
                description=f"{rule.description} [{', '.join(key)}]" if key else rule.description,
                severity=rule.severity,
            )
        )
    return CorrelationResult(alarms, skipped)


def load_rules(doc: dict) -> list[CorrelationRule]:
    """Build correlation rules from the shared JSON config document."""
    rules = []
    for entry in doc.get("rules", []):
        rules.append(
            CorrelationRule(
                rule_id=entry["id"],
                event_type=entry["event_type"],
                group_by=tuple(entry.get("group_by", [])),
                threshold=int(entry["threshold"]),
                window_ms=int(entry["window_ms"]),
                description=entry.get("description", entry["id"]),
                severity=int(entry.get("severity", 5)),
                constraints=dict(entry.get("constraints", {})),
            )
        )
    return rules

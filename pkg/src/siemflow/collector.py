"""Edge collection: grammar-driven parsers and state-machine security probes.

A :class:`Grammar` turns raw log lines into :class:`NormalizedEvent`s by
matching an ordered sequence of regex tokens and binding the extracted
values onto event fields. A :class:`SecurityProbe` is a small deterministic
state machine that watches the parsed event stream and emits synthetic
events when a suspicious pattern (including rate-of-change conditions) is
observed. :func:`run_collector` wires both together over any number of raw
streams and merges the results into one timestamp-ordered event stream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Optional

from siemflow.events import LAYERS, NormalizedEvent, Endpoint, event_field, validate_event


class InvalidGrammar(ValueError):
    pass


class InvalidProbe(ValueError):
    pass


class NondeterministicProbe(InvalidProbe):
    """Two transition guards of one probe can be enabled by the same event."""


class ParseReject(ValueError):
    """Raw line does not match the grammar; the caller quarantines it."""


_EVENT_TARGETS = (
    "timestamp",
    "layer",
    "event_type",
    "severity",
    "source.ip",
    "source.port",
    "destination.ip",
    "destination.port",
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)


def parse_timestamp_ms(text: str) -> int:
    """Accept ISO-8601 (with Z or offset) or plain integer milliseconds."""
    if re.fullmatch(r"\d+", text):
        return int(text)
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ParseReject(f"bad timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - _EPOCH) // _MS


def format_timestamp_ms(ts: int) -> str:
    dt = _EPOCH + ts * _MS
    if ts % 1000:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RuleElement:
    token: str
    marker: str  # "" required, "?" optional, "*" zero or more, "+" one or more


@dataclass
class Grammar:
    """Declarative line grammar.

    ``token_rules`` maps token names to regex patterns (first capture group
    is the token value, whole match otherwise; a pattern with two groups may
    be bound to the bare ``attributes`` target to mean key=value). Tokens
    named with a leading underscore are structural literals and never land
    in the event. ``line_rule`` entries are token names with an optional
    trailing ``?``, ``*`` or ``+`` marker. ``field_bindings`` maps tokens to
    event fields or ``attributes.<key>``; ``constants`` preloads fixed field
    values (for example the layer, or an event_type the line itself does not
    spell out).
    """

    name: str
    token_rules: list[tuple[str, str]]
    line_rule: list[str]
    field_bindings: dict[str, str] = field(default_factory=dict)
    constants: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        names = [n for n, _ in self.token_rules]
        if len(set(names)) != len(names):
            raise InvalidGrammar(f"grammar {self.name}: duplicate token names")
        self._compiled = {}
        for n, pattern in self.token_rules:
            try:
                self._compiled[n] = re.compile(pattern)
            except re.error as exc:
                raise InvalidGrammar(f"grammar {self.name}: token {n}: {exc}") from exc
        self._elements = []
        for entry in self.line_rule:
            marker = ""
            token = entry
            if entry and entry[-1] in "?*+":
                token, marker = entry[:-1], entry[-1]
            if token not in self._compiled:
                raise InvalidGrammar(f"grammar {self.name}: line rule references unknown token {token!r}")
            self._elements.append(RuleElement(token, marker))
        for token, target in self.field_bindings.items():
            if token not in self._compiled:
                raise InvalidGrammar(f"grammar {self.name}: binding for unknown token {token!r}")
            self._check_target(token, target)
        for target in self.constants:
            if not (target in _EVENT_TARGETS or target.startswith("attributes.")):
                raise InvalidGrammar(f"grammar {self.name}: bad constant target {target!r}")

    def _check_target(self, token: str, target: str) -> None:
        if target in _EVENT_TARGETS or target.startswith("attributes."):
            return
        if target == "attributes":
            if self._compiled[token].groups < 2:
                raise InvalidGrammar(
                    f"grammar {self.name}: token {token} bound to bare attributes needs two capture groups"
                )
            return
        raise InvalidGrammar(f"grammar {self.name}: bad binding target {target!r}")


@dataclass(frozen=True)
class SourceContext:
    """Per-line metadata supplied by the stream owner."""

    stream_id: str
    line_number: int = 0
    layer: Optional[str] = None
    default_timestamp: Optional[int] = None


def _tokenize(grammar: Grammar, raw: str) -> list[tuple[str, re.Match]]:
    pos = 0
    out: list[tuple[str, re.Match]] = []

    def skip_ws(p: int) -> int:
        while p < len(raw) and raw[p] in " \t":
            p += 1
        return p

    for elem in grammar._elements:
        regex = grammar._compiled[elem.token]
        count = 0
        while True:
            p = skip_ws(pos)
            m = regex.match(raw, p)
            if m is None or m.end() == p and m.start() == p and m.group(0) == "":
                break
            out.append((elem.token, m))
            pos = m.end()
            count += 1
            if elem.marker in ("", "?"):
                break
        if count == 0 and elem.marker in ("", "+"):
            raise ParseReject(f"line does not match token {elem.token} at column {skip_ws(pos)}")
    if skip_ws(pos) != len(raw):
        raise ParseReject(f"trailing input at column {skip_ws(pos)}")
    return out


def parse_line(grammar: Grammar, raw: bytes | str, context: SourceContext) -> NormalizedEvent:
    """Tokenize one raw line and assemble a normalized event.

    Raises :class:`ParseReject` when the line does not match the grammar or
    a bound value fails conversion (bad timestamp, severity out of range).
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseReject(f"not valid UTF-8: {exc}") from exc
    raw = raw.rstrip("\r\n")
    matches = _tokenize(grammar, raw)

    fields: dict[str, object] = {
        "timestamp": context.default_timestamp,
        "layer": context.layer,
        "event_type": None,
        "severity": 0,
        "source.ip": None,
        "source.port": None,
        "destination.ip": None,
        "destination.port": None,
    }
    attributes: dict[str, str] = {}

    def assign(target: str, value: str) -> None:
        if target.startswith("attributes."):
            attributes[target[len("attributes."):]] = value
        elif target == "timestamp":
            fields["timestamp"] = parse_timestamp_ms(value)
        elif target == "severity":
            try:
                fields["severity"] = int(value)
            except ValueError as exc:
                raise ParseReject(f"bad severity {value!r}") from exc
        elif target in ("source.port", "destination.port"):
            try:
                fields[target] = int(value)
            except ValueError as exc:
                raise ParseReject(f"bad port {value!r}") from exc
        else:
            fields[target] = value

    for target, value in grammar.constants.items():
        assign(target, value)

    for token, m in matches:
        value = m.group(1) if m.re.groups >= 1 else m.group(0)
        target = grammar.field_bindings.get(token)
        if target == "attributes":
            attributes[m.group(1)] = m.group(2)
        elif target is not None:
            assign(target, value)
        elif not token.startswith("_"):
            attributes[token.lower()] = value

    if fields["timestamp"] is None:
        raise ParseReject("no timestamp in line or context")
    if fields["layer"] is None or fields["layer"] not in LAYERS:
        raise ParseReject(f"no valid layer in line or context ({fields['layer']!r})")
    if not fields["event_type"]:
        raise ParseReject("no event_type in line or constants")

    def endpoint(prefix: str) -> Optional[Endpoint]:
        ip = fields[f"{prefix}.ip"]
        if ip is None:
            return None
        return Endpoint(str(ip), fields[f"{prefix}.port"])

    event = NormalizedEvent(
        event_id=f"{context.stream_id}-{context.line_number:06d}",
        timestamp=fields["timestamp"],
        layer=fields["layer"],
        event_type=str(fields["event_type"]),
        source=endpoint("source"),
        destination=endpoint("destination"),
        severity=fields["severity"],
        attributes=attributes,
    )
    try:
        validate_event(event)
    except ValueError as exc:
        raise ParseReject(str(exc)) from exc
    return event


# --- security probes ---------------------------------------------------------

_NUMERIC_OPS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}


def _as_number(value) -> Optional[float]:
    if isinstance(value, bool) or value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


@dataclass(frozen=True)
class FieldCondition:
    field: str
    op: str  # ==, !=, >, >=, <, <=
    value: object

    def holds(self, event: NormalizedEvent) -> bool:
        actual = event_field(event, self.field)
        if actual is None:
            return False
        if self.op in _NUMERIC_OPS:
            a, b = _as_number(actual), _as_number(self.value)
            if a is None or b is None:
                return False
            return _NUMERIC_OPS[self.op](a, b)
        a_num, b_num = _as_number(actual), _as_number(self.value)
        if a_num is not None and b_num is not None:
            equal = a_num == b_num
        else:
            equal = str(actual) == str(self.value)
        return equal if self.op == "==" else not equal


@dataclass(frozen=True)
class RateCondition:
    """Fires when (current - previous) / elapsed seconds exceeds the threshold."""

    field: str
    per_second_gt: float

    def holds(self, event: NormalizedEvent, state: "ProbeState") -> bool:
        current = _as_number(event_field(event, self.field))
        if current is None:
            return False
        previous = state.scratch.get(self.field)
        prev_ts = state.scratch.get(self.field + "@ts")
        if previous is None or prev_ts is None:
            return False
        dt = (event.timestamp - prev_ts) / 1000.0
        if dt <= 0:
            return False
        return (current - previous) / dt > self.per_second_gt


@dataclass(frozen=True)
class EventTemplate:
    """Blueprint for a probe emission; instantiated on the trigger event."""

    event_type: str
    layer: str
    severity: int = 5
    attributes: dict[str, str] = field(default_factory=dict)
    copy_source: bool = False
    copy_destination: bool = False


@dataclass(frozen=True)
class Transition:
    from_state: str
    to_state: str
    conditions: tuple[FieldCondition, ...] = ()
    rate: Optional[RateCondition] = None
    emit: Optional[EventTemplate] = None

    def enabled(self, event: NormalizedEvent, state: "ProbeState") -> bool:
        if not all(c.holds(event) for c in self.conditions):
            return False
        if self.rate is not None and not self.rate.holds(event, state):
            return False
        return True


@dataclass
class ProbeState:
    """Runtime companion to a probe: current state plus rate bookkeeping."""

    current_state: str
    scratch: dict[str, float] = field(default_factory=dict)
    last_timestamp: int = 0


@dataclass
class SecurityProbe:
    probe_id: str
    states: list[str]
    initial: str
    transitions: list[Transition]

    def __post_init__(self):
        validate_probe(self)
        self._rate_fields = sorted({t.rate.field for t in self.transitions if t.rate is not None})

    def fresh_state(self) -> ProbeState:
        return ProbeState(current_state=self.initial)


def _candidate_values(conditions: list[FieldCondition]) -> list[object]:
    """Probe values for one field: the mentioned constants, their numeric
    neighbours, an unrelated string, and absence."""
    values: list[object] = [None, "zz-none-of-the-above"]
    for cond in conditions:
        values.append(str(cond.value))
        num = _as_number(cond.value)
        if num is not None:
            values.extend([str(num - 1), str(num + 1)])
    out = []
    for v in values:
        if v not in out:
            out.append(v)
    return out


def _field_parts_cosatisfiable(a: Transition, b: Transition) -> bool:
    fields = sorted({c.field for c in a.conditions} | {c.field for c in b.conditions})
    if not fields:
        return True

    def satisfied(trans: Transition, assignment: dict[str, object]) -> bool:
        for cond in trans.conditions:
            value = assignment[cond.field]
            if value is None:
                return False
            fake = NormalizedEvent("x", 0, "network", "x", attributes={"probe": str(value)})
            check = FieldCondition("attributes.probe", cond.op, cond.value)
            if not check.holds(fake):
                return False
        return True

    per_field = {
        f: _candidate_values([c for c in list(a.conditions) + list(b.conditions) if c.field == f])
        for f in fields
    }

    def rec(idx: int, assignment: dict[str, object]) -> bool:
        if idx == len(fields):
            return satisfied(a, assignment) and satisfied(b, assignment)
        for v in per_field[fields[idx]]:
            assignment[fields[idx]] = v
            if rec(idx + 1, assignment):
                return True
        return False

    return rec(0, {})


def validate_probe(probe: SecurityProbe) -> None:
    """Structural checks plus exhaustive pairwise guard-overlap detection."""
    if not probe.states:
        raise InvalidProbe(f"probe {probe.probe_id}: no states")
    if len(set(probe.states)) != len(probe.states):
        raise InvalidProbe(f"probe {probe.probe_id}: duplicate states")
    if probe.initial not in probe.states:
        raise InvalidProbe(f"probe {probe.probe_id}: initial state {probe.initial!r} undeclared")
    for t in probe.transitions:
        if t.from_state not in probe.states or t.to_state not in probe.states:
            raise InvalidProbe(f"probe {probe.probe_id}: transition references undeclared state")
        if t.emit is not None:
            if t.emit.layer not in LAYERS:
                raise InvalidProbe(f"probe {probe.probe_id}: emit layer {t.emit.layer!r} invalid")
            if not 0 <= t.emit.severity <= 10:
                raise InvalidProbe(f"probe {probe.probe_id}: emit severity out of range")
    by_state: dict[str, list[Transition]] = {}
    for t in probe.transitions:
        by_state.setdefault(t.from_state, []).append(t)
    for state, outgoing in by_state.items():
        for i in range(len(outgoing)):
            for j in range(i + 1, len(outgoing)):
                if _field_parts_cosatisfiable(outgoing[i], outgoing[j]):
                    # a rate clause never makes two guards exclusive: any
                    # sufficiently fast change satisfies both thresholds
                    raise NondeterministicProbe(
                        f"probe {probe.probe_id}: transitions {i} and {j} from state "
                        f"{state!r} can both be enabled by one event"
                    )


_PLACEHOLDER = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_.]*)\}")


def _render(template: str, event: NormalizedEvent) -> str:
    def sub(m: re.Match) -> str:
        try:
            value = event_field(event, m.group(1))
        except KeyError:
            return m.group(0)
        return m.group(0) if value is None else str(value)

    return _PLACEHOLDER.sub(sub, template)


def probe_step(
    probe: SecurityProbe, state: ProbeState, event: NormalizedEvent
) -> tuple[ProbeState, list[NormalizedEvent]]:
    """Advance the probe by one event; returns the new state and any emissions."""
    enabled = [t for t in probe.transitions if t.from_state == state.current_state and t.enabled(event, state)]
    if len(enabled) > 1:
        raise NondeterministicProbe(
            f"probe {probe.probe_id}: {len(enabled)} transitions enabled in state {state.current_state!r}"
        )

    scratch = dict(state.scratch)
    emitted: list[NormalizedEvent] = []
    new_state = state.current_state
    if enabled:
        t = enabled[0]
        new_state = t.to_state
        if t.emit is not None:
            # the trigger id is unique per run, so prefixing keeps emissions unique
            out = NormalizedEvent(
                event_id=f"{probe.probe_id}--{event.event_id}",
                timestamp=event.timestamp,
                layer=t.emit.layer,
                event_type=t.emit.event_type,
                source=event.source if t.emit.copy_source else None,
                destination=event.destination if t.emit.copy_destination else None,
                severity=t.emit.severity,
                attributes={k: _render(v, event) for k, v in t.emit.attributes.items()},
            )
            validate_event(out)
            emitted.append(out)

    # rate bookkeeping runs after guard evaluation so guards see the
    # previous observation, not the one they are being tested against
    for rate_field in probe._rate_fields:
        value = _as_number(event_field(event, rate_field))
        if value is not None:
            scratch[rate_field] = value
            scratch[rate_field + "@ts"] = event.timestamp

    return ProbeState(new_state, scratch, event.timestamp), emitted


# --- collector runs ----------------------------------------------------------


@dataclass
class RawStream:
    """One raw input: a grammar name plus the lines to parse."""

    stream_id: str
    grammar: str
    lines: list[str]
    layer: Optional[str] = None


@dataclass
class CollectorResult:
    events: list[NormalizedEvent]
    parsed: int
    emitted: int
    quarantined: int
    quarantine_log: list[tuple[str, int, str]]  # (stream_id, line number, reason)


def run_collector(
    grammars: dict[str, Grammar],
    probes: list[SecurityProbe],
    raw_streams: list[RawStream],
) -> CollectorResult:
    """Parse every stream, run every probe per stream, merge by timestamp.

    Each stream gets a fresh state for every probe (streams share nothing);
    the merge is stable: ties broken by stream order, then arrival order.
    Quarantined line count plus parsed event count equals input line count.
    """
    per_stream: list[list[tuple[int, int, NormalizedEvent]]] = []
    parsed = emitted = quarantined = 0
    qlog: list[tuple[str, int, str]] = []

    for stream_index, stream in enumerate(raw_streams):
        if stream.grammar not in grammars:
            raise InvalidGrammar(f"stream {stream.stream_id}: unknown grammar {stream.grammar!r}")
        grammar = grammars[stream.grammar]
        states = {p.probe_id: p.fresh_state() for p in probes}
        items: list[tuple[int, int, NormalizedEvent]] = []
        seq = 0
        last_ts: Optional[int] = None
        for line_number, line in enumerate(stream.lines, start=1):
            context = SourceContext(stream.stream_id, line_number, layer=stream.layer)
            try:
                event = parse_line(grammar, line, context)
                if last_ts is not None and event.timestamp < last_ts:
                    raise ParseReject("timestamp went backwards within the stream")
            except ParseReject as exc:
                quarantined += 1
                qlog.append((stream.stream_id, line_number, str(exc)))
                continue
            last_ts = event.timestamp
            parsed += 1
            items.append((event.timestamp, seq, event))
            seq += 1
            for probe in probes:
                states[probe.probe_id], out = probe_step(probe, states[probe.probe_id], event)
                for e in out:
                    emitted += 1
                    items.append((e.timestamp, seq, e))
                    seq += 1
        per_stream.append([(ts, stream_index, s, e) for ts, s, e in items])

    merged = sorted(
        (item for stream_items in per_stream for item in stream_items),
        key=lambda t: (t[0], t[1], t[2]),
    )
    events = [e for _, _, _, e in merged]
    return CollectorResult(events, parsed, emitted, quarantined, qlog)


# --- declarative config loading ----------------------------------------------


def load_grammars(doc: dict) -> dict[str, Grammar]:
    """Build grammars from the shared JSON config document."""
    grammars = {}
    for entry in doc.get("grammars", []):
        g = Grammar(
            name=entry["name"],
            token_rules=[(t[0], t[1]) for t in entry["tokens"]],
            line_rule=list(entry["line"]),
            field_bindings=dict(entry.get("bindings", {})),
            constants=dict(entry.get("constants", {})),
        )
        grammars[g.name] = g
    return grammars


def load_probes(doc: dict) -> list[SecurityProbe]:
    probes = []
    for entry in doc.get("probes", []):
        transitions = []
        for t in entry.get("transitions", []):
            conditions = tuple(
                FieldCondition(c["field"], c.get("op", "=="), c["value"]) for c in t.get("when", [])
            )
            rate = None
            if "rate" in t:
                rate = RateCondition(t["rate"]["field"], float(t["rate"]["per_second_gt"]))
            emit = None
            if "emit" in t:
                e = t["emit"]
                emit = EventTemplate(
                    event_type=e["event_type"],
                    layer=e["layer"],
                    severity=int(e.get("severity", 5)),
                    attributes=dict(e.get("attributes", {})),
                    copy_source=bool(e.get("copy_source", False)),
                    copy_destination=bool(e.get("copy_destination", False)),
                )
            transitions.append(Transition(t["from"], t["to"], conditions, rate, emit))
        probes.append(
            SecurityProbe(
                probe_id=entry["id"],
                states=list(entry["states"]),
                initial=entry["initial"],
                transitions=transitions,
            )
        )
    return probes

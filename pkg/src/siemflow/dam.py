"""Hydroelectric dam simulation and the fixed firewall-misconfiguration scenario.

The physical side is a single turbine: generated power follows
P = rho * eta * g * delta_h * Q with constant head, and turbine speed is
linear in P. Crossing the configured speed or power limit destroys the
turbine (absorbing state) and raises an emergency event exactly once.

The scenario side builds a small plant network (control station,
visualization station, historian, two sensors behind one firewall),
policies, log grammars, probes and a scripted attack: a login brute
force against the control station, a firmware write from the
visualization station through an over-permissive firewall rule, then an
uncontrolled flow ramp that wrecks the turbine.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .collector import format_timestamp_ms
from .events import Endpoint, NormalizedEvent

BASE_TIMESTAMP_MS = 1704067200000  # 2024-01-01T00:00:00Z

CONTROL_IP = "192.168.0.20"
VIZ_IP = "192.168.0.10"
HISTORIAN_IP = "192.168.10.5"
SENSOR1_IP = "192.168.20.11"
SENSOR2_IP = "192.168.20.12"
MGMT_PORT = 4840


@dataclass(frozen=True)
class DamState:
    """Turbine state plus the scenario configuration knobs."""

    delta_h: float = 100.0  # meters, held constant
    Q: float = 50.0  # m^3/s
    eta: float = 0.9
    rho: float = 1000.0  # kg/m^3
    g: float = 10.0  # m/s^2
    rpm: Optional[float] = None  # derived from power when not given
    rpm_limit: float = 1000.0
    power_limit: float = 80e6  # watts
    target_q: Optional[float] = None
    ramp_rate: float = 40.0  # m^3/s per second, bound on Q changes
    rpm_per_watt: float = 1e-5
    timestamp_ms: int = BASE_TIMESTAMP_MS
    destroyed: bool = False
    seq: int = 0
    sensor_id: str = "sensor1"
    sensor_ip: str = SENSOR1_IP

    def __post_init__(self):
        if self.rpm is None:
            object.__setattr__(self, "rpm", self.rpm_per_watt * power(self))
        if self.target_q is None:
            object.__setattr__(self, "target_q", self.Q)
        for name in ("delta_h", "Q", "rho", "g", "rpm", "rpm_limit", "power_limit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")


def power(state: DamState) -> float:
    """Generated power in watts."""
    return state.rho * state.eta * state.g * state.delta_h * state.Q


@dataclass(frozen=True)
class ScriptCommand:
    at_ms: int
    kind: str  # set_Q | login_attempt | firmware_write
    value: Optional[float] = None
    host: Optional[str] = None
    user: Optional[str] = None
    target: Optional[str] = None
    success: Optional[bool] = None

    def as_dict(self) -> dict:
        out = {"at_ms": self.at_ms, "kind": self.kind}
        for name in ("value", "host", "user", "target", "success"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        return out


@dataclass(frozen=True)
class ScenarioScript:
    duration_s: int
    commands: tuple[ScriptCommand, ...]
    base_timestamp_ms: int = BASE_TIMESTAMP_MS

    def __post_init__(self):
        stamps = [c.at_ms for c in self.commands]
        if stamps != sorted(stamps):
            raise ValueError("script commands must be in timestamp order")

    def as_dict(self) -> dict:
        return {
            "base_timestamp_ms": self.base_timestamp_ms,
            "duration_s": self.duration_s,
            "commands": [c.as_dict() for c in self.commands],
        }


def load_script(doc: dict) -> ScenarioScript:
    return ScenarioScript(
        duration_s=int(doc["duration_s"]),
        commands=tuple(
            ScriptCommand(
                at_ms=int(c["at_ms"]),
                kind=c["kind"],
                value=c.get("value"),
                host=c.get("host"),
                user=c.get("user"),
                target=c.get("target"),
                success=c.get("success"),
            )
            for c in doc.get("commands", [])
        ),
        base_timestamp_ms=int(doc.get("base_timestamp_ms", BASE_TIMESTAMP_MS)),
    )


def _reading_event(state: DamState, p: float) -> NormalizedEvent:
    attributes = {
        "sensor": state.sensor_id,
        "Q": f"{state.Q:.3f}",
        "P": f"{p:.1f}",
    }
    if state.destroyed:
        attributes["status"] = "post_failure"
    return NormalizedEvent(
        event_id=f"dam-{state.seq:06d}",
        timestamp=state.timestamp_ms,
        layer="physical_sensor",
        event_type="flow_rate_reading",
        source=Endpoint(state.sensor_ip, None),
        destination=None,
        severity=5,
        attributes=attributes,
    )


def _emergency_event(state: DamState, p: float, reason: str) -> NormalizedEvent:
    return NormalizedEvent(
        event_id=f"dam-{state.seq:06d}",
        timestamp=state.timestamp_ms,
        layer="physical_sensor",
        event_type="emergency",
        source=Endpoint(state.sensor_ip, None),
        destination=None,
        severity=9,
        attributes={
            "sensor": state.sensor_id,
            "reason": reason,
            "P": f"{p:.1f}",
            "rpm": f"{state.rpm:.1f}",
        },
    )


def step(
    state: DamState, command: Optional[ScriptCommand], dt: float
) -> tuple[DamState, list[NormalizedEvent]]:
    """Advance the turbine by dt seconds, apply a physical command if any.

    Non-physical commands (logins, firmware writes) only show up in logs
    and pass through untouched. Once the turbine is destroyed the state
    is absorbing: flow and speed freeze and readings carry a post-failure
    marker.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    target = state.target_q
    if command is not None and command.kind == "set_Q" and not state.destroyed:
        target = float(command.value)
    ts = state.timestamp_ms + round(dt * 1000)
    if state.destroyed:
        nxt = dataclasses.replace(state, timestamp_ms=ts, seq=state.seq + 1)
        return nxt, [_reading_event(nxt, power(nxt))]
    max_delta = state.ramp_rate * dt
    q = state.Q + max(-max_delta, min(max_delta, target - state.Q))
    nxt = dataclasses.replace(state, Q=q, target_q=target, timestamp_ms=ts, rpm=None, seq=state.seq + 1)
    p = power(nxt)
    events = [_reading_event(nxt, p)]
    if nxt.rpm > nxt.rpm_limit or p > nxt.power_limit:
        reason = "rpm_limit" if nxt.rpm > nxt.rpm_limit else "power_limit"
        nxt = dataclasses.replace(nxt, destroyed=True, seq=nxt.seq + 1)
        events.append(_emergency_event(nxt, p, reason))
    return nxt, events


def simulate(
    script: ScenarioScript, state: Optional[DamState] = None
) -> tuple[DamState, list[NormalizedEvent]]:
    """Run the script second by second; returns final state and all events."""
    if state is None:
        state = DamState(timestamp_ms=script.base_timestamp_ms)
    events: list[NormalizedEvent] = []
    by_second: dict[int, ScriptCommand] = {}
    for cmd in script.commands:
        if cmd.kind == "set_Q":
            by_second[(cmd.at_ms - script.base_timestamp_ms) // 1000] = cmd
    for second in range(script.duration_s):
        state, emitted = step(state, by_second.get(second), 1.0)
        events.extend(emitted)
    return state, events


# --- the fixed misuse-case scenario ---------------------------------------------------


def _misuse_system_doc() -> dict:
    return {
        "hosts": [
            {"id": "control", "ips": [CONTROL_IP], "type": "workstation", "owner": "dam-ops"},
            {"id": "viz", "ips": [VIZ_IP], "type": "workstation", "owner": "dam-ops"},
            {"id": "historian", "ips": [HISTORIAN_IP], "type": "server", "owner": "dam-ops"},
            {"id": "sensor1", "ips": [SENSOR1_IP], "type": "sensor", "owner": "plant"},
            {"id": "sensor2", "ips": [SENSOR2_IP], "type": "sensor", "owner": "plant"},
        ],
        "devices": [
            {"id": "SW0", "capabilities": ["routing"]},
            {"id": "FW1", "capabilities": ["filtering", "routing"]},
            {"id": "SW2", "capabilities": ["routing"]},
        ],
        "services": [
            {"host": "control", "name": "ssh", "proto": "TCP", "ports": [22]},
            {"host": "historian", "name": "telemetry", "proto": "TCP", "ports": [443]},
            {"host": "sensor1", "name": "mgmt", "proto": "TCP", "ports": [MGMT_PORT]},
            {"host": "sensor2", "name": "mgmt", "proto": "TCP", "ports": [MGMT_PORT]},
        ],
        "topology": [
            ["control", "SW0"],
            ["viz", "SW0"],
            ["SW0", "FW1"],
            ["FW1", "SW2"],
            ["sensor1", "SW2"],
            ["sensor2", "SW2"],
            ["historian", "SW2"],
        ],
        "firewalls": {
            "FW1": [
                {"src_ip": CONTROL_IP, "src_port": "*", "dst_ip": SENSOR1_IP, "dst_port": str(MGMT_PORT), "proto": "TCP", "action": "permit"},
                {"src_ip": CONTROL_IP, "src_port": "*", "dst_ip": SENSOR2_IP, "dst_port": str(MGMT_PORT), "proto": "TCP", "action": "permit"},
                {"src_ip": VIZ_IP, "src_port": "*", "dst_ip": HISTORIAN_IP, "dst_port": "443", "proto": "TCP", "action": "permit"},
                # the misconfiguration: the visualization station can reach
                # sensor1's management (firmware) port, which no policy allows
                {"src_ip": VIZ_IP, "src_port": "*", "dst_ip": SENSOR1_IP, "dst_port": str(MGMT_PORT), "proto": "TCP", "action": "permit"},
            ]
        },
        "universe": {
            "users": [
                {"ID": "op1", "Role": "Operator", "Organization": "dam-ops", "hosts": ["control"]},
                {"ID": "viewer1", "Role": "Viewer", "Organization": "dam-ops", "hosts": ["viz"]},
            ],
            "environments": [],
            "client_ports": [40000],
        },
    }


def _misuse_policies_doc() -> dict:
    return {
        "policies": [
            {
                "id": "pol-control-sensors",
                "subject": {"ID": "control"},
                "action": "reach",
                "object": {"Type": "sensor"},
                "effect": "permit",
            },
            {
                "id": "pol-viz-historian",
                "subject": {"ID": "viz"},
                "action": "reach",
                "object": {"ID": "historian"},
                "effect": "permit",
            },
        ]
    }


def _misuse_grammars_doc() -> dict:
    return {
        "grammars": [
            {
                "name": "dam-sensor",
                "tokens": [
                    ["TIMESTAMP", r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?Z"],
                    ["SENSOR", r"[A-Za-z0-9_-]+"],
                    ["EVENT_TYPE", r"[a-z_]+"],
                    ["READING", r"([A-Za-z_]+)=([-0-9.A-Za-z_]+)"],
                ],
                "line": ["TIMESTAMP", "SENSOR", "EVENT_TYPE", "READING+"],
                "bindings": {
                    "TIMESTAMP": "timestamp",
                    "SENSOR": "attributes.sensor",
                    "EVENT_TYPE": "event_type",
                    "READING": "attributes",
                },
                "constants": {"layer": "physical_sensor", "severity": "5", "source.ip": SENSOR1_IP},
            },
            {
                "name": "auth",
                "tokens": [
                    ["TIMESTAMP", r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?Z"],
                    ["PROGRAM", r"[A-Za-z][\w.-]*"],
                    ["EVENT_TYPE", r"[a-z_]+"],
                    ["USER", r"user=(\S+)"],
                    ["SRC", r"src=(\d+\.\d+\.\d+\.\d+)"],
                    ["DST", r"dst=(\d+\.\d+\.\d+\.\d+)"],
                ],
                "line": ["TIMESTAMP", "PROGRAM", "EVENT_TYPE", "USER?", "SRC?", "DST?"],
                "bindings": {
                    "TIMESTAMP": "timestamp",
                    "EVENT_TYPE": "event_type",
                    "USER": "attributes.user",
                    "SRC": "source.ip",
                    "DST": "destination.ip",
                },
                "constants": {"layer": "logical_access", "severity": "4"},
            },
            {
                "name": "mgmt",
                "tokens": [
                    ["TIMESTAMP", r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?Z"],
                    ["HOST", r"[A-Za-z0-9_-]+"],
                    ["EVENT_TYPE", r"[a-z_]+"],
                    ["FROM", r"from=(\d+\.\d+\.\d+\.\d+)"],
                ],
                "line": ["TIMESTAMP", "HOST", "EVENT_TYPE", "FROM"],
                "bindings": {
                    "TIMESTAMP": "timestamp",
                    "HOST": "attributes.host",
                    "EVENT_TYPE": "event_type",
                    "FROM": "source.ip",
                },
                "constants": {"layer": "application", "severity": "6", "destination.ip": SENSOR1_IP},
            },
        ]
    }


def _misuse_probes_doc() -> dict:
    return {
        "probes": [
            {
                "id": "flow-anomaly",
                "states": ["steady", "suspicious"],
                "initial": "steady",
                "transitions": [
                    {
                        "from": "steady",
                        "to": "suspicious",
                        "when": [
                            {"field": "event_type", "op": "==", "value": "flow_rate_reading"}
                        ],
                        "rate": {"field": "attributes.Q", "per_second_gt": 20},
                        "emit": {
                            "event_type": "flow_rate_anomaly",
                            "layer": "physical_sensor",
                            "severity": 7,
                            "attributes": {"q": "{attributes.Q}", "sensor": "{attributes.sensor}"},
                        },
                    }
                ],
            }
        ]
    }


def _misuse_rules_doc() -> dict:
    return {
        "rules": [
            {
                "id": "rule-bruteforce",
                "event_type": "auth_failure",
                "group_by": ["source.ip", "destination.ip"],
                "threshold": 5,
                "window_ms": 60000,
                "description": "repeated authentication failures",
                "severity": 8,
            }
        ]
    }


def _misuse_script() -> ScenarioScript:
    base = BASE_TIMESTAMP_MS
    commands = [
        ScriptCommand(at_ms=base + offset * 1000, kind="login_attempt", host="viz", user="admin", success=False)
        for offset in (300, 310, 320, 330, 340)
    ]
    commands.append(ScriptCommand(at_ms=base + 360000, kind="firmware_write", host="viz", target="sensor1"))
    commands.append(ScriptCommand(at_ms=base + 370000, kind="set_Q", value=120.0))
    return ScenarioScript(duration_s=420, commands=tuple(commands))


def render_corpus(script: ScenarioScript) -> dict[str, str]:
    """Raw log text per stream, derived from one simulation run of the script."""
    _, events = simulate(script)
    sensor_lines = []
    for ev in events:
        stamp = format_timestamp_ms(ev.timestamp)
        sensor = ev.attributes["sensor"]
        if ev.event_type == "flow_rate_reading":
            line = f"{stamp} {sensor} flow_rate_reading Q={ev.attributes['Q']}"
            if ev.attributes.get("status") == "post_failure":
                line += " status=post_failure"
            sensor_lines.append(line)
        elif ev.event_type == "emergency":
            sensor_lines.append(f"{stamp} {sensor} emergency reason={ev.attributes['reason']}")
    auth_lines = []
    mgmt_lines = []
    for cmd in script.commands:
        stamp = format_timestamp_ms(cmd.at_ms)
        if cmd.kind == "login_attempt":
            outcome = "auth_success" if cmd.success else "auth_failure"
            auth_lines.append(
                f"{stamp} sshd {outcome} user={cmd.user} src={VIZ_IP} dst={CONTROL_IP}"
            )
        elif cmd.kind == "firmware_write":
            mgmt_lines.append(f"{stamp} {cmd.target} firmware_write from={VIZ_IP}")
    return {
        "sensor1-telemetry": "\n".join(sensor_lines) + "\n",
        "auth-control": "\n".join(auth_lines) + "\n",
        "mgmt-sensor1": "\n".join(mgmt_lines) + "\n",
    }


@dataclass(frozen=True)
class MisuseCaseBundle:
    system_doc: dict
    policies_doc: dict
    grammars_doc: dict
    probes_doc: dict
    rules_doc: dict
    script: ScenarioScript
    corpus: dict[str, str]
    streams: tuple[tuple[str, str], ...]  # (stream id, grammar name)


def misuse_case() -> MisuseCaseBundle:
    """The fixed end-to-end scenario with one planted firewall misconfiguration."""
    script = _misuse_script()
    return MisuseCaseBundle(
        system_doc=_misuse_system_doc(),
        policies_doc=_misuse_policies_doc(),
        grammars_doc=_misuse_grammars_doc(),
        probes_doc=_misuse_probes_doc(),
        rules_doc=_misuse_rules_doc(),
        script=script,
        corpus=render_corpus(script),
        streams=(
            ("sensor1-telemetry", "dam-sensor"),
            ("auth-control", "auth"),
            ("mgmt-sensor1", "mgmt"),
        ),
    )


def write_bundle(bundle: MisuseCaseBundle, out_dir, seed: int = 1234) -> Path:
    """Write the scenario as plain files plus a ready-to-run pipeline config.

    Returns the path of the pipeline config. Everything the pipeline
    needs is referenced with paths relative to that config file.
    """
    out = Path(out_dir)
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    docs = {
        "system.json": bundle.system_doc,
        "policies.json": bundle.policies_doc,
        "grammars.json": bundle.grammars_doc,
        "probes.json": bundle.probes_doc,
        "rules.json": bundle.rules_doc,
        "script.json": bundle.script.as_dict(),
    }
    for name, doc in docs.items():
        (out / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for stream_id, text in sorted(bundle.corpus.items()):
        (out / "corpus" / f"{stream_id}.log").write_text(text)
    config = {
        "grammars": "grammars.json",
        "probes": "probes.json",
        "rules": "rules.json",
        "policies": "policies.json",
        "system": "system.json",
        "hierarchy": None,
        "corpus": [
            {"id": sid, "grammar": grammar, "path": f"corpus/{sid}.log"}
            for sid, grammar in bundle.streams
        ],
        "storage": {"n": 4, "k": 3, "key_bits": 512},
        "seed": seed,
    }
    config_path = out / "pipeline.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return config_path

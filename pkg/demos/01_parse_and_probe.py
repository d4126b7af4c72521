"""Turn raw log lines into normalized events, with a probe watching the stream.

A grammar describes one line format: named token patterns, the token
sequence of a line, and where each capture lands on the event. A probe is
a small state machine that watches the parsed events of a stream and can
emit synthetic events of its own; here it flags flow readings that climb
faster than 20 units per second.
"""

from siemflow.collector import RawStream, load_grammars, load_probes, run_collector

GRAMMARS = {
    "grammars": [
        {
            "name": "sensor",
            "tokens": [
                ["TIMESTAMP", r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z"],
                ["SENSOR", r"[A-Za-z0-9_-]+"],
                ["EVENT_TYPE", r"[a-z_]+"],
                ["READING", r"([A-Za-z_]+)=([-0-9.]+)"],
            ],
            "line": ["TIMESTAMP", "SENSOR", "EVENT_TYPE", "READING+"],
            "bindings": {
                "TIMESTAMP": "timestamp",
                "SENSOR": "attributes.sensor",
                "EVENT_TYPE": "event_type",
                "READING": "attributes",
            },
            "constants": {"layer": "physical_sensor", "severity": "5"},
        }
    ]
}

PROBES = {
    "probes": [
        {
            "id": "flow-anomaly",
            "states": ["steady", "suspicious"],
            "initial": "steady",
            "transitions": [
                {
                    "from": "steady",
                    "to": "suspicious",
                    "when": [{"field": "event_type", "op": "==", "value": "flow_rate_reading"}],
                    "rate": {"field": "attributes.Q", "per_second_gt": 20},
                    "emit": {
                        "event_type": "flow_rate_anomaly",
                        "layer": "physical_sensor",
                        "severity": 7,
                        "attributes": {"q": "{attributes.Q}"},
                    },
                }
            ],
        }
    ]
}

LINES = [
    "2024-01-01T00:00:00Z sensor1 flow_rate_reading Q=50.0",
    "2024-01-01T00:00:01Z sensor1 flow_rate_reading Q=51.0",
    "2024-01-01T00:00:02Z sensor1 flow_rate_reading Q=95.0",  # jump of 44/s
    "not a log line at all",
]


def main():
    grammars = load_grammars(GRAMMARS)
    probes = load_probes(PROBES)
    result = run_collector(grammars, probes, [RawStream("telemetry", "sensor", LINES)])

    print(f"parsed {result.parsed} lines, probe emitted {result.emitted}, "
          f"quarantined {result.quarantined}")
    for stream, line, reason in result.quarantine_log:
        print(f"  quarantined {stream}:{line}: {reason}")
    print()
    for event in result.events:
        origin = "probe" if event.event_type == "flow_rate_anomaly" else "parser"
        print(f"[{origin}] {event.event_type} t={event.timestamp} "
              f"severity={event.severity} attrs={dict(event.attributes)}")


if __name__ == "__main__":
    main()

"""Correlate events into alarms with sliding-window threshold rules.

The brute-force rule fires when five authentication failures from the
same source against the same destination land inside one minute. After a
rule fires its window resets, so a sixth failure starts a fresh count
instead of re-raising the same alarm.
"""

from siemflow.correlation import CorrelationRule, correlate
from siemflow.events import Endpoint, NormalizedEvent, serialize_alarm

RULE = CorrelationRule(
    rule_id="rule-bruteforce",
    event_type="auth_failure",
    group_by=("source.ip", "destination.ip"),
    threshold=5,
    window_ms=60_000,
    description="repeated authentication failures",
    severity=8,
)


def failure(i, ts, src):
    return NormalizedEvent(
        event_id=f"ev-{i:03d}",
        timestamp=ts,
        layer="logical_access",
        event_type="auth_failure",
        source=Endpoint(src),
        destination=Endpoint("192.168.0.20"),
        severity=3,
        attributes={"user": "admin"},
    )


def main():
    # five quick failures from one host, plus noise from another host
    events = [failure(i, i * 10_000, "192.168.0.10") for i in range(5)]
    events += [failure(10 + i, 5_000 + i * 20_000, "192.168.0.99") for i in range(3)]
    events.sort(key=lambda e: e.timestamp)

    result = correlate(events, [RULE])
    print(f"{len(events)} events -> {len(result.alarms)} alarm(s)\n")
    for alarm in result.alarms:
        print(f"{alarm.alarm_id}: {alarm.description}")
        print(f"  fired at t={alarm.timestamp} severity={alarm.severity}")
        print(f"  contributing events: {', '.join(alarm.contributing_events)}")
        print(f"  canonical line: {serialize_alarm(alarm).decode().rstrip()}")


if __name__ == "__main__":
    main()

"""The full closed loop on the hydroelectric plant scenario.

The shipped scenario plants one firewall misconfiguration: the
visualization station can reach a sensor's management port although no
policy allows it. The scripted attacker brute-forces the control station
(five failed logins in forty seconds), pushes a firmware write through
the hole, and ramps the turbine flow until the power limit trips.

This walks the same stages the `siemflow run` pipeline wires together:
collect, correlate, analyze reachability, remediate, re-analyze.
"""

from siemflow import dam
from siemflow.collector import RawStream, load_grammars, load_probes, run_collector
from siemflow.correlation import correlate, load_rules
from siemflow.policies import load_policies, load_system_description
from siemflow.reachability import react, remediate, run_reachability_analysis


def main():
    bundle = dam.misuse_case()
    final, _ = dam.simulate(bundle.script)
    print(f"simulation: turbine destroyed={final.destroyed} at flow Q={final.Q:.1f} m3/s "
          f"(power {dam.power(final) / 1e6:.0f} MW, limit {final.power_limit / 1e6:.0f} MW)")

    grammars = load_grammars(bundle.grammars_doc)
    probes = load_probes(bundle.probes_doc)
    streams = [RawStream(sid, g, bundle.corpus[sid].splitlines()) for sid, g in bundle.streams]
    collected = run_collector(grammars, probes, streams)
    print(f"collector: {collected.parsed} lines parsed, {collected.emitted} probe emission(s), "
          f"{collected.quarantined} quarantined")

    alarms = correlate(collected.events, load_rules(bundle.rules_doc)).alarms
    for alarm in alarms:
        print(f"alarm: {alarm.alarm_id} {alarm.rule_id} at t={alarm.timestamp} "
              f"({len(alarm.contributing_events)} events)")

    sd = load_system_description(bundle.system_doc)
    policies = load_policies(bundle.policies_doc)
    run = run_reachability_analysis(sd, policies)
    for f in run.findings:
        print(f"finding: {f.kind} at {f.firewall_id}: "
              f"{f.source[0]}:{f.source[1]} -> {f.destination[0]}:{f.destination[1]}")

    remediation = remediate(list(run.findings), sd, policies)
    for s in remediation.suggestions:
        print(f"remediation: {s.action} at {s.node}: {s.rule.as_dict() if s.rule else None}")

    fixed = react(sd, remediation)
    rerun = run_reachability_analysis(fixed, policies)
    print(f"after reaction: {len(rerun.findings)} finding(s) remain")
    print("\nsame loop via the command line:")
    print("  siemflow dam-sim --out scenario/")
    print("  siemflow run --config scenario/pipeline.json --out report/")


if __name__ == "__main__":
    main()

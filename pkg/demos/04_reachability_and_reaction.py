"""Compare intended reachability against deployed firewall rules, then fix the gap.

The intent is one policy: the workstation may reach the server's web
service. The firewall carries that permit, plus a leftover rule that also
lets the guest host in. Expanding both rule sets over the declared
universe and differencing the reachability matrices exposes the leftover
as a security issue; the suggested remediation removes exactly that rule
and a re-analysis comes back clean.
"""

import json

from siemflow.policies import load_policies, load_system_description
from siemflow.reachability import react, remediate, run_reachability_analysis

SYSTEM = {
    "hosts": [
        {"id": "work", "ips": ["192.168.0.1"], "type": "workstation", "owner": "ops"},
        {"id": "guest", "ips": ["192.168.0.9"], "type": "workstation", "owner": "lab"},
        {"id": "srv", "ips": ["192.168.10.10"], "type": "server", "owner": "ops"},
    ],
    "devices": [{"id": "FW1", "capabilities": ["filtering", "routing"]}],
    "services": [{"host": "srv", "name": "web", "proto": "TCP", "ports": [80, 443]}],
    "topology": [["work", "FW1"], ["guest", "FW1"], ["FW1", "srv"]],
    "firewalls": {
        "FW1": [
            {"src_ip": "192.168.0.1", "src_port": "*", "dst_ip": "192.168.10.10",
             "dst_port": "80,443", "proto": "TCP", "action": "permit"},
            {"src_ip": "192.168.0.9", "src_port": "*", "dst_ip": "192.168.10.10",
             "dst_port": "80", "proto": "TCP", "action": "permit"},  # leftover
        ]
    },
    "universe": {"users": [], "environments": [], "client_ports": [40000]},
}

POLICIES = {
    "policies": [
        {"id": "pol-work-web", "subject": {"ID": "work"}, "action": "reach",
         "object": {"ID": "srv"}, "effect": "permit"},
    ]
}


def main():
    sd = load_system_description(SYSTEM)
    policies = load_policies(POLICIES)

    run = run_reachability_analysis(sd, policies)
    m_g, m_d, delta = run.matrices["FW1"]
    print("reachability matrices for FW1 (rows=sources, cols=destinations)")
    print(f"  rows: {list(m_g.rows)}")
    print(f"  cols: {list(m_g.cols)}")
    print(f"  intended:\n{m_g.cells}")
    print(f"  deployed:\n{m_d.cells}")
    print(f"  delta (-1 = deployed permits something no policy allows):\n{delta.cells}\n")

    for finding in run.findings:
        print(f"finding: {json.dumps(finding.as_dict(), sort_keys=True)}")

    remediation = remediate(list(run.findings), sd, policies)
    for s in remediation.suggestions:
        rule = s.rule.as_dict() if s.rule is not None else None
        print(f"\nsuggestion: {s.action} at {s.node}: {json.dumps(rule, sort_keys=True)}")

    fixed = react(sd, remediation)
    rerun = run_reachability_analysis(fixed, policies)
    print(f"\nfindings after reaction: {len(rerun.findings)}")


if __name__ == "__main__":
    main()

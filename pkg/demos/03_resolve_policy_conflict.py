"""Detect a policy conflict and resolve it by weighted pairwise comparison.

Two access policies collide: one permits every operator to reach the
sensors, the other denies one specific user the same action. Both cover
user u7, so the pair is a genuine conflict. The resolver scores each
policy attribute by attribute: a policy that pins an attribute the other
leaves open is the more specific one on that leaf and wins it 9:1;
identifier attributes weigh more than role or organization. The higher
global priority wins and the loser is dropped from the active set.
"""

from siemflow.ahp import resolve
from siemflow.policies import AbstractPolicy, SystemDescription, detect_conflicts
from siemflow.policies import Host, Service, User

PERMIT_OPERATORS = AbstractPolicy(
    policy_id="pol-operators-sensors",
    subject={"Role": "Operator"},
    action="reach",
    object={"Type": "sensor"},
    environment={},
    effect="permit",
)

DENY_U7 = AbstractPolicy(
    policy_id="pol-deny-u7",
    subject={"ID": "u7", "Role": "Operator"},
    action="reach",
    object={"Type": "sensor"},
    environment={},
    effect="deny",
)


def build_system() -> SystemDescription:
    return SystemDescription(
        hosts=(
            Host("ws1", ("10.0.0.1",), "workstation", "ops"),
            Host("sensor1", ("10.0.1.1",), "sensor", "plant"),
        ),
        services=(Service("sensor1", "mgmt", "TCP", (4840,)),),
        capabilities={"ws1": frozenset({"endpoint"}), "sensor1": frozenset({"endpoint"})},
        topology=(("ws1", "sensor1"),),
        firewalls={},
        users=(User({"ID": "u7", "Role": "Operator", "Organization": "ops"}, ("ws1",)),),
    )


def main():
    sd = build_system()
    conflicts = detect_conflicts([PERMIT_OPERATORS, DENY_U7], sd)
    print(f"detected {len(conflicts)} conflict(s)")
    for first, second in conflicts:
        print(f"  {first.policy_id} ({first.effect}) vs {second.policy_id} ({second.effect})")

    resolution = resolve(PERMIT_OPERATORS, DENY_U7)
    a, b = resolution.alternatives
    ga, gb = resolution.global_priorities
    print(f"\nglobal priorities: {a}={ga:.6f}  {b}={gb:.6f}")
    print(f"winner: {resolution.chosen_policy_id} (tied: {resolution.tied})")
    print(f"\nper-leaf local priorities ({a} / {b}):")
    for leaf, entry in sorted(resolution.trace.items()):
        local = entry["local"]
        print(f"  {leaf:26s} {local[0]:.3f} / {local[1]:.3f}")


if __name__ == "__main__":
    main()

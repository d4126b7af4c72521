"""Policy model: filtering rules, system description, anomaly and conflict detection."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from siemflow.policies import (
    AbstractPolicy,
    AnomalyFinding,
    FilteringRule,
    InvalidPolicy,
    InvalidSystemDescription,
    detect_conflicts,
    detect_policy_anomalies,
    environment_scope,
    first_match_permits,
    load_policies,
    load_system_description,
    dump_system_description,
    normalize,
    object_scope,
    subject_scope,
)

SD_DOC = {
    "hosts": [
        {"id": "H1", "ips": ["10.0.0.1"], "type": "workstation", "owner": "ops"},
        {"id": "H2", "ips": ["10.0.0.2"], "type": "server", "owner": "ops"},
        {"id": "H3", "ips": ["10.0.1.3"], "type": "server", "owner": "lab"},
    ],
    "devices": [
        {"id": "FW1", "capabilities": ["filtering", "routing"]},
        {"id": "SW1", "capabilities": ["routing"]},
    ],
    "services": [
        {"host": "H2", "name": "ssh", "proto": "TCP", "ports": [22]},
        {"host": "H3", "name": "web", "proto": "TCP", "ports": [80, 443]},
    ],
    "topology": [["H1", "SW1"], ["SW1", "FW1"], ["FW1", "H2"], ["FW1", "H3"]],
    "firewalls": {"FW1": []},
    "universe": {
        "users": [
            {"ID": "u7", "Role": "Operator", "Organization": "dam-ops", "hosts": ["H1"]},
            {"ID": "u9", "Role": "Guest", "Organization": "visitors", "hosts": ["H1"]},
        ],
        "environments": [],
        "client_ports": [40000],
    },
}


@pytest.fixture()
def sd():
    return load_system_description(SD_DOC)


def pol(pid, subject, object_, effect="permit", action="reach", env=None):
    return AbstractPolicy(
        policy_id=pid,
        subject=subject,
        action=action,
        object=object_,
        environment=env or {},
        effect=effect,
    )


# --- construction and normalization ---------------------------------------------


def test_policy_requires_subject_attribute():
    with pytest.raises(InvalidPolicy):
        pol("p0", {}, {"ID": "H2"})


def test_policy_rejects_unknown_attribute_names():
    with pytest.raises(InvalidPolicy):
        pol("p0", {"Badge": "blue"}, {"ID": "H2"})
    with pytest.raises(InvalidPolicy):
        pol("p0", {"ID": "u7"}, {"Hostname": "H2"})


def test_normalize_sorts_attributes_and_is_idempotent():
    p = pol("p1", {"Role": "Operator", "ID": "u7"}, {"Type": "server", "ID": "H2"})
    n = normalize(p)
    assert list(n.subject) == ["ID", "Role"]
    assert list(n.object) == ["ID", "Type"]
    assert normalize(n) == n


# --- filtering rules -------------------------------------------------------------


def test_rule_cidr_and_port_range_matching():
    rule = FilteringRule("10.0.0.0/24", "1024-65535", "10.0.1.3", "80,443", "TCP", "permit")
    assert rule.matches_packet("10.0.0.17", 40000, "10.0.1.3", 443, "TCP")
    assert not rule.matches_packet("10.0.2.17", 40000, "10.0.1.3", 443, "TCP")
    assert not rule.matches_packet("10.0.0.17", 500, "10.0.1.3", 443, "TCP")
    assert not rule.matches_packet("10.0.0.17", 40000, "10.0.1.3", 8080, "TCP")
    assert not rule.matches_packet("10.0.0.17", 40000, "10.0.1.3", 443, "UDP")


def test_rule_wildcards_match_everything():
    rule = FilteringRule("*", "*", "*", "*", "ANY", "deny")
    assert rule.matches_packet("1.2.3.4", 1, "5.6.7.8", 65535, "UDP")


def test_rule_rejects_bad_fields():
    with pytest.raises(InvalidPolicy):
        FilteringRule("10.0.0.0/24", "*", "*", "*", "ICMP", "permit")
    with pytest.raises(InvalidPolicy):
        FilteringRule("not-an-ip", "*", "*", "*", "TCP", "permit")
    with pytest.raises(InvalidPolicy):
        FilteringRule("*", "99999", "*", "*", "TCP", "permit")
    with pytest.raises(InvalidPolicy):
        FilteringRule("*", "*", "*", "*", "TCP", "drop")


def test_first_match_order_and_implicit_deny():
    rules = [
        FilteringRule("10.0.0.1", "*", "10.0.0.2", "22", "TCP", "deny"),
        FilteringRule("10.0.0.0/24", "*", "10.0.0.2", "22", "TCP", "permit"),
    ]
    assert not first_match_permits(rules, "10.0.0.1", 40000, "10.0.0.2", 22, "TCP")
    assert first_match_permits(rules, "10.0.0.9", 40000, "10.0.0.2", 22, "TCP")
    # nothing matches -> implicit deny-all
    assert not first_match_permits(rules, "10.0.0.9", 40000, "10.0.0.2", 80, "TCP")


# --- system description -----------------------------------------------------------


def test_system_description_validation_errors():
    bad = {**SD_DOC, "topology": [["H1", "ghost"]]}
    with pytest.raises(InvalidSystemDescription):
        load_system_description(bad)
    bad = {**SD_DOC, "services": [{"host": "nope", "name": "x", "proto": "TCP", "ports": [1]}]}
    with pytest.raises(InvalidSystemDescription):
        load_system_description(bad)
    bad = {**SD_DOC, "firewalls": {"SW1": []}}
    with pytest.raises(InvalidSystemDescription):
        load_system_description(bad)


def test_system_description_roundtrip(sd):
    assert load_system_description(dump_system_description(sd)) == sd


def test_scopes_enumerate_declared_universe(sd):
    p = pol("p1", {"Role": "Operator"}, {"Type": "server"})
    assert subject_scope(p, sd) == {"u7"}
    assert object_scope(p, sd) == {"H2", "H3"}
    assert environment_scope(p, sd) == {0}
    host_subject = pol("p2", {"ID": "H1"}, {"ID": "H2"})
    assert subject_scope(host_subject, sd) == {"H1"}


# --- anomalies ---------------------------------------------------------------------


def test_identical_policies_flagged_equivalent():
    a = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    b = pol("pb", {"Role": "Operator"}, {"ID": "H2"})
    findings = detect_policy_anomalies([a, b])
    assert findings == [
        AnomalyFinding("equivalence", ("pa", "pb"), "policies are identical after normalization")
    ]


def test_more_specific_policy_is_redundant():
    wide = pol("wide", {"Role": "Operator"}, {"ID": "H2"})
    narrow = pol("narrow", {"Role": "Operator", "ID": "u7"}, {"ID": "H2"})
    findings = detect_policy_anomalies([wide, narrow])
    assert len(findings) == 1
    assert findings[0].kind == "redundancy"
    assert findings[0].policy_ids == ("narrow", "wide")


def test_redundancy_needs_same_action_and_effect():
    wide = pol("wide", {"Role": "Operator"}, {"ID": "H2"})
    narrow_deny = pol("narrow", {"Role": "Operator", "ID": "u7"}, {"ID": "H2"}, effect="deny")
    assert detect_policy_anomalies([wide, narrow_deny]) == []


def test_no_anomaly_for_unrelated_policies():
    a = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    b = pol("pb", {"Role": "Guest"}, {"ID": "H3"})
    assert detect_policy_anomalies([a, b]) == []


# --- conflicts ---------------------------------------------------------------------


def test_conflict_when_scopes_overlap_with_opposite_effects(sd):
    allow = pol("allow-operators", {"Role": "Operator"}, {"ID": "H2"})
    forbid = pol("forbid-u7", {"ID": "u7"}, {"ID": "H2"}, effect="deny")
    conflicts = detect_conflicts([allow, forbid], sd)
    assert len(conflicts) == 1
    assert {conflicts[0][0].policy_id, conflicts[0][1].policy_id} == {"allow-operators", "forbid-u7"}


def test_same_effect_never_conflicts(sd):
    a = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    b = pol("pb", {"ID": "u7"}, {"ID": "H2"})
    assert detect_conflicts([a, b], sd) == []


def test_disjoint_objects_do_not_conflict(sd):
    allow = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    forbid = pol("pb", {"ID": "u7"}, {"ID": "H3"}, effect="deny")
    assert detect_conflicts([allow, forbid], sd) == []


def test_disjoint_subjects_do_not_conflict(sd):
    allow = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    forbid = pol("pb", {"Role": "Contractor"}, {"ID": "H2"}, effect="deny")
    assert detect_conflicts([allow, forbid], sd) == []


def test_environment_constraint_limits_conflicts(sd):
    # the only declared environment is the implicit empty one, which carries
    # no Time attribute, so a Time-constrained policy has empty scope
    allow = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    forbid = pol("pb", {"ID": "u7"}, {"ID": "H2"}, effect="deny", env={"Time": "night"})
    assert detect_conflicts([allow, forbid], sd) == []


def test_conflict_detection_is_order_insensitive(sd):
    allow = pol("pa", {"Role": "Operator"}, {"ID": "H2"})
    forbid = pol("pb", {"ID": "u7"}, {"ID": "H2"}, effect="deny")
    one = detect_conflicts([allow, forbid], sd)
    two = detect_conflicts([forbid, allow], sd)
    assert [(a.policy_id, b.policy_id) for a, b in one] == [
        (a.policy_id, b.policy_id) for a, b in two
    ]


# --- loading ------------------------------------------------------------------------


def test_load_policies_document():
    doc = {
        "policies": [
            {
                "id": "ops-reach-ssh",
                "subject": {"Role": "Operator"},
                "action": "reach",
                "object": {"ID": "H2"},
                "effect": "permit",
            }
        ]
    }
    (p,) = load_policies(doc)
    assert p.policy_id == "ops-reach-ssh"
    assert p.subject == {"Role": "Operator"}
    assert p.effect == "permit"


@given(
    st.lists(
        st.sampled_from(
            [
                ("ID", "u7"),
                ("Role", "Operator"),
                ("Role", "Guest"),
                ("Organization", "dam-ops"),
            ]
        ),
        min_size=1,
        max_size=3,
        unique_by=lambda kv: kv[0],
    )
)
def test_scope_shrinks_as_constraints_grow(subject_items):
    sd = load_system_description(SD_DOC)
    subject = dict(subject_items)
    p_full = pol("pf", subject, {"ID": "H2"})
    first_key = subject_items[0][0]
    p_one = pol("p1", {first_key: subject[first_key]}, {"ID": "H2"})
    assert subject_scope(p_full, sd) <= subject_scope(p_one, sd)

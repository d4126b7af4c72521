"""Conflict resolution scoring: comparison matrices, eigenvectors, aggregation."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ahp_column_priorities, ahp_global_oracle
from siemflow.ahp import (
    AhpHierarchy,
    InvalidHierarchy,
    MissingLocalPriority,
    NonConvergence,
    Resolution,
    UnknownAttribute,
    comparison_matrix_for_attribute,
    default_hierarchy,
    global_priority,
    principal_priorities,
    resolve,
)
from siemflow.policies import AbstractPolicy


def pol(pid, subject, object_=None, env=None):
    return AbstractPolicy(
        policy_id=pid,
        subject=subject,
        action="reach",
        object=object_ or {},
        environment=env or {},
        effect="permit",
    )


P_ID = pol("p1", {"ID": "u7"}, {"ID": "H2"})
P_ROLE = pol("p2", {"Role": "Operator"}, {"ID": "H2"})


# --- comparison matrices ---------------------------------------------------------


def test_matrix_both_contain_attribute():
    m = comparison_matrix_for_attribute(P_ID, P_ROLE, "object.ID")
    assert np.array_equal(m, np.ones((2, 2)))


def test_matrix_neither_contains_attribute():
    m = comparison_matrix_for_attribute(P_ID, P_ROLE, "subject.Organization")
    assert np.array_equal(m, np.ones((2, 2)))


def test_matrix_only_first_contains_attribute():
    m = comparison_matrix_for_attribute(P_ID, P_ROLE, "subject.ID")
    assert m[0, 1] == 9.0 and m[1, 0] == pytest.approx(1 / 9)
    assert m[0, 0] == m[1, 1] == 1.0


def test_matrix_only_second_contains_attribute():
    m = comparison_matrix_for_attribute(P_ID, P_ROLE, "subject.Role")
    assert m[0, 1] == pytest.approx(1 / 9) and m[1, 0] == 9.0


def test_matrix_reciprocity_holds_exactly():
    for leaf in ("subject.ID", "subject.Role", "object.Type", "environment.Time"):
        m = comparison_matrix_for_attribute(P_ID, P_ROLE, leaf)
        assert np.allclose(m * m.T, np.ones((2, 2)), atol=1e-12)


def test_matrix_unknown_attribute():
    with pytest.raises(UnknownAttribute):
        comparison_matrix_for_attribute(P_ID, P_ROLE, "subject.Badge")
    with pytest.raises(UnknownAttribute):
        comparison_matrix_for_attribute(P_ID, P_ROLE, "colour.ID")


# --- principal priorities --------------------------------------------------------


def test_priorities_of_tied_matrix():
    assert principal_priorities(np.ones((2, 2))) == pytest.approx([0.5, 0.5])


def test_priorities_of_consistent_2x2_match_column_normalization():
    m = np.array([[1.0, 9.0], [1 / 9, 1.0]])
    expect = [float(x) for x in ahp_column_priorities([[1, 9], [Fraction(1, 9), 1]])]
    assert expect == pytest.approx([0.9, 0.1])
    assert principal_priorities(m) == pytest.approx(expect, abs=1e-10)


def test_priorities_of_4x4_tied_matrix():
    assert principal_priorities(np.ones((4, 4))) == pytest.approx([0.25] * 4)


def test_priorities_sum_to_one_and_nonnegative():
    m = np.array([[1, 5, 5], [1 / 5, 1, 1], [1 / 5, 1, 1]])
    v = principal_priorities(m)
    assert v.sum() == pytest.approx(1.0, abs=1e-9)
    assert (v >= 0).all()
    assert v == pytest.approx([5 / 7, 1 / 7, 1 / 7], abs=1e-9)


def test_priorities_rejects_bad_matrices():
    with pytest.raises(ValueError):
        principal_priorities(np.ones((2, 3)))
    with pytest.raises(ValueError):
        principal_priorities(np.array([[1.0, 0.0], [0.0, 1.0]]))


def test_priorities_nonconvergence_with_tiny_budget():
    with pytest.raises(NonConvergence):
        principal_priorities(np.array([[1.0, 9.0], [1 / 9, 1.0]]), max_iter=1)


# --- hierarchy and aggregation ---------------------------------------------------


def test_hierarchy_validates_weights_and_names():
    with pytest.raises(InvalidHierarchy):
        AhpHierarchy("g", criteria=(("subject", 0.5), ("object", 0.4)))
    with pytest.raises(InvalidHierarchy):
        AhpHierarchy("g", criteria=(("subject", 1.0),), subcriteria={"object": (("ID", 1.0),)})
    with pytest.raises(InvalidHierarchy):
        AhpHierarchy("g", criteria=(("subject", 1.0),), subcriteria={"subject": (("Badge", 1.0),)})


def test_global_priority_single_criterion_is_identity():
    h = AhpHierarchy("g", criteria=(("subject", 1.0),))
    out = global_priority(h, {"subject": np.array([0.9, 0.1])})
    assert out == pytest.approx([0.9, 0.1])


def test_global_priority_two_balanced_criteria():
    h = AhpHierarchy("g", criteria=(("subject", 0.5), ("object", 0.5)))
    out = global_priority(
        h, {"subject": np.array([0.9, 0.1]), "object": np.array([0.1, 0.9])}
    )
    assert out == pytest.approx([0.5, 0.5])


def test_global_priority_missing_leaf():
    h = AhpHierarchy("g", criteria=(("subject", 0.5), ("object", 0.5)))
    with pytest.raises(MissingLocalPriority):
        global_priority(h, {"subject": np.array([0.9, 0.1])})


def test_default_hierarchy_weights():
    h = default_hierarchy()
    assert [w for _, w in h.criteria] == pytest.approx([1 / 3] * 3, abs=1e-9)
    subject = dict(h.subcriteria["subject"])
    assert subject["ID"] == pytest.approx(5 / 7, abs=1e-9)
    assert subject["Role"] == pytest.approx(1 / 7, abs=1e-9)
    assert subject["Organization"] == pytest.approx(1 / 7, abs=1e-9)
    assert [w for _, w in h.subcriteria["environment"]] == pytest.approx([1 / 3] * 3, abs=1e-9)
    total = sum(w for _, w in h.leaves())
    assert total == pytest.approx(1.0, abs=1e-9)


# --- resolve ----------------------------------------------------------------------


def test_resolve_id_beats_role():
    res = resolve(P_ID, P_ROLE)
    expect = ahp_global_oracle({"subject": {"ID"}, "object": {"ID"}}, {"subject": {"Role"}, "object": {"ID"}})
    assert res.chosen_policy_id == "p1"
    assert not res.tied
    assert res.global_priorities[0] == pytest.approx(float(expect[0]), abs=1e-9)
    assert res.global_priorities[1] == pytest.approx(float(expect[1]), abs=1e-9)
    # frozen expected values for the canonical ID-vs-Role case
    assert res.global_priorities[0] == pytest.approx(121 / 210, abs=1e-9)
    assert res.global_priorities[1] == pytest.approx(89 / 210, abs=1e-9)


def test_resolve_identical_presence_ties_lexicographically():
    a = pol("pb", {"ID": "u1"}, {"ID": "H2"})
    b = pol("pa", {"ID": "u2"}, {"ID": "H2"})
    res = resolve(a, b)
    assert res.tied
    assert res.global_priorities == pytest.approx([0.5, 0.5])
    assert res.chosen_policy_id == "pa"


def test_resolve_swap_equivariance():
    fwd = resolve(P_ID, P_ROLE)
    rev = resolve(P_ROLE, P_ID)
    assert fwd.chosen_policy_id == rev.chosen_policy_id == "p1"
    assert fwd.global_priorities[0] == pytest.approx(rev.global_priorities[1], abs=1e-12)
    assert fwd.global_priorities[1] == pytest.approx(rev.global_priorities[0], abs=1e-12)


def test_resolve_trace_covers_every_leaf():
    res = resolve(P_ID, P_ROLE)
    assert isinstance(res, Resolution)
    assert set(res.trace) == {f"{c}.{a}" for c, subs in default_hierarchy().subcriteria.items() for a, _ in subs}
    for leaf in res.trace.values():
        m = np.array(leaf["matrix"])
        assert np.allclose(m * m.T, np.ones((2, 2)), atol=1e-12)
        assert sum(leaf["local"]) == pytest.approx(1.0, abs=1e-9)


SUBJECT_POOL = ("ID", "Role", "Organization")
OBJECT_POOL = ("ID", "Type", "Owner")
ENV_POOL = ("Time", "Location", "Network")


def _mk_policy(pid, subj, obj, env):
    return AbstractPolicy(
        policy_id=pid,
        subject={a: "x" for a in subj} or {"ID": "x"},
        action="reach",
        object={a: "y" for a in obj},
        environment={a: "z" for a in env},
        effect="permit",
    )


@given(
    st.sets(st.sampled_from(SUBJECT_POOL), min_size=1),
    st.sets(st.sampled_from(OBJECT_POOL)),
    st.sets(st.sampled_from(ENV_POOL)),
    st.sets(st.sampled_from(SUBJECT_POOL), min_size=1),
    st.sets(st.sampled_from(OBJECT_POOL)),
    st.sets(st.sampled_from(ENV_POOL)),
)
def test_resolve_matches_exact_oracle(s1, o1, e1, s2, o2, e2):
    p1 = _mk_policy("p1", s1, o1, e1)
    p2 = _mk_policy("p2", s2, o2, e2)
    res = resolve(p1, p2)
    g1, g2 = ahp_global_oracle(
        {"subject": s1, "object": o1, "environment": e1},
        {"subject": s2, "object": o2, "environment": e2},
    )
    assert res.global_priorities[0] == pytest.approx(float(g1), abs=1e-9)
    assert res.global_priorities[1] == pytest.approx(float(g2), abs=1e-9)
    assert sum(res.global_priorities) == pytest.approx(1.0, abs=1e-9)
    if g1 > g2:
        assert res.chosen_policy_id == "p1"
    elif g2 > g1:
        assert res.chosen_policy_id == "p2"
    else:
        assert res.tied and res.chosen_policy_id == "p1"


@given(
    st.sets(st.sampled_from(SUBJECT_POOL), min_size=1),
    st.sets(st.sampled_from(OBJECT_POOL)),
    st.sets(st.sampled_from(ENV_POOL)),
)
def test_strict_superset_presence_always_wins(subj, obj, env):
    # drop one present attribute from p2; p1 then dominates leaf-wise
    p1 = _mk_policy("p1", subj, obj, env)
    if obj:
        o2, e2, s2 = set(sorted(obj)[:-1]), env, subj
    elif env:
        o2, e2, s2 = obj, set(sorted(env)[:-1]), subj
    elif len(subj) > 1:
        o2, e2, s2 = obj, env, set(sorted(subj)[:-1])
    else:
        return
    p2 = _mk_policy("p2", s2, o2, e2)
    res = resolve(p1, p2)
    assert res.chosen_policy_id == "p1"
    assert not res.tied

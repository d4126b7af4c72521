"""Pairwise policy-conflict resolution via the Analytic Hierarchy Process.

Given two conflicting policies, the resolver scores them on a three-level
hierarchy (goal, criteria, sub-criteria). Each leaf compares the policies
by attribute presence: a policy constraining an attribute is considered
more specific than one that does not, by a factor of 9 on the standard
1..9 judgement scale. Local priorities are principal eigenvectors of the
comparison matrices; global priorities are their weighted sum down the
hierarchy; the higher-scoring policy wins the conflict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .policies import AbstractPolicy, ENVIRONMENT_ATTRS, OBJECT_ATTRS, SUBJECT_ATTRS

ELEMENT_ATTRS = {
    "subject": SUBJECT_ATTRS,
    "object": OBJECT_ATTRS,
    "environment": ENVIRONMENT_ATTRS,
}

TIE_TOL = 1e-12


class UnknownAttribute(KeyError):
    pass


class NonConvergence(RuntimeError):
    pass


class MissingLocalPriority(KeyError):
    pass


class InvalidHierarchy(ValueError):
    pass


@dataclass(frozen=True)
class AhpHierarchy:
    """Goal, weighted criteria and weighted per-criterion sub-criteria.

    Criteria named after a policy element (subject, object, environment)
    may carry that element's attributes as sub-criteria; leaf names are
    then "criterion.attribute". A criterion without sub-criteria is its
    own leaf.
    """

    goal: str
    criteria: tuple[tuple[str, float], ...]
    subcriteria: dict[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.criteria:
            raise InvalidHierarchy("hierarchy needs at least one criterion")
        names = [name for name, _ in self.criteria]
        if len(set(names)) != len(names):
            raise InvalidHierarchy("duplicate criterion names")
        _check_weights("criteria", [w for _, w in self.criteria])
        for criterion, subs in self.subcriteria.items():
            if criterion not in names:
                raise InvalidHierarchy(f"sub-criteria for unknown criterion {criterion!r}")
            _check_weights(f"sub-criteria of {criterion}", [w for _, w in subs])
            allowed = ELEMENT_ATTRS.get(criterion)
            if allowed is not None:
                for attr, _ in subs:
                    if attr not in allowed:
                        raise InvalidHierarchy(f"{criterion} has no attribute {attr!r}")

    def leaves(self) -> list[tuple[str, float]]:
        """(leaf name, effective weight below the goal) pairs."""
        out = []
        for criterion, weight in self.criteria:
            subs = self.subcriteria.get(criterion)
            if subs:
                out.extend((f"{criterion}.{attr}", weight * sub_w) for attr, sub_w in subs)
            else:
                out.append((criterion, weight))
        return out


def _check_weights(label: str, weights: list[float]) -> None:
    if any(w <= 0 for w in weights):
        raise InvalidHierarchy(f"{label}: weights must be positive")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise InvalidHierarchy(f"{label}: weights must sum to 1, got {sum(weights)}")


def _contains(policy: AbstractPolicy, leaf: str) -> bool:
    if "." in leaf:
        element, attr = leaf.split(".", 1)
    else:
        element, attr = leaf, None
    if element not in ELEMENT_ATTRS:
        raise UnknownAttribute(leaf)
    attrs = getattr(policy, element)
    if attr is None:
        return bool(attrs)
    if attr not in ELEMENT_ATTRS[element]:
        raise UnknownAttribute(leaf)
    return attr in attrs


def comparison_matrix_for_attribute(
    p1: AbstractPolicy, p2: AbstractPolicy, attribute: str
) -> np.ndarray:
    """2x2 judgement matrix from attribute presence.

    `attribute` is a leaf name: "subject.ID", "object.Type", ... or a bare
    element name, which compares on whether the element is constrained at
    all. Presence in exactly one policy yields the strongest judgement (9).
    """
    in1, in2 = _contains(p1, attribute), _contains(p2, attribute)
    if in1 == in2:
        return np.array([[1.0, 1.0], [1.0, 1.0]])
    if in1:
        return np.array([[1.0, 9.0], [1.0 / 9.0, 1.0]])
    return np.array([[1.0, 1.0 / 9.0], [9.0, 1.0]])


def principal_priorities(m: np.ndarray, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Normalized principal eigenvector by power iteration."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise ValueError("comparison matrix must be square, n >= 2")
    if (m <= 0).any():
        raise ValueError("comparison matrix entries must be positive")
    v = np.full(m.shape[0], 1.0 / m.shape[0])
    for _ in range(max_iter):
        nxt = m @ v
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - v)) < tol:
            return nxt
        v = nxt
    raise NonConvergence(f"power iteration did not converge within {max_iter} iterations")


def global_priority(h: AhpHierarchy, local: dict[str, np.ndarray]) -> np.ndarray:
    """Aggregate leaf priorities bottom-up: goal weight x leaf local vector."""
    total: Optional[np.ndarray] = None
    for leaf, weight in h.leaves():
        if leaf not in local:
            raise MissingLocalPriority(leaf)
        vec = np.asarray(local[leaf], dtype=float)
        total = weight * vec if total is None else total + weight * vec
    assert total is not None
    return total


@dataclass(frozen=True)
class Resolution:
    chosen_policy_id: str
    alternatives: tuple[str, str]
    global_priorities: tuple[float, float]
    trace: dict[str, dict]
    tied: bool

    def as_dict(self) -> dict:
        return {
            "chosen_policy_id": self.chosen_policy_id,
            "alternatives": list(self.alternatives),
            "global_priorities": list(self.global_priorities),
            "tied": self.tied,
            "trace": self.trace,
        }


def default_hierarchy() -> AhpHierarchy:
    """Equal criterion weights; identifier attributes strongly favoured.

    Sub-criterion weights come from fixed judgement matrices: within
    subject and object the identifying attribute is strongly (scale 5)
    more relevant than the descriptive ones, which tie; environment
    attributes all tie.
    """
    strong_first = np.array(
        [
            [1.0, 5.0, 5.0],
            [1.0 / 5.0, 1.0, 1.0],
            [1.0 / 5.0, 1.0, 1.0],
        ]
    )
    even = np.ones((3, 3))
    subject_w = principal_priorities(strong_first)
    object_w = principal_priorities(strong_first)
    env_w = principal_priorities(even)
    crit_w = principal_priorities(even)
    return AhpHierarchy(
        goal="select the policy",
        criteria=(
            ("subject", float(crit_w[0])),
            ("object", float(crit_w[1])),
            ("environment", float(crit_w[2])),
        ),
        subcriteria={
            "subject": tuple(zip(SUBJECT_ATTRS, (float(w) for w in subject_w))),
            "object": tuple(zip(OBJECT_ATTRS, (float(w) for w in object_w))),
            "environment": tuple(zip(ENVIRONMENT_ATTRS, (float(w) for w in env_w))),
        },
    )


def resolve(p1: AbstractPolicy, p2: AbstractPolicy, h: Optional[AhpHierarchy] = None) -> Resolution:
    """Score the two policies over the hierarchy and pick the winner.

    Equal global priorities (within 1e-12) are flagged tied and broken by
    lexicographic policy_id so resolution stays deterministic.
    """
    if h is None:
        h = default_hierarchy()
    local: dict[str, np.ndarray] = {}
    trace: dict[str, dict] = {}
    for leaf, _ in h.leaves():
        matrix = comparison_matrix_for_attribute(p1, p2, leaf)
        vec = principal_priorities(matrix)
        local[leaf] = vec
        trace[leaf] = {"matrix": matrix.tolist(), "local": vec.tolist()}
    priorities = global_priority(h, local)
    tied = bool(abs(priorities[0] - priorities[1]) <= TIE_TOL)
    if tied:
        chosen = min(p1.policy_id, p2.policy_id)
    else:
        chosen = p1.policy_id if priorities[0] > priorities[1] else p2.policy_id
    return Resolution(
        chosen_policy_id=chosen,
        alternatives=(p1.policy_id, p2.policy_id),
        global_priorities=(float(priorities[0]), float(priorities[1])),
        trace=trace,
        tied=tied,
    )

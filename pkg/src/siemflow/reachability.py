"""Network reachability analysis of reach-policies against deployed firewalls.

The pipeline refines abstract reach-policies into per-firewall generated
permit rules, expands generated and deployed rules over the declared
universe (host IPs, client ports, service ports), composes per-firewall
0/1 reachability matrices and diffs them. A +1 cell means policy traffic
the deployment drops (anomaly); a -1 cell means deployed rules permit
traffic no policy allows (security issue). Remediation suggestions are
computed by what-if simulation so that applying them via react() provably
clears every finding.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Iterable, Optional

import networkx as nx
import numpy as np

from .policies import (
    AbstractPolicy,
    FilteringRule,
    InvalidSystemDescription,
    SystemDescription,
    dump_system_description,
    load_system_description,
    object_scope,
    subject_scope,
    validate_system_description,
)

DEFAULT_PATH_CAP = 64


class UnknownEndpoint(KeyError):
    pass


class DimensionMismatch(ValueError):
    pass


class StaleRemediation(ValueError):
    pass


class PathCapExceeded(RuntimeError):
    pass


def _ip_key(ip: str) -> int:
    return int(ipaddress.ip_address(ip))


# --- topology -----------------------------------------------------------------


def build_topology(sd: SystemDescription) -> nx.Graph:
    """Undirected graph of the declared network; nodes carry capabilities and IPs."""
    validate_system_description(sd)
    g = nx.Graph()
    ips = {h.host_id: tuple(h.ips) for h in sd.hosts}
    for node in sorted(sd.capabilities):
        g.add_node(node, capabilities=sd.capabilities[node], ips=ips.get(node, ()))
    for a, b in sd.topology:
        g.add_edge(a, b)
    return g


def firewall_nodes(sd: SystemDescription) -> list[str]:
    return sorted(n for n, caps in sd.capabilities.items() if "filtering" in caps)


# --- findings ------------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    kind: str  # anomaly | security_issue | not_enforceable
    firewall_id: Optional[str] = None
    source: Optional[tuple[str, int]] = None
    destination: Optional[tuple[str, int, str]] = None
    policy_id: Optional[str] = None
    path: Optional[tuple[str, ...]] = None
    detail: str = ""

    def sort_key(self):
        return (
            self.kind,
            self.firewall_id or "",
            self.policy_id or "",
            (_ip_key(self.source[0]), self.source[1]) if self.source else (),
            (_ip_key(self.destination[0]), self.destination[1], self.destination[2])
            if self.destination
            else (),
        )

    def as_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.firewall_id is not None:
            out["firewall_id"] = self.firewall_id
        if self.source is not None:
            out["source"] = {"ip": self.source[0], "port": self.source[1]}
        if self.destination is not None:
            out["destination"] = {
                "ip": self.destination[0],
                "port": self.destination[1],
                "proto": self.destination[2],
            }
        if self.policy_id is not None:
            out["policy_id"] = self.policy_id
        if self.path is not None:
            out["path"] = list(self.path)
        out["detail"] = self.detail
        return out


# --- refinement -----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratedRuleSet:
    firewall_id: str
    rules: tuple[FilteringRule, ...]


def _subject_host_ids(policy: AbstractPolicy, sd: SystemDescription) -> list[str]:
    """Hosts a subject acts from: direct host matches plus seats of matching users."""
    host_ids = {h.host_id for h in sd.hosts}
    if "ID" in policy.subject:
        target = policy.subject["ID"]
        known = target in host_ids or any(u.attrs.get("ID") == target for u in sd.users)
        if not known:
            raise UnknownEndpoint(f"policy {policy.policy_id}: unknown subject {target!r}")
    matched = subject_scope(policy, sd)
    out = set(matched & host_ids)
    for user in sd.users:
        if user.attrs.get("ID") in matched:
            for h in user.hosts:
                if h not in host_ids:
                    raise UnknownEndpoint(
                        f"user {user.attrs.get('ID')}: unknown host binding {h!r}"
                    )
                out.add(h)
    return sorted(out)


def _object_host_ids(policy: AbstractPolicy, sd: SystemDescription) -> list[str]:
    host_ids = {h.host_id for h in sd.hosts}
    if "ID" in policy.object and policy.object["ID"] not in host_ids:
        raise UnknownEndpoint(
            f"policy {policy.policy_id}: unknown object {policy.object['ID']!r}"
        )
    return sorted(object_scope(policy, sd))


def _policy_rules(sd: SystemDescription, s_host: str, o_host: str) -> list[FilteringRule]:
    rules = []
    obj = sd.host(o_host)
    for svc in sd.services_of(o_host):
        ports = ",".join(str(p) for p in svc.ports)
        for s_ip in sorted(sd.host(s_host).ips, key=_ip_key):
            for d_ip in sorted(obj.ips, key=_ip_key):
                rules.append(FilteringRule(s_ip, "*", d_ip, ports, svc.proto, "permit"))
    return rules


def refine(
    policies: list[AbstractPolicy],
    graph: nx.Graph,
    sd: SystemDescription,
    path_cap: int = DEFAULT_PATH_CAP,
) -> tuple[dict[str, GeneratedRuleSet], list[Finding]]:
    """Distribute permit rules for each reach-policy to every firewall on its paths.

    Every subject-to-object simple path must cross a filtering-capable
    node; a policy with an uncovered path is reported not_enforceable
    (pairs with no path at all are physically isolated and produce
    nothing). Deny policies generate no rules: default deny covers them.
    """
    generated: dict[str, list[FilteringRule]] = {fw: [] for fw in firewall_nodes(sd)}
    findings: list[Finding] = []
    for policy in policies:
        if policy.action != "reach" or policy.effect != "permit":
            continue
        s_hosts = _subject_host_ids(policy, sd)
        o_hosts = _object_host_ids(policy, sd)
        uncovered: Optional[tuple[str, ...]] = None
        n_paths = 0
        for s_host in s_hosts:
            for o_host in o_hosts:
                if s_host == o_host or s_host not in graph or o_host not in graph:
                    continue
                paths = sorted(tuple(p) for p in nx.all_simple_paths(graph, s_host, o_host))
                n_paths += len(paths)
                if n_paths > path_cap:
                    raise PathCapExceeded(
                        f"policy {policy.policy_id}: more than {path_cap} simple paths"
                    )
                for path in paths:
                    fws = [n for n in path if "filtering" in sd.capabilities.get(n, frozenset())]
                    if not fws:
                        if uncovered is None:
                            uncovered = path
                        continue
                    for fw in fws:
                        generated.setdefault(fw, []).extend(_policy_rules(sd, s_host, o_host))
        if uncovered is not None:
            findings.append(
                Finding(
                    kind="not_enforceable",
                    policy_id=policy.policy_id,
                    path=uncovered,
                    detail=f"no filtering node on path {' - '.join(uncovered)}",
                )
            )
    out = {}
    for fw, rules in generated.items():
        deduped = list(dict.fromkeys(rules))
        out[fw] = GeneratedRuleSet(firewall_id=fw, rules=tuple(deduped))
    return out, findings


# --- expansion -------------------------------------------------------------------


def source_universe(sd: SystemDescription) -> list[tuple[str, int]]:
    """Every (source IP, client port) pair of the declared universe."""
    return sorted(
        ((ip, port) for ip in sd.all_host_ips() for port in sd.client_ports),
        key=lambda sp: (_ip_key(sp[0]), sp[1]),
    )


def destination_universe(sd: SystemDescription) -> list[tuple[str, int, str]]:
    """Every (destination IP, service port, proto) triple declared by services."""
    triples = {
        (ip, port, svc.proto)
        for svc in sd.services
        for ip in sd.host(svc.host_id).ips
        for port in svc.ports
    }
    return sorted(triples, key=lambda d: (_ip_key(d[0]), d[1], d[2]))


def expand(rules: Iterable[FilteringRule], sd: SystemDescription) -> list[FilteringRule]:
    """Rewrite rules into concrete single-value rules over the declared universe.

    Order is preserved (outer: input order; inner: universe order) and so
    is the action, which keeps first-match semantics intact.
    """
    sources = source_universe(sd)
    dests = destination_universe(sd)
    out = []
    for rule in rules:
        srcs = [(ip, port) for ip, port in sources if rule.source_matches(ip, port)]
        dsts = [
            (ip, port, proto)
            for ip, port, proto in dests
            if rule.dest_matches(ip, port, proto)
        ]
        for s_ip, s_port in srcs:
            for d_ip, d_port, proto in dsts:
                out.append(
                    FilteringRule(s_ip, str(s_port), d_ip, str(d_port), proto, rule.action)
                )
    return out


# --- composition -----------------------------------------------------------------


@dataclass
class ReachabilityMatrix:
    firewall_id: str
    rows: tuple[tuple[str, int], ...]
    cols: tuple[tuple[str, int, str], ...]
    cells: np.ndarray

    def cell(self, row: tuple[str, int], col: tuple[str, int, str]) -> int:
        return int(self.cells[self.rows.index(row), self.cols.index(col)])


@dataclass
class DeltaMatrix:
    firewall_id: str
    rows: tuple[tuple[str, int], ...]
    cols: tuple[tuple[str, int, str], ...]
    cells: np.ndarray  # entries in {-1, 0, 1}


def _first_match_table(expanded: list[FilteringRule]) -> dict[tuple, bool]:
    """Concrete 5-tuple -> permitted, honoring first-match by reverse overwrite."""
    table: dict[tuple, bool] = {}
    for rule in reversed(expanded):
        key = (rule.src_ip, int(rule.src_port), rule.dst_ip, int(rule.dst_port), rule.proto)
        table[key] = rule.action == "permit"
    return table


def compose(
    r_g: list[FilteringRule], r_d: list[FilteringRule], firewall_id: str
) -> tuple[ReachabilityMatrix, ReachabilityMatrix]:
    """Reachability matrices of the expanded generated and deployed sets.

    Rows and columns are the distinct sources and destinations of the
    union, ordered lexicographically by (IP as integer, port, proto) so
    both matrices and any diff share one coordinate system.
    """
    union = list(r_g) + list(r_d)
    rows = tuple(
        sorted(
            {(r.src_ip, int(r.src_port)) for r in union},
            key=lambda sp: (_ip_key(sp[0]), sp[1]),
        )
    )
    cols = tuple(
        sorted(
            {(r.dst_ip, int(r.dst_port), r.proto) for r in union},
            key=lambda d: (_ip_key(d[0]), d[1], d[2]),
        )
    )
    m_g = np.zeros((len(rows), len(cols)), dtype=np.int8)
    m_d = np.zeros((len(rows), len(cols)), dtype=np.int8)
    tables = (_first_match_table(list(r_g)), _first_match_table(list(r_d)))
    for i, (s_ip, s_port) in enumerate(rows):
        for j, (d_ip, d_port, proto) in enumerate(cols):
            key = (s_ip, s_port, d_ip, d_port, proto)
            if tables[0].get(key, False):
                m_g[i, j] = 1
            if tables[1].get(key, False):
                m_d[i, j] = 1
    return (
        ReachabilityMatrix(firewall_id, rows, cols, m_g),
        ReachabilityMatrix(firewall_id, rows, cols, m_d),
    )


# --- analysis --------------------------------------------------------------------


def analyze(m_g: ReachabilityMatrix, m_d: ReachabilityMatrix) -> tuple[DeltaMatrix, list[Finding]]:
    if m_g.firewall_id != m_d.firewall_id or m_g.rows != m_d.rows or m_g.cols != m_d.cols:
        raise DimensionMismatch("matrices do not share coordinates")
    delta = DeltaMatrix(m_g.firewall_id, m_g.rows, m_g.cols, m_g.cells - m_d.cells)
    findings = []
    for i, j in zip(*np.nonzero(delta.cells)):
        src, dst = m_g.rows[i], m_g.cols[j]
        if delta.cells[i, j] > 0:
            findings.append(
                Finding(
                    kind="anomaly",
                    firewall_id=m_g.firewall_id,
                    source=src,
                    destination=dst,
                    detail="policy traffic dropped by deployed rules",
                )
            )
        else:
            findings.append(
                Finding(
                    kind="security_issue",
                    firewall_id=m_g.firewall_id,
                    source=src,
                    destination=dst,
                    detail="deployed rules permit traffic no policy allows",
                )
            )
    return delta, findings


# --- full run ----------------------------------------------------------------------


@dataclass
class AnalysisRun:
    generated: dict[str, GeneratedRuleSet]
    matrices: dict[str, tuple[ReachabilityMatrix, ReachabilityMatrix, DeltaMatrix]]
    findings: tuple[Finding, ...]

    def findings_report(self) -> list[dict]:
        return [f.as_dict() for f in self.findings]


def run_reachability_analysis(
    sd: SystemDescription, policies: list[AbstractPolicy], path_cap: int = DEFAULT_PATH_CAP
) -> AnalysisRun:
    graph = build_topology(sd)
    generated, findings = refine(policies, graph, sd, path_cap=path_cap)
    matrices = {}
    for fw in firewall_nodes(sd):
        r_g = expand(generated[fw].rules if fw in generated else (), sd)
        r_d = expand(sd.firewalls.get(fw, []), sd)
        m_g, m_d = compose(r_g, r_d, fw)
        delta, fw_findings = analyze(m_g, m_d)
        matrices[fw] = (m_g, m_d, delta)
        findings.extend(fw_findings)
    findings.sort(key=lambda f: f.sort_key())
    return AnalysisRun(generated=generated, matrices=matrices, findings=tuple(findings))


# --- remediation and reaction --------------------------------------------------------


@dataclass(frozen=True)
class Suggestion:
    action: str  # add_rule | remove_rule | install_filtering
    node: str
    rule: Optional[FilteringRule] = None

    def as_dict(self) -> dict:
        out = {"action": self.action, "node": self.node}
        if self.rule is not None:
            out["rule"] = self.rule.as_dict()
        return out


@dataclass(frozen=True)
class Remediation:
    suggestions: tuple[Suggestion, ...] = ()

    def as_dict(self) -> dict:
        return {"suggestions": [s.as_dict() for s in self.suggestions]}


def _apply_suggestion(doc: dict, s: Suggestion) -> None:
    if s.action == "install_filtering":
        for entry in list(doc.get("devices", [])) + list(doc.get("hosts", [])):
            if entry["id"] == s.node:
                caps = entry.setdefault("capabilities", [])
                if "filtering" not in caps:
                    caps.append("filtering")
                doc.setdefault("firewalls", {}).setdefault(s.node, [])
                return
        raise StaleRemediation(f"unknown node {s.node!r}")
    rules = doc.get("firewalls", {}).get(s.node)
    if rules is None:
        raise StaleRemediation(f"{s.node!r} is not a configured firewall")
    assert s.rule is not None
    entry = s.rule.as_dict()
    if s.action == "remove_rule":
        if entry not in rules:
            raise StaleRemediation(f"rule not deployed on {s.node}: {entry}")
        rules.remove(entry)
    elif s.action == "add_rule":
        rules.insert(0, entry)
    else:
        raise StaleRemediation(f"unknown suggestion action {s.action!r}")


def react(sd: SystemDescription, remediation: Remediation) -> SystemDescription:
    """Apply remediation to a copy of the system description.

    Added rules are prepended so they cannot be shadowed by pre-existing
    deny rules; removals must match a currently deployed rule exactly.
    """
    doc = dump_system_description(sd)
    for s in remediation.suggestions:
        _apply_suggestion(doc, s)
    return load_system_description(doc)


def _first_matching_permit(
    rules: list[FilteringRule], packet: tuple[str, int, str, int, str]
) -> Optional[FilteringRule]:
    for rule in rules:
        if rule.matches_packet(*packet):
            return rule if rule.action == "permit" else None
    return None


def _anomaly_add_rules(
    cells: list[tuple[tuple[str, int], tuple[str, int, str]]], sd: SystemDescription
) -> list[FilteringRule]:
    """Compact permit rules covering the given +1 cells and nothing else in-universe."""
    grouped: dict[tuple[str, str, int, str], list[int]] = {}
    for (s_ip, s_port), (d_ip, d_port, proto) in cells:
        grouped.setdefault((s_ip, d_ip, d_port, proto), []).append(s_port)
    out = []
    for (s_ip, d_ip, d_port, proto), s_ports in sorted(
        grouped.items(), key=lambda kv: (_ip_key(kv[0][0]), _ip_key(kv[0][1]), kv[0][2], kv[0][3])
    ):
        if set(s_ports) >= set(sd.client_ports):
            src_port = "*"
        else:
            src_port = ",".join(str(p) for p in sorted(set(s_ports)))
        out.append(FilteringRule(s_ip, src_port, d_ip, str(d_port), proto, "permit"))
    return out


def remediate(
    findings: list[Finding],
    sd: SystemDescription,
    policies: list[AbstractPolicy],
    path_cap: int = DEFAULT_PATH_CAP,
    max_rounds: int = 16,
) -> Remediation:
    """Suggestions that provably clear all findings.

    Each round fixes the current findings (install filtering for
    not_enforceable, remove the first matching permit for a security
    issue, add permits for anomalies) and re-runs the analysis on a
    simulated copy until it is clean, so react() closure is verified,
    not assumed. `findings` is accepted for interface symmetry; the
    simulation recomputes them from sd and the policies.
    """
    del findings
    suggestions: list[Suggestion] = []
    current = sd
    for _ in range(max_rounds):
        run = run_reachability_analysis(current, policies, path_cap=path_cap)
        if not run.findings:
            return Remediation(suggestions=tuple(suggestions))
        batch: list[Suggestion] = []
        anomaly_cells: dict[str, list] = {}
        for f in run.findings:
            if f.kind == "not_enforceable":
                assert f.path is not None
                s = Suggestion(action="install_filtering", node=f.path[-2])
                if s not in batch:
                    batch.append(s)
            elif f.kind == "security_issue":
                assert f.firewall_id and f.source and f.destination
                packet = (*f.source, *f.destination)
                rule = _first_matching_permit(current.firewalls[f.firewall_id], packet)
                if rule is not None:
                    s = Suggestion(action="remove_rule", node=f.firewall_id, rule=rule)
                    if s not in batch:
                        batch.append(s)
            else:
                anomaly_cells.setdefault(f.firewall_id, []).append((f.source, f.destination))
        for fw in sorted(anomaly_cells):
            for rule in _anomaly_add_rules(anomaly_cells[fw], current):
                batch.append(Suggestion(action="add_rule", node=fw, rule=rule))
        suggestions.extend(batch)
        current = react(current, Remediation(suggestions=tuple(batch)))
    raise RuntimeError(f"remediation did not converge within {max_rounds} rounds")

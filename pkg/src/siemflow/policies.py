"""Security policies, firewall rules and the shared system description.

Abstract policies are topology-independent statements "subject may (not)
reach object"; anything not permitted is denied by default. Firewall
behaviour is concrete: ordered 5-tuple :class:`FilteringRule` lists with
first-match semantics. The :class:`SystemDescription` declares the whole
universe (hosts, services, users, topology), which keeps policy overlap
questions decidable by plain enumeration.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Optional

SUBJECT_ATTRS = ("ID", "Role", "Organization")
OBJECT_ATTRS = ("ID", "Type", "Owner")
ENVIRONMENT_ATTRS = ("Time", "Location", "Network")

PROTOCOLS = ("TCP", "UDP")


class InvalidPolicy(ValueError):
    pass


class InvalidSystemDescription(ValueError):
    pass


@dataclass(frozen=True)
class AbstractPolicy:
    policy_id: str
    subject: dict[str, str]
    action: str
    object: dict[str, str]
    environment: dict[str, str] = field(default_factory=dict)
    effect: str = "permit"

    def __post_init__(self):
        if not self.subject:
            raise InvalidPolicy(f"policy {self.policy_id}: at least one subject attribute required")
        if not self.action:
            raise InvalidPolicy(f"policy {self.policy_id}: action must be non-empty")
        if self.effect not in ("permit", "deny"):
            raise InvalidPolicy(f"policy {self.policy_id}: effect must be permit or deny")
        for name, attrs, allowed in (
            ("subject", self.subject, SUBJECT_ATTRS),
            ("object", self.object, OBJECT_ATTRS),
            ("environment", self.environment, ENVIRONMENT_ATTRS),
        ):
            for key in attrs:
                if key not in allowed:
                    raise InvalidPolicy(f"policy {self.policy_id}: unknown {name} attribute {key!r}")

    def contains(self, element: str, attribute: str) -> bool:
        """True when this policy constrains `attribute` of `element`."""
        return attribute in getattr(self, element)


def normalize(policy: AbstractPolicy) -> AbstractPolicy:
    """Canonical form: attribute maps in sorted key order, values as strings."""
    return AbstractPolicy(
        policy_id=policy.policy_id,
        subject={k: str(policy.subject[k]) for k in sorted(policy.subject)},
        action=policy.action,
        object={k: str(policy.object[k]) for k in sorted(policy.object)},
        environment={k: str(policy.environment[k]) for k in sorted(policy.environment)},
        effect=policy.effect,
    )


def _scope_signature(policy: AbstractPolicy):
    p = normalize(policy)
    return (tuple(p.subject.items()), p.action, tuple(p.object.items()), tuple(p.environment.items()), p.effect)


# --- filtering rules ----------------------------------------------------------


def _parse_ports(spec) -> Optional[list[tuple[int, int]]]:
    """Port field -> interval list, or None for the wildcard."""
    if spec in ("*", None):
        return None
    if isinstance(spec, int):
        spec = str(spec)
    intervals = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            raise InvalidPolicy(f"empty port entry in {spec!r}")
        if "-" in part:
            lo_s, hi_s = part.split("-", 1)
            lo, hi = int(lo_s), int(hi_s)
        else:
            lo = hi = int(part)
        if not (0 <= lo <= hi <= 65535):
            raise InvalidPolicy(f"port out of range in {spec!r}")
        intervals.append((lo, hi))
    return intervals


def _parse_ip(spec: str):
    if spec == "*":
        return None
    try:
        if "/" in spec:
            return ipaddress.ip_network(spec, strict=False)
        return ipaddress.ip_network(spec + "/32")
    except ValueError as exc:
        raise InvalidPolicy(f"bad IP field {spec!r}: {exc}") from exc


@dataclass(frozen=True)
class FilteringRule:
    """Concrete 5-tuple firewall rule.

    IP fields take a single IPv4 address, CIDR block or "*"; port fields a
    single port, comma list, lo-hi range or "*"; proto is TCP, UDP or ANY.
    """

    src_ip: str
    src_port: str
    dst_ip: str
    dst_port: str
    proto: str
    action: str

    def __post_init__(self):
        if self.proto not in PROTOCOLS + ("ANY",):
            raise InvalidPolicy(f"bad protocol {self.proto!r}")
        if self.action not in ("permit", "deny"):
            raise InvalidPolicy(f"bad action {self.action!r}")
        object.__setattr__(self, "_src_net", _parse_ip(self.src_ip))
        object.__setattr__(self, "_dst_net", _parse_ip(self.dst_ip))
        object.__setattr__(self, "_src_ports", _parse_ports(self.src_port))
        object.__setattr__(self, "_dst_ports", _parse_ports(self.dst_port))

    @staticmethod
    def permit(src_ip, src_port, dst_ip, dst_port, proto) -> "FilteringRule":
        return FilteringRule(str(src_ip), str(src_port), str(dst_ip), str(dst_port), proto, "permit")

    def _ip_match(self, net, ip: str) -> bool:
        return net is None or ipaddress.ip_address(ip) in net

    def _port_match(self, intervals, port: int) -> bool:
        return intervals is None or any(lo <= port <= hi for lo, hi in intervals)

    def source_matches(self, ip: str, port: int) -> bool:
        return self._ip_match(self._src_net, ip) and self._port_match(self._src_ports, port)

    def dest_matches(self, ip: str, port: int, proto: str) -> bool:
        return (
            (self.proto == "ANY" or self.proto == proto)
            and self._ip_match(self._dst_net, ip)
            and self._port_match(self._dst_ports, port)
        )

    def matches_packet(self, src_ip: str, src_port: int, dst_ip: str, dst_port: int, proto: str) -> bool:
        return self.source_matches(src_ip, src_port) and self.dest_matches(dst_ip, dst_port, proto)

    def as_dict(self) -> dict:
        return {
            "src_ip": self.src_ip,
            "src_port": self.src_port,
            "dst_ip": self.dst_ip,
            "dst_port": self.dst_port,
            "proto": self.proto,
            "action": self.action,
        }


def first_match_permits(rules: list[FilteringRule], src_ip, src_port, dst_ip, dst_port, proto) -> bool:
    """First-match evaluation with the implicit trailing deny-all."""
    for rule in rules:
        if rule.matches_packet(src_ip, src_port, dst_ip, dst_port, proto):
            return rule.action == "permit"
    return False


# --- system description -------------------------------------------------------


@dataclass(frozen=True)
class Host:
    host_id: str
    ips: tuple[str, ...]
    type: Optional[str] = None
    owner: Optional[str] = None


@dataclass(frozen=True)
class Service:
    host_id: str
    name: str
    proto: str
    ports: tuple[int, ...]


@dataclass(frozen=True)
class User:
    """Declared person: policy subject attributes plus network seats."""

    attrs: dict[str, str]
    hosts: tuple[str, ...] = ()


@dataclass
class SystemDescription:
    hosts: list[Host]
    services: list[Service]
    capabilities: dict[str, frozenset[str]]
    topology: list[tuple[str, str]]
    firewalls: dict[str, list[FilteringRule]]
    users: list[User] = field(default_factory=list)
    environments: list[dict[str, str]] = field(default_factory=lambda: [{}])
    client_ports: tuple[int, ...] = (40000,)

    def __post_init__(self):
        validate_system_description(self)

    def host(self, host_id: str) -> Host:
        for h in self.hosts:
            if h.host_id == host_id:
                return h
        raise KeyError(host_id)

    def services_of(self, host_id: str) -> list[Service]:
        return [s for s in self.services if s.host_id == host_id]

    def nodes(self) -> list[str]:
        return sorted(self.capabilities)

    def all_host_ips(self) -> list[str]:
        return sorted({ip for h in self.hosts for ip in h.ips})

    def host_by_ip(self, ip: str) -> Optional[Host]:
        for h in self.hosts:
            if ip in h.ips:
                return h
        return None


def validate_system_description(sd: SystemDescription) -> None:
    host_ids = [h.host_id for h in sd.hosts]
    if len(set(host_ids)) != len(host_ids):
        raise InvalidSystemDescription("duplicate host ids")
    for h in sd.hosts:
        if not h.ips:
            raise InvalidSystemDescription(f"host {h.host_id} has no IP")
        for ip in h.ips:
            try:
                ipaddress.ip_address(ip)
            except ValueError as exc:
                raise InvalidSystemDescription(f"host {h.host_id}: bad IP {ip!r}") from exc
    for host_id in host_ids:
        if host_id not in sd.capabilities:
            raise InvalidSystemDescription(f"host {host_id} missing from capabilities")
    for s in sd.services:
        if s.host_id not in host_ids:
            raise InvalidSystemDescription(f"service {s.name} references unknown host {s.host_id}")
        if s.proto not in PROTOCOLS:
            raise InvalidSystemDescription(f"service {s.name}: bad protocol {s.proto}")
        if not s.ports:
            raise InvalidSystemDescription(f"service {s.name}: no ports")
    for a, b in sd.topology:
        if a not in sd.capabilities or b not in sd.capabilities:
            raise InvalidSystemDescription(f"topology edge ({a}, {b}) references undeclared node")
    for fw in sd.firewalls:
        if "filtering" not in sd.capabilities.get(fw, frozenset()):
            raise InvalidSystemDescription(f"firewall {fw} lacks the filtering capability")


# --- policy scopes over the declared universe ----------------------------------


def _entity_matches(constraints: dict[str, str], entity: dict[str, str]) -> bool:
    return all(entity.get(k) == str(v) for k, v in constraints.items())


def subject_entities(sd: SystemDescription) -> list[dict[str, str]]:
    """Concrete subjects: declared users, plus hosts addressable by ID."""
    entities = [dict(u.attrs) for u in sd.users]
    entities.extend({"ID": h.host_id} for h in sd.hosts)
    return entities


def object_entities(sd: SystemDescription) -> list[dict[str, str]]:
    out = []
    for h in sd.hosts:
        entity = {"ID": h.host_id}
        if h.type is not None:
            entity["Type"] = h.type
        if h.owner is not None:
            entity["Owner"] = h.owner
        out.append(entity)
    return out


def subject_scope(policy: AbstractPolicy, sd: SystemDescription) -> frozenset[str]:
    return frozenset(
        e["ID"] for e in subject_entities(sd) if _entity_matches(policy.subject, e)
    )


def object_scope(policy: AbstractPolicy, sd: SystemDescription) -> frozenset[str]:
    return frozenset(e["ID"] for e in object_entities(sd) if _entity_matches(policy.object, e))


def environment_scope(policy: AbstractPolicy, sd: SystemDescription) -> frozenset[int]:
    return frozenset(
        i for i, env in enumerate(sd.environments) if _entity_matches(policy.environment, env)
    )


# --- anomaly and conflict detection --------------------------------------------


@dataclass(frozen=True)
class AnomalyFinding:
    kind: str  # "equivalence" or "redundancy"
    policy_ids: tuple[str, str]  # redundancy: (subsumed, covering)
    detail: str


def _attrs_superset(narrow: AbstractPolicy, wide: AbstractPolicy) -> bool:
    """narrow carries every attribute condition wide has (so its scope is a subset)."""
    for element in ("subject", "object", "environment"):
        wide_attrs = getattr(normalize(wide), element)
        narrow_attrs = getattr(normalize(narrow), element)
        if any(narrow_attrs.get(k) != v for k, v in wide_attrs.items()):
            return False
    return True


def detect_policy_anomalies(policies: list[AbstractPolicy]) -> list[AnomalyFinding]:
    """Report equivalent policy pairs and redundant (subsumed) policies.

    Policy B is redundant next to A when both share action and effect and
    B's attribute conditions are a superset of A's: every entity B covers,
    A already covers. Detection is purely syntactic over normalized
    attribute maps, so it needs no system description.
    """
    findings = []
    for i in range(len(policies)):
        for j in range(i + 1, len(policies)):
            a, b = policies[i], policies[j]
            if a.action != b.action or a.effect != b.effect:
                continue
            if _scope_signature(a) == _scope_signature(b):
                findings.append(
                    AnomalyFinding(
                        "equivalence",
                        tuple(sorted((a.policy_id, b.policy_id))),
                        "policies are identical after normalization",
                    )
                )
                continue
            if _attrs_superset(b, a):
                findings.append(
                    AnomalyFinding(
                        "redundancy",
                        (b.policy_id, a.policy_id),
                        f"{b.policy_id} is subsumed by {a.policy_id}",
                    )
                )
            elif _attrs_superset(a, b):
                findings.append(
                    AnomalyFinding(
                        "redundancy",
                        (a.policy_id, b.policy_id),
                        f"{a.policy_id} is subsumed by {b.policy_id}",
                    )
                )
    findings.sort(key=lambda f: (f.kind, f.policy_ids))
    return findings


def detect_conflicts(
    policies: list[AbstractPolicy], sd: SystemDescription
) -> list[tuple[AbstractPolicy, AbstractPolicy]]:
    """Pairs with overlapping scope, equal action and opposite effects.

    Overlap is decided by enumerating the declared universe: the pair must
    share at least one concrete subject, one object and one environment.
    """
    conflicts = []
    scopes = {
        p.policy_id: (subject_scope(p, sd), object_scope(p, sd), environment_scope(p, sd))
        for p in policies
    }
    ordered = sorted(policies, key=lambda p: p.policy_id)
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            if a.action != b.action or a.effect == b.effect:
                continue
            sa, oa, ea = scopes[a.policy_id]
            sb, ob, eb = scopes[b.policy_id]
            if sa & sb and oa & ob and ea & eb:
                conflicts.append((a, b))
    return conflicts


# --- config document loading ----------------------------------------------------


def load_policies(doc: dict) -> list[AbstractPolicy]:
    return [
        AbstractPolicy(
            policy_id=entry["id"],
            subject={k: str(v) for k, v in entry.get("subject", {}).items()},
            action=entry.get("action", "reach"),
            object={k: str(v) for k, v in entry.get("object", {}).items()},
            environment={k: str(v) for k, v in entry.get("environment", {}).items()},
            effect=entry.get("effect", "permit"),
        )
        for entry in doc.get("policies", [])
    ]


def load_filtering_rule(entry: dict) -> FilteringRule:
    return FilteringRule(
        src_ip=str(entry["src_ip"]),
        src_port=str(entry.get("src_port", "*")),
        dst_ip=str(entry["dst_ip"]),
        dst_port=str(entry.get("dst_port", "*")),
        proto=entry.get("proto", "ANY"),
        action=entry["action"],
    )


def load_system_description(doc: dict) -> SystemDescription:
    hosts = [
        Host(
            host_id=h["id"],
            ips=tuple(h["ips"]),
            type=h.get("type"),
            owner=h.get("owner"),
        )
        for h in doc.get("hosts", [])
    ]
    capabilities: dict[str, frozenset[str]] = {}
    for h in doc.get("hosts", []):
        capabilities[h["id"]] = frozenset(h.get("capabilities", [])) | {"endpoint"}
    for d in doc.get("devices", []):
        capabilities[d["id"]] = frozenset(d.get("capabilities", []))
    services = [
        Service(s["host"], s["name"], s["proto"], tuple(int(p) for p in s["ports"]))
        for s in doc.get("services", [])
    ]
    topology = [(str(a), str(b)) for a, b in doc.get("topology", [])]
    firewalls = {
        fw: [load_filtering_rule(r) for r in rules] for fw, rules in doc.get("firewalls", {}).items()
    }
    universe = doc.get("universe", {})
    users = [
        User(attrs={k: str(v) for k, v in u.items() if k != "hosts"}, hosts=tuple(u.get("hosts", [])))
        for u in universe.get("users", [])
    ]
    environments = universe.get("environments") or [{}]
    client_ports = tuple(int(p) for p in universe.get("client_ports", [40000]))
    return SystemDescription(
        hosts=hosts,
        services=services,
        capabilities=capabilities,
        topology=topology,
        firewalls=firewalls,
        users=users,
        environments=[{k: str(v) for k, v in env.items()} for env in environments],
        client_ports=client_ports,
    )


def dump_system_description(sd: SystemDescription) -> dict:
    """Inverse of load_system_description (used by the reaction stage)."""
    host_ids = {h.host_id for h in sd.hosts}
    return {
        "hosts": [
            {
                "id": h.host_id,
                "ips": list(h.ips),
                **({"type": h.type} if h.type is not None else {}),
                **({"owner": h.owner} if h.owner is not None else {}),
                **(
                    {"capabilities": sorted(sd.capabilities[h.host_id] - {"endpoint"})}
                    if sd.capabilities[h.host_id] - {"endpoint"}
                    else {}
                ),
            }
            for h in sd.hosts
        ],
        "devices": [
            {"id": n, "capabilities": sorted(caps)}
            for n, caps in sorted(sd.capabilities.items())
            if n not in host_ids
        ],
        "services": [
            {"host": s.host_id, "name": s.name, "proto": s.proto, "ports": list(s.ports)}
            for s in sd.services
        ],
        "topology": [list(edge) for edge in sd.topology],
        "firewalls": {fw: [r.as_dict() for r in rules] for fw, rules in sorted(sd.firewalls.items())},
        "universe": {
            "users": [{**u.attrs, **({"hosts": list(u.hosts)} if u.hosts else {})} for u in sd.users],
            "environments": sd.environments,
            "client_ports": list(sd.client_ports),
        },
    }

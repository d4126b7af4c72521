"""Resilient event storage: threshold-signed, append-only alarm records.

Each alarm is hashed, signed by n logical signer nodes, combined once k
signature shares are in, and appended to a length-prefixed store file.
A dishonest share makes the optimistic combine fail; the combiner then
verifies every share, flags the corrupt senders and waits for honest
replacements. Alarms that never reach k honest shares go to a dead-letter
file instead of the store.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .events import Alarm, MalformedEvent, deserialize_alarm, serialize_alarm
from .thresholdsig import (
    CombineFailure,
    InsufficientShares,
    SecretShare,
    SignatureShare,
    ThresholdKeyMaterial,
    combine,
    node_sign,
    verify_complete,
    verify_share,
)

_LEN = struct.Struct(">I")


class QuorumUnreachable(RuntimeError):
    pass


class StoreCorrupt(ValueError):
    pass


@dataclass(frozen=True)
class SignedRecord:
    sequence: int
    alarm: Alarm
    signature: int
    corrupted_nodes: tuple[int, ...]
    key_id: str


def serialize_record(record: SignedRecord) -> bytes:
    """Canonical record payload; the alarm keeps its canonical byte form."""
    alarm_bytes = serialize_alarm(record.alarm).rstrip(b"\n")
    return (
        b'{"sequence":' + str(record.sequence).encode()
        + b',"alarm":' + alarm_bytes
        + b',"signature":"' + format(record.signature, "x").encode()
        + b'","corrupted_nodes":' + json.dumps(list(record.corrupted_nodes)).encode()
        + b',"key_id":"' + record.key_id.encode() + b'"}'
    )


def deserialize_record(payload: bytes) -> SignedRecord:
    """Strict inverse of serialize_record; any re-encoding drift is rejected."""
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreCorrupt(f"unreadable record: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != {
        "sequence",
        "alarm",
        "signature",
        "corrupted_nodes",
        "key_id",
    }:
        raise StoreCorrupt("record fields missing or unknown")
    try:
        alarm = deserialize_alarm(json.dumps(obj["alarm"], separators=(",", ":")))
    except MalformedEvent as exc:
        raise StoreCorrupt(f"bad alarm payload: {exc}") from exc
    try:
        record = SignedRecord(
            sequence=obj["sequence"],
            alarm=alarm,
            signature=int(obj["signature"], 16),
            corrupted_nodes=tuple(obj["corrupted_nodes"]),
            key_id=obj["key_id"],
        )
    except (TypeError, ValueError) as exc:
        raise StoreCorrupt(f"bad record field: {exc}") from exc
    if serialize_record(record) != payload:
        raise StoreCorrupt("record bytes are not in canonical form")
    return record


class AlarmStore:
    """Append-only file of length-prefixed signed records."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, record: SignedRecord) -> None:
        payload = serialize_record(record)
        with open(self.path, "ab") as fh:
            fh.write(_LEN.pack(len(payload)) + payload)

    def iter_payloads(self) -> Iterator[bytes]:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        offset = 0
        while offset < len(data):
            if offset + _LEN.size > len(data):
                raise StoreCorrupt("truncated length prefix")
            (length,) = _LEN.unpack_from(data, offset)
            offset += _LEN.size
            if offset + length > len(data):
                raise StoreCorrupt("truncated record body")
            yield data[offset : offset + length]
            offset += length

    def read_records(self) -> list[SignedRecord]:
        return [deserialize_record(p) for p in self.iter_payloads()]

    def next_sequence(self) -> int:
        return sum(1 for _ in self.iter_payloads())


# --- signing round -----------------------------------------------------------------


def run_signing_round(
    alarm: Alarm, shares: Iterable[SignatureShare], material: ThresholdKeyMaterial
) -> tuple[int, tuple[int, ...]]:
    """Combine incoming shares, flagging corrupt senders along the way.

    Optimistic path: combine the first k distinct-node shares unverified.
    If that fails, every held share is verified, corrupt nodes are flagged
    and excluded, and later arrivals are verified before admission. Raises
    QuorumUnreachable when the stream ends below threshold.
    """
    k = material.params.k
    accepted: dict[int, SignatureShare] = {}
    corrupted: set[int] = set()
    paranoid = False
    for share in shares:
        if share.node_id in corrupted or share.node_id in accepted:
            continue
        if paranoid and not verify_share(material, share, alarm):
            corrupted.add(share.node_id)
            continue
        accepted[share.node_id] = share
        if len(accepted) < k:
            continue
        try:
            signature = combine(accepted.values(), alarm, material)
            return signature, tuple(sorted(corrupted))
        except CombineFailure:
            paranoid = True
            for node_id, held in list(accepted.items()):
                if not verify_share(material, held, alarm):
                    corrupted.add(node_id)
                    del accepted[node_id]
    raise QuorumUnreachable(
        f"only {len(accepted)} honest shares, need {k}; corrupted={sorted(corrupted)}"
    )


# --- signer nodes with an injectable fault model --------------------------------------


@dataclass
class SignerNode:
    """In-process signer. fault: None, "corrupt", "silent" or "delay"."""

    share: SecretShare
    fault: Optional[str] = None

    @property
    def node_id(self) -> int:
        return self.share.node_id

    def produce(self, alarm: Alarm) -> Optional[SignatureShare]:
        if self.fault == "silent":
            return None
        honest = node_sign(self.share, alarm)
        if self.fault == "corrupt":
            return SignatureShare(
                node_id=honest.node_id,
                digest=honest.digest,
                value=honest.value ^ 4,
                proof=honest.proof,
                key_id=honest.key_id,
            )
        return honest


def arrival_order(nodes: list[SignerNode]) -> list[SignerNode]:
    """Node-id order with delayed nodes moved to the back."""
    prompt = [n for n in nodes if n.fault != "delay"]
    late = [n for n in nodes if n.fault == "delay"]
    return sorted(prompt, key=lambda n: n.node_id) + sorted(late, key=lambda n: n.node_id)


@dataclass
class ResilientStorage:
    """Signing nodes + combiner + append-only store + dead-letter log."""

    material: ThresholdKeyMaterial
    store: AlarmStore
    dead_letter_path: Path
    nodes: list[SignerNode] = field(default_factory=list)

    def __post_init__(self):
        self.dead_letter_path = Path(self.dead_letter_path)
        if not self.nodes:
            self.nodes = [SignerNode(share=s) for s in self.material.secret_shares]

    def process_alarm(self, alarm: Alarm) -> SignedRecord:
        stream = (
            share
            for node in arrival_order(self.nodes)
            if (share := node.produce(alarm)) is not None
        )
        try:
            signature, corrupted = run_signing_round(alarm, stream, self.material)
        except QuorumUnreachable:
            with open(self.dead_letter_path, "ab") as fh:
                fh.write(serialize_alarm(alarm))
            raise
        record = SignedRecord(
            sequence=self.store.next_sequence(),
            alarm=alarm,
            signature=signature,
            corrupted_nodes=corrupted,
            key_id=self.material.key_id,
        )
        self.store.append(record)
        return record


# --- audit -------------------------------------------------------------------------


@dataclass
class AuditReport:
    records_checked: int
    failures: tuple[dict, ...]

    @property
    def clean(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "records_checked": self.records_checked,
            "failures": list(self.failures),
            "clean": self.clean,
        }


def audit(store: AlarmStore, material: ThresholdKeyMaterial) -> AuditReport:
    """Re-verify every stored record; failures are report content, not errors."""
    failures = []
    checked = 0
    expected_seq = 0
    try:
        payloads = list(store.iter_payloads())
    except StoreCorrupt as exc:
        return AuditReport(records_checked=0, failures=({"sequence": None, "reason": str(exc)},))
    for index, payload in enumerate(payloads):
        checked += 1
        try:
            record = deserialize_record(payload)
        except StoreCorrupt as exc:
            failures.append({"sequence": index, "reason": str(exc)})
            continue
        if record.sequence != expected_seq:
            failures.append(
                {
                    "sequence": record.sequence,
                    "reason": f"sequence out of order (expected {expected_seq})",
                }
            )
        expected_seq = record.sequence + 1
        if record.key_id != material.key_id:
            failures.append({"sequence": record.sequence, "reason": "foreign key id"})
            continue
        if not verify_complete(material, record.signature, record.alarm):
            failures.append({"sequence": record.sequence, "reason": "signature does not verify"})
    return AuditReport(records_checked=checked, failures=tuple(failures))


__all__ = [
    "AlarmStore",
    "AuditReport",
    "CombineFailure",
    "InsufficientShares",
    "QuorumUnreachable",
    "ResilientStorage",
    "SignedRecord",
    "SignerNode",
    "StoreCorrupt",
    "arrival_order",
    "audit",
    "deserialize_record",
    "run_signing_round",
    "serialize_record",
]

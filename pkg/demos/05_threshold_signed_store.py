"""Sign alarms with a 3-of-4 threshold scheme and keep them in a tamper-evident store.

A trusted dealer splits the signing key into four shares; any three
signature shares combine into one ordinary RSA signature that verifies
under the public key. One signer is rigged to return garbage: the
combiner notices the bad combination, verifies the held shares, flags the
corrupt node by id, and finishes with the honest quorum. Flipping any
byte of the stored record afterwards makes the audit fail.
"""

import tempfile
from pathlib import Path

from siemflow.events import Alarm
from siemflow.storage import AlarmStore, ResilientStorage, SignerNode, audit
from siemflow.thresholdsig import ThresholdParams, dealer_keygen

ALARM = Alarm(
    alarm_id="alm-0001",
    rule_id="rule-bruteforce",
    timestamp=1704067540000,
    contributing_events=("ev-001", "ev-002", "ev-003", "ev-004", "ev-005"),
    description="repeated authentication failures [192.168.0.10, 192.168.0.20]",
    severity=8,
)


def main():
    material = dealer_keygen(ThresholdParams(n=4, k=3), bits=512, seed=42)
    print(f"key {material.key_id}: n=4 nodes, threshold k=3, "
          f"{material.modulus.bit_length()}-bit modulus")

    workdir = Path(tempfile.mkdtemp(prefix="signed-store-"))
    store = AlarmStore(workdir / "store.bin")
    nodes = [
        SignerNode(share=s, fault="corrupt" if s.node_id == 2 else None)
        for s in material.secret_shares
    ]
    vault = ResilientStorage(material, store, workdir / "dead_letter.jsonl", nodes)

    record = vault.process_alarm(ALARM)
    print(f"stored record #{record.sequence}, corrupted nodes flagged: "
          f"{list(record.corrupted_nodes)}")
    print(f"signature (truncated): {record.signature:x}"[:60] + "...")

    report = audit(store, material)
    print(f"audit: {report.records_checked} record(s), clean={report.clean}")

    blob = (workdir / "store.bin").read_bytes()
    damaged = bytearray(blob)
    damaged[len(blob) // 2] ^= 0xFF
    (workdir / "store.bin").write_bytes(bytes(damaged))
    report = audit(AlarmStore(workdir / "store.bin"), material)
    print(f"after flipping one byte: clean={report.clean}")
    for failure in report.failures:
        print(f"  failure: {failure}")


if __name__ == "__main__":
    main()

"""Threshold RSA signatures (Shoup-style) over canonical alarm bytes.

A trusted dealer splits a standard RSA signing key into n shares such
that any k of them assemble a signature verifiable with the ordinary RSA
public key; fewer than k never suffice. Shares ship with a discrete-log
equality proof so a combiner can pinpoint dishonest signers. Key sizes
here are test-scale: the target is protocol correctness, not security
margin.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import gmpy2

from .events import Alarm, serialize_alarm

PUBLIC_EXPONENT = 65537
DEFAULT_KEY_BITS = 512


class InvalidParams(ValueError):
    pass


class InsufficientShares(ValueError):
    pass


class CombineFailure(RuntimeError):
    pass


class MaterialMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdParams:
    n: int
    k: int

    def __post_init__(self):
        if not (isinstance(self.n, int) and isinstance(self.k, int)):
            raise InvalidParams("n and k must be integers")
        if self.n < 1 or self.k < 1 or self.k > self.n:
            raise InvalidParams(f"need 1 <= k <= n, got n={self.n} k={self.k}")
        if self.n >= PUBLIC_EXPONENT:
            raise InvalidParams("node count must stay below the public exponent")


@dataclass(frozen=True)
class SecretShare:
    """One node's signing share plus the public context needed to sign alone."""

    node_id: int  # 1-based; 0 is the secret itself and never dealt
    value: int
    modulus: int
    verification_base: int
    delta: int  # n! scaling used in share exponents
    key_id: str


@dataclass(frozen=True)
class SignatureShare:
    node_id: int
    digest: str  # hex of the alarm hash
    value: int
    proof: tuple[int, int]  # (z, c) discrete-log equality proof
    key_id: str


@dataclass(frozen=True)
class ThresholdKeyMaterial:
    params: ThresholdParams
    modulus: int
    public_exponent: int
    verification_base: int
    verification_shares: tuple[int, ...]  # v^{s_i}, 1-based node order
    secret_shares: tuple[SecretShare, ...]
    key_id: str

    def public(self) -> dict:
        """JSON-safe public half: enough to verify shares and signatures."""
        return {
            "n": self.params.n,
            "k": self.params.k,
            "modulus": str(self.modulus),
            "public_exponent": self.public_exponent,
            "verification_base": str(self.verification_base),
            "verification_shares": [str(v) for v in self.verification_shares],
            "key_id": self.key_id,
        }


def public_from_dict(doc: dict) -> ThresholdKeyMaterial:
    """Rebuild verification-only material (secret shares absent)."""
    return ThresholdKeyMaterial(
        params=ThresholdParams(int(doc["n"]), int(doc["k"])),
        modulus=int(doc["modulus"]),
        public_exponent=int(doc["public_exponent"]),
        verification_base=int(doc["verification_base"]),
        verification_shares=tuple(int(v) for v in doc["verification_shares"]),
        secret_shares=(),
        key_id=doc["key_id"],
    )


def _safe_prime(rng: random.Random, bits: int) -> tuple[int, int]:
    """(p, p') with p = 2p' + 1, both prime, p about `bits` bits."""
    while True:
        seed_val = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        p_small = gmpy2.next_prime(gmpy2.mpz(seed_val))
        p = 2 * p_small + 1
        if gmpy2.is_prime(p):
            return int(p), int(p_small)


def _key_id(modulus: int, e: int, v: int, v_shares: Iterable[int]) -> str:
    h = hashlib.sha256()
    h.update(str(modulus).encode())
    h.update(str(e).encode())
    h.update(str(v).encode())
    for share in v_shares:
        h.update(str(share).encode())
    return h.hexdigest()[:16]


def dealer_keygen(
    params: ThresholdParams, bits: int = DEFAULT_KEY_BITS, seed: Optional[int] = None
) -> ThresholdKeyMaterial:
    """Generate and split an RSA signing key; the private exponent is not kept.

    The modulus is a product of two safe primes so that share arithmetic
    happens in a group of known odd order m = p'q'. The secret exponent d
    is split with a degree k-1 polynomial over Z_m; share i is f(i).
    """
    if bits < 128:
        raise InvalidParams("modulus below 128 bits is not even a toy")
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    while True:
        p, p_small = _safe_prime(rng, bits // 2)
        q, q_small = _safe_prime(rng, bits // 2)
        if p != q:
            break
    modulus = p * q
    m = p_small * q_small
    e = PUBLIC_EXPONENT
    if math.gcd(e, m) != 1:  # e is prime, so this is vanishingly rare
        return dealer_keygen(params, bits, None if seed is None else seed + 1)
    d = pow(e, -1, m)
    coeffs = [d] + [rng.randrange(m) for _ in range(params.k - 1)]
    shares = [
        sum(c * pow(i, j, m) for j, c in enumerate(coeffs)) % m for i in range(1, params.n + 1)
    ]
    while True:
        r = rng.randrange(2, modulus - 1)
        if math.gcd(r, modulus) == 1:
            break
    v = pow(r, 2, modulus)
    v_shares = tuple(pow(v, s, modulus) for s in shares)
    delta = math.factorial(params.n)
    key_id = _key_id(modulus, e, v, v_shares)
    secret = tuple(
        SecretShare(
            node_id=i + 1,
            value=s,
            modulus=modulus,
            verification_base=v,
            delta=delta,
            key_id=key_id,
        )
        for i, s in enumerate(shares)
    )
    return ThresholdKeyMaterial(
        params=params,
        modulus=modulus,
        public_exponent=e,
        verification_base=v,
        verification_shares=v_shares,
        secret_shares=secret,
        key_id=key_id,
    )


def alarm_digest(alarm: Alarm) -> bytes:
    return hashlib.sha256(serialize_alarm(alarm)).digest()


def _digest_point(digest: bytes, modulus: int) -> int:
    return int.from_bytes(digest, "big") % modulus


def _proof_challenge(modulus, v, x_tilde, xi_sq, v_share, v_comm, x_comm) -> int:
    h = hashlib.sha256()
    for part in (modulus, v, x_tilde, xi_sq, v_share, v_comm, x_comm):
        h.update(str(part).encode())
        h.update(b"|")
    return int.from_bytes(h.digest(), "big")


def node_sign(share: SecretShare, alarm: Alarm) -> SignatureShare:
    """Deterministic signature share x^(2*delta*s_i) with a validity proof.

    The proof nonce is derived from the share secret and the digest, so
    re-signing the same alarm reproduces the share byte for byte.
    """
    digest = alarm_digest(alarm)
    n = share.modulus
    x = _digest_point(digest, n)
    value = pow(x, 2 * share.delta * share.value, n)
    x_tilde = pow(x, 4 * share.delta, n)
    v = share.verification_base
    v_share = pow(v, share.value, n)
    nonce_src = hashlib.shake_256(
        b"share-proof|" + share.key_id.encode() + b"|" + str(share.node_id).encode()
        + b"|" + str(share.value).encode() + b"|" + digest
    ).digest(256)
    r = int.from_bytes(nonce_src, "big") % (n * n << 512)
    v_comm = pow(v, r, n)
    x_comm = pow(x_tilde, r, n)
    c = _proof_challenge(n, v, x_tilde, pow(value, 2, n), v_share, v_comm, x_comm)
    z = r + share.value * c
    return SignatureShare(
        node_id=share.node_id,
        digest=digest.hex(),
        value=value,
        proof=(z, c),
        key_id=share.key_id,
    )


def verify_share(material: ThresholdKeyMaterial, share: SignatureShare, alarm: Alarm) -> bool:
    """Check a share's proof against the node's verification key share."""
    if share.key_id != material.key_id:
        raise MaterialMismatch("share was produced under a different key")
    if not 1 <= share.node_id <= material.params.n:
        return False
    digest = alarm_digest(alarm)
    if share.digest != digest.hex():
        return False
    n = material.modulus
    delta = math.factorial(material.params.n)
    x = _digest_point(digest, n)
    x_tilde = pow(x, 4 * delta, n)
    v = material.verification_base
    v_share = material.verification_shares[share.node_id - 1]
    z, c = share.proof
    if z < 0 or not 0 < share.value < n:
        return False
    try:
        v_comm = pow(v, z, n) * pow(v_share, -c, n) % n
        x_comm = pow(x_tilde, z, n) * pow(share.value, -2 * c, n) % n
    except ValueError:  # non-invertible values cannot come from honest shares
        return False
    return c == _proof_challenge(n, v, x_tilde, pow(share.value, 2, n), v_share, v_comm, x_comm)


def _lagrange_at_zero(subset: list[int], j: int, delta: int) -> int:
    """delta * l_j(0) over the integers; integral because delta = n!."""
    coeff = Fraction(delta)
    for other in subset:
        if other != j:
            coeff *= Fraction(other, other - j)
    assert coeff.denominator == 1
    return int(coeff)


def combine(
    shares: Iterable[SignatureShare], alarm: Alarm, material: ThresholdKeyMaterial
) -> int:
    """Assemble a standard RSA signature from k signature shares.

    Uses the k shares with the smallest node ids; the result is the unique
    RSA signature of the digest, so any honest k-subset yields the same
    value. A dishonest input surfaces as CombineFailure when the final
    verification fails.
    """
    digest = alarm_digest(alarm)
    by_node: dict[int, SignatureShare] = {}
    for share in shares:
        if share.key_id != material.key_id:
            raise MaterialMismatch("share was produced under a different key")
        if share.digest != digest.hex():
            raise CombineFailure(f"share from node {share.node_id} signs a different digest")
        by_node.setdefault(share.node_id, share)
    k = material.params.k
    if len(by_node) < k:
        raise InsufficientShares(f"have {len(by_node)} shares, need {k}")
    subset = sorted(by_node)[:k]
    n = material.modulus
    delta = math.factorial(material.params.n)
    x = _digest_point(digest, n)
    w = 1
    for j in subset:
        lam = _lagrange_at_zero(subset, j, delta)
        w = w * pow(by_node[j].value, 2 * lam, n) % n
    e_prime = 4 * delta * delta
    e = material.public_exponent
    g, a, b = _egcd(e_prime, e)
    assert g == 1
    signature = pow(w, a, n) * pow(x, b, n) % n
    if pow(signature, e, n) != x:
        raise CombineFailure("combined signature does not verify; some share is dishonest")
    return signature


def _egcd(a: int, b: int) -> tuple[int, int, int]:
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    return old_r, old_s, old_t


def verify_complete(material: ThresholdKeyMaterial, signature: int, alarm: Alarm) -> bool:
    """Ordinary RSA verification of a combined signature."""
    x = _digest_point(alarm_digest(alarm), material.modulus)
    return pow(signature, material.public_exponent, material.modulus) == x

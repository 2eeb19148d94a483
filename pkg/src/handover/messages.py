"""Protocol message payloads, their canonical codec, and the layered envelope.

An envelope is built sign-then-encrypt-then-wrap: the sender signs the
(nonce, payload) pair with its per-connection key, encrypts the signed bundle
to the endpoint's connection key, and wraps that together with the routing
header under the mediator's key.  The mediator learns the recipient and
nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

from . import crypto
from .credential import ProofPresentation, VerifiableCredential, vc_from_wire, vc_to_wire
from .encoding import EncodingError, decode_value, encode

PIN_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
TID_LEN = 16

# Field order is fixed per kind; it defines the canonical byte layout.
KIND_FIELDS: dict[str, tuple[tuple[str, str], ...]] = {
    "productSellingReq": (
        ("productCode", "str"),
        ("distributorID", "str"),
        ("ConnID", "str"),
        ("status", "str"),
        ("previouslySoldCount", "int"),
        ("firstPurchaseDate", "int"),
        ("lastPurchaseDate", "int"),
        ("email", "str"),
    ),
    "productSellingResp": (("tid", "str"),),
    "ownershipClaimReq": (("tid", "str"), ("pin", "opt_str"), ("key", "opt_bytes")),
    "ownershipClaimResp": (("credential", "vc"),),
    "ownershipClaimAck": (("status", "str"),),
    "PINReq": (("tid", "str"),),
    "PINResp": (("encryptedPin", "bytes"), ("tid", "str")),
    "ownershipTransferReq": (("productCode", "str"), ("encryptedPin", "bytes"), ("tid", "str")),
    "ownershipTransferResp": (("status", "str"),),
    "ownershipProofReq": (("attributes", "str_list"), ("challenge", "bytes")),
    "ownershipProofResp": (("presentation", "presentation"),),
    "pinChallengeReq": (("tid", "str"), ("challengeBy", "int"), ("challengeType", "str")),
    "pinChallengeResp": (("tid", "str"), ("challengeResult", "fraction")),
    "revokeVC": (("credentialId", "str"), ("productCode", "str")),
    "revokeVCResp": (("status", "str"),),
}

ALL_KINDS = tuple(KIND_FIELDS)
ACK_STATUSES = ("accepted", "rejected")
CHALLENGE_TYPES = ("+", "-", "*", "/")


class PayloadError(Exception):
    """Payload is malformed for its kind."""


class EnvelopeReject(Exception):
    """Envelope failed a mandatory check; ``reason`` is machine-readable."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class MessagePayload:
    kind: str
    body: dict


def mint_tid(rng: crypto.Rng) -> str:
    """Fresh tracking id, hex rendering of 16 random bytes."""
    return rng.token(TID_LEN).hex()


def mint_pin(rng: crypto.Rng) -> str:
    """Fresh 6-8 character alphanumeric PIN."""
    length = rng.randint(6, 8)
    return "".join(rng.choice(PIN_ALPHABET) for _ in range(length))


def is_valid_pin(value: str) -> bool:
    return 6 <= len(value) <= 8 and all(c in PIN_ALPHABET for c in value)


def payload(kind: str, **fields: Any) -> MessagePayload:
    """Build and validate a payload; raises :class:`PayloadError` on any mismatch."""
    p = MessagePayload(kind=kind, body=dict(fields))
    validate_payload(p)
    return p


def validate_payload(p: MessagePayload) -> None:
    spec = KIND_FIELDS.get(p.kind)
    if spec is None:
        raise PayloadError(f"unknown kind {p.kind!r}")
    names = [name for name, _ in spec]
    if sorted(p.body) != sorted(names):
        raise PayloadError(f"{p.kind}: expected fields {names}, got {sorted(p.body)}")
    for name, ftype in spec:
        value = p.body[name]
        if not _type_ok(ftype, value):
            raise PayloadError(f"{p.kind}.{name}: bad value {value!r} for {ftype}")
    if p.kind == "ownershipClaimReq":
        has_pin = p.body["pin"] is not None
        has_key = p.body["key"] is not None
        if has_pin == has_key:
            raise PayloadError("ownershipClaimReq carries exactly one of (pin, key)")
        if has_pin and not is_valid_pin(p.body["pin"]):
            raise PayloadError("ownershipClaimReq.pin is not a valid PIN")
    if p.kind in ("ownershipClaimAck", "ownershipTransferResp", "revokeVCResp"):
        if p.body["status"] not in ACK_STATUSES:
            raise PayloadError(f"{p.kind}.status must be one of {ACK_STATUSES}")
    if p.kind == "pinChallengeReq":
        if p.body["challengeType"] not in CHALLENGE_TYPES:
            raise PayloadError("pinChallengeReq.challengeType must be one of + - * /")
        if not 100 <= p.body["challengeBy"] <= 9999:
            raise PayloadError("pinChallengeReq.challengeBy must be a 3-4 digit integer")


def _type_ok(ftype: str, value: Any) -> bool:
    if ftype == "str":
        return isinstance(value, str)
    if ftype == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if ftype == "bytes":
        return isinstance(value, (bytes, bytearray))
    if ftype == "fraction":
        return isinstance(value, Fraction)
    if ftype == "str_list":
        return isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value)
    if ftype == "vc":
        return isinstance(value, VerifiableCredential)
    if ftype == "presentation":
        return isinstance(value, ProofPresentation)
    if ftype == "opt_str":
        return value is None or isinstance(value, str)
    if ftype == "opt_bytes":
        return value is None or isinstance(value, (bytes, bytearray))
    raise PayloadError(f"unknown field type {ftype}")


def _field_to_wire(ftype: str, value: Any) -> Any:
    if ftype == "vc":
        return vc_to_wire(value)
    if ftype == "presentation":
        return [
            vc_to_wire(value.credential),
            value.challenge_nonce,
            value.holder_did,
            value.presentation_signature,
        ]
    if ftype == "str_list":
        return list(value)
    if ftype in ("bytes", "opt_bytes") and value is not None:
        return bytes(value)
    return value


def _field_from_wire(ftype: str, value: Any) -> Any:
    if ftype == "vc":
        return vc_from_wire(value)
    if ftype == "presentation":
        wire_vc, nonce, holder_did, signature = value
        return ProofPresentation(
            credential=vc_from_wire(wire_vc),
            challenge_nonce=bytes(nonce),
            holder_did=str(holder_did),
            presentation_signature=bytes(signature),
        )
    if ftype == "str_list":
        return [str(v) for v in value]
    return value


def canonical_encode_payload(p: MessagePayload) -> bytes:
    """Deterministic, injective byte encoding; field order is fixed per kind."""
    validate_payload(p)
    spec = KIND_FIELDS[p.kind]
    values = [_field_to_wire(ftype, p.body[name]) for name, ftype in spec]
    return encode([p.kind] + values)


def decode_payload(data: bytes) -> MessagePayload:
    try:
        obj = decode_value(data)
    except EncodingError as exc:
        raise PayloadError(f"undecodable payload: {exc}") from exc
    if not isinstance(obj, list) or not obj or not isinstance(obj[0], str):
        raise PayloadError("payload is not a tagged list")
    kind = obj[0]
    spec = KIND_FIELDS.get(kind)
    if spec is None:
        raise PayloadError(f"unknown kind {kind!r}")
    if len(obj) != len(spec) + 1:
        raise PayloadError(f"{kind}: wrong field count")
    body = {name: _field_from_wire(ftype, raw) for (name, ftype), raw in zip(spec, obj[1:])}
    p = MessagePayload(kind=kind, body=body)
    validate_payload(p)
    return p


# -- envelopes -------------------------------------------------------------


@dataclass(frozen=True)
class Envelope:
    """Sealed wire unit; only the mediator can open the outer layer."""

    outer_ciphertext: bytes


@dataclass(frozen=True)
class InnerView:
    """Decrypted but *unverified* inner layer; payload stays opaque bytes."""

    sender_did: str
    nonce: bytes
    payload_bytes: bytes
    signature: bytes


def signing_bytes(nonce: bytes, payload_bytes: bytes) -> bytes:
    return encode(["msg", nonce, payload_bytes])


def seal(
    rng: crypto.Rng,
    sender_private_key: bytes,
    sender_did: str,
    endpoint_public_key: bytes,
    mediator_public_key: bytes,
    recipient_did: str,
    nonce: bytes,
    p: MessagePayload,
) -> Envelope:
    """Sign, encrypt to the endpoint, then wrap for the mediator."""
    payload_bytes = canonical_encode_payload(p)
    signature = crypto.sign(sender_private_key, signing_bytes(nonce, payload_bytes))
    inner_plain = encode(["inner", sender_did, nonce, payload_bytes, signature])
    inner_ct = crypto.asym_encrypt(rng, endpoint_public_key, inner_plain)
    outer_plain = encode(["route", recipient_did, inner_ct])
    return Envelope(outer_ciphertext=crypto.asym_encrypt(rng, mediator_public_key, outer_plain))


def unseal_at_mediator(mediator_private_key: bytes, envelope: Envelope) -> tuple[str, bytes]:
    """Unwrap the outer layer: (recipient DID, opaque inner ciphertext)."""
    plain = crypto.asym_decrypt(mediator_private_key, envelope.outer_ciphertext)
    try:
        tag, recipient_did, inner_ct = decode_value(plain)
    except (EncodingError, ValueError) as exc:
        raise crypto.DecryptError("malformed outer layer") from exc
    if tag != "route":
        raise crypto.DecryptError("malformed outer layer")
    return str(recipient_did), bytes(inner_ct)


def open_inner(endpoint_private_key: bytes, inner_ciphertext: bytes) -> InnerView:
    """Decrypt the inner layer; the payload is not decoded until verified."""
    plain = crypto.asym_decrypt(endpoint_private_key, inner_ciphertext)
    try:
        tag, sender_did, nonce, payload_bytes, signature = decode_value(plain)
    except (EncodingError, ValueError) as exc:
        raise crypto.DecryptError("malformed inner layer") from exc
    if tag != "inner":
        raise crypto.DecryptError("malformed inner layer")
    return InnerView(
        sender_did=str(sender_did),
        nonce=bytes(nonce),
        payload_bytes=bytes(payload_bytes),
        signature=bytes(signature),
    )


def verify_inner(view: InnerView, sender_public_key: bytes) -> tuple[bytes, MessagePayload]:
    """Check the sender signature, then (and only then) decode the payload."""
    if not crypto.verify(sender_public_key, signing_bytes(view.nonce, view.payload_bytes), view.signature):
        raise EnvelopeReject("bad-signature")
    return view.nonce, decode_payload(view.payload_bytes)


def unseal_at_endpoint(
    endpoint_private_key: bytes, sender_public_key: bytes, inner_ciphertext: bytes
) -> tuple[bytes, MessagePayload]:
    """Open and verify in one step, for callers that already know the sender."""
    return verify_inner(open_inner(endpoint_private_key, inner_ciphertext), sender_public_key)


# -- replay and nonce-echo discipline ---------------------------------------


class ReplayGuard:
    """Per-connection cache of consumed (nonce, kind) pairs."""

    def __init__(self) -> None:
        self._consumed: set[tuple[bytes, str]] = set()

    def register(self, nonce: bytes, kind: str) -> bool:
        """Consume the pair; False means it was already seen (replay)."""
        item = (bytes(nonce), kind)
        if item in self._consumed:
            return False
        self._consumed.add(item)
        return True

    def seen(self, nonce: bytes, kind: str) -> bool:
        return (bytes(nonce), kind) in self._consumed

    def dump(self) -> list[str]:
        return sorted(f"{nonce.hex()}:{kind}" for nonce, kind in self._consumed)


@dataclass
class NonceSession:
    """One outstanding exchange: the nonce we expect echoed back.

    ``nonce=None`` accepts any fresh nonce (used for offers whose nonce the
    peer mints, e.g. the credential offer that closes a used-product claim).
    A session validates successfully exactly once.
    """

    nonce: Optional[bytes]
    context: dict = field(default_factory=dict)
    consumed: bool = False


def validate_nonce_echo(session: NonceSession, received_nonce: bytes) -> bool:
    """Accept iff the echo matches and the session was not already consumed."""
    if session.consumed:
        return False
    if session.nonce is not None and bytes(received_nonce) != session.nonce:
        return False
    session.consumed = True
    return True

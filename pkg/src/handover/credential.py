"""Verifiable credential lifecycle: schema, issuance, presentation, and
verification with a registry-backed revocation check.

Credentials are plain signed attribute bundles over a canonical byte encoding;
presentations bind a credential to a verifier-chosen challenge nonce so they
cannot be replayed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import crypto
from .encoding import encode
from .registry import VerifiableDataRegistry

PRODUCT_ATTRIBUTE_NAMES = (
    "productCode",
    "distributorID",
    "ConnID",
    "status",
    "previouslySoldCount",
    "firstPurchaseDate",
    "lastPurchaseDate",
    "email",
)

PRODUCT_SCHEMA_ID = "product-ownership-v1"


class CredentialError(Exception):
    pass


class SchemaMismatchError(CredentialError):
    """Attributes do not exactly match the schema."""


class UnpublishedDefinitionError(CredentialError):
    """Credential definition is not on the registry."""


@dataclass(frozen=True)
class CredentialSchema:
    schema_id: str
    attribute_names: tuple[str, ...]


@dataclass(frozen=True)
class CredentialDefinition:
    cred_def_id: str
    schema_id: str
    issuer_did: str
    issuer_public_key: bytes


@dataclass(frozen=True)
class VerifiableCredential:
    credential_id: str
    cred_def_id: str
    attributes: tuple[tuple[str, str], ...]
    issuer_signature: bytes
    revocation_registry_id: str
    issued_at: int

    def attribute(self, name: str) -> str:
        for key, value in self.attributes:
            if key == name:
                return value
        raise KeyError(name)


@dataclass(frozen=True)
class ProofRequest:
    requested_attribute_names: tuple[str, ...]
    challenge_nonce: bytes


@dataclass(frozen=True)
class ProofPresentation:
    credential: VerifiableCredential
    challenge_nonce: bytes
    holder_did: str
    presentation_signature: bytes


@dataclass(frozen=True)
class VerificationReport:
    valid: bool
    reasons: tuple[str, ...]


def product_schema() -> CredentialSchema:
    return CredentialSchema(PRODUCT_SCHEMA_ID, PRODUCT_ATTRIBUTE_NAMES)


def vc_to_wire(vc: VerifiableCredential) -> list:
    return [
        vc.credential_id,
        vc.cred_def_id,
        [[name, value] for name, value in vc.attributes],
        vc.issuer_signature,
        vc.revocation_registry_id,
        vc.issued_at,
    ]


def vc_from_wire(obj: Sequence) -> VerifiableCredential:
    credential_id, cred_def_id, attrs, signature, registry_id, issued_at = obj
    return VerifiableCredential(
        credential_id=str(credential_id),
        cred_def_id=str(cred_def_id),
        attributes=tuple((str(n), str(v)) for n, v in attrs),
        issuer_signature=bytes(signature),
        revocation_registry_id=str(registry_id),
        issued_at=int(issued_at),
    )


def credential_signing_bytes(credential_id: str, cred_def_id: str, attributes: Sequence[tuple[str, str]]) -> bytes:
    return encode(["vc", credential_id, cred_def_id, [[n, v] for n, v in attributes]])


def make_credential_id(cred_def_id: str, attributes: Sequence[tuple[str, str]], issued_at: int) -> str:
    material = encode([cred_def_id, [[n, v] for n, v in attributes], issued_at])
    return "vc-" + hashlib.sha256(material).hexdigest()[:24]


def generate_vc(
    attributes: Mapping[str, object],
    schema: CredentialSchema,
    cred_def: CredentialDefinition,
    issuer_private_key: bytes,
    revocation_registry_id: str,
    issued_at: int,
    vdr: VerifiableDataRegistry,
) -> VerifiableCredential:
    """Issue a credential over ``attributes``; names must match the schema exactly."""
    if vdr.find_cred_def(cred_def.cred_def_id) is None:
        raise UnpublishedDefinitionError(cred_def.cred_def_id)
    missing = [n for n in schema.attribute_names if n not in attributes]
    extra = [n for n in attributes if n not in schema.attribute_names]
    if missing or extra:
        raise SchemaMismatchError(f"missing={missing} extra={extra}")
    ordered = tuple((name, str(attributes[name])) for name in schema.attribute_names)
    credential_id = make_credential_id(cred_def.cred_def_id, ordered, issued_at)
    signature = crypto.sign(
        issuer_private_key, credential_signing_bytes(credential_id, cred_def.cred_def_id, ordered)
    )
    return VerifiableCredential(
        credential_id=credential_id,
        cred_def_id=cred_def.cred_def_id,
        attributes=ordered,
        issuer_signature=signature,
        revocation_registry_id=revocation_registry_id,
        issued_at=issued_at,
    )


def presentation_signing_bytes(vc: VerifiableCredential, challenge_nonce: bytes, holder_did: str) -> bytes:
    return encode(["vp", vc_to_wire(vc), challenge_nonce, holder_did])


def present_proof(
    vc: VerifiableCredential, challenge_nonce: bytes, holder_did: str, holder_private_key: bytes
) -> ProofPresentation:
    """Wrap a credential in a presentation bound to ``challenge_nonce``."""
    signature = crypto.sign(holder_private_key, presentation_signing_bytes(vc, challenge_nonce, holder_did))
    return ProofPresentation(
        credential=vc,
        challenge_nonce=bytes(challenge_nonce),
        holder_did=holder_did,
        presentation_signature=signature,
    )


def verify_credential_signature(vc: VerifiableCredential, vdr: VerifiableDataRegistry) -> tuple[bool, str]:
    """Check the issuer signature against the registry-resolved issuer key."""
    cred_def = vdr.find_cred_def(vc.cred_def_id)
    if cred_def is None:
        return False, "unknown-issuer"
    doc = vdr.resolve_did(cred_def["issuer_did"])
    if doc is None:
        return False, "unknown-issuer"
    ok = crypto.verify(
        doc.verification_key,
        credential_signing_bytes(vc.credential_id, vc.cred_def_id, vc.attributes),
        vc.issuer_signature,
    )
    return (True, "") if ok else (False, "bad-issuer-sig")


def verify_presentation(
    presentation: ProofPresentation,
    expected_nonce: bytes,
    vdr: VerifiableDataRegistry,
    holder_public_key: bytes,
) -> VerificationReport:
    """Full verification: issuer signature, holder binding, nonce echo, revocation.

    Never raises; failures accumulate in ``reasons``.
    """
    reasons: list[str] = []
    ok, reason = verify_credential_signature(presentation.credential, vdr)
    if not ok:
        reasons.append(reason)
    holder_ok = crypto.verify(
        holder_public_key,
        presentation_signing_bytes(
            presentation.credential, presentation.challenge_nonce, presentation.holder_did
        ),
        presentation.presentation_signature,
    )
    if not holder_ok:
        reasons.append("bad-holder-sig")
    if presentation.challenge_nonce != expected_nonce:
        reasons.append("nonce-mismatch")
    if vdr.is_revoked(presentation.credential.credential_id):
        reasons.append("revoked")
    return VerificationReport(valid=not reasons, reasons=tuple(reasons))

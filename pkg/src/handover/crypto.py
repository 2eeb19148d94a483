"""Cryptographic toolkit: seeded randomness, key pairs, signatures, hybrid and
symmetric authenticated encryption, nonces, and DID derivation.

Every random draw goes through an injected :class:`Rng` handle so that a whole
simulation run is reproducible from a single seed.  Key pairs bundle an
Ed25519 signing key with an X25519 key-agreement key so one opaque public key
supports both signing and encryption.
"""

from __future__ import annotations

import base64
import hashlib
import random
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

NONCE_LEN = 16
SYM_KEY_LEN = 32
KEY_LEN = 64  # ed25519 half || x25519 half
SIGNATURE_LEN = 64
_GCM_IV_LEN = 12
_GCM_TAG_LEN = 16
_HYBRID_OVERHEAD = 32 + _GCM_IV_LEN + _GCM_TAG_LEN

DID_METHOD = "handover"


class CryptoError(Exception):
    """Base class for failures in this module."""


class KeyFormatError(CryptoError):
    """Key material has the wrong length or structure."""


class DecryptError(CryptoError):
    """Ciphertext failed authentication or is structurally invalid."""


class Rng:
    """Deterministic byte/number source; one per simulation world.

    Not a CSPRNG: determinism under a fixed seed is the point, so adversarial
    scenarios replay bit-exactly.
    """

    def __init__(self, seed: int | None = None) -> None:
        self._inner = random.Random(seed)

    def token(self, n: int) -> bytes:
        return self._inner.randbytes(n)

    def randint(self, lo: int, hi: int) -> int:
        return self._inner.randint(lo, hi)

    def choice(self, seq):
        return self._inner.choice(seq)


class KeyPurpose(Enum):
    CONNECTION = "connection"
    DID_ROOT = "did-root"


@dataclass(frozen=True)
class KeyPair:
    """Signing + key-agreement pair; both halves are raw 32-byte keys."""

    public_key: bytes
    private_key: bytes
    purpose: KeyPurpose = KeyPurpose.CONNECTION


@dataclass(frozen=True)
class SymmetricKey:
    key_bytes: bytes

    def __post_init__(self) -> None:
        if len(self.key_bytes) != SYM_KEY_LEN:
            raise KeyFormatError(f"symmetric key must be {SYM_KEY_LEN} bytes")


@dataclass(frozen=True)
class Did:
    """Decentralised identifier derived from a verification key."""

    method: str
    identifier: str
    verification_key: bytes

    @property
    def uri(self) -> str:
        return f"did:{self.method}:{self.identifier}"


def generate_keypair(rng: Rng, purpose: KeyPurpose = KeyPurpose.CONNECTION) -> KeyPair:
    """Generate a fresh dual-purpose key pair from the injected RNG."""
    ed_seed = rng.token(32)
    x_seed = rng.token(32)
    ed_pub = Ed25519PrivateKey.from_private_bytes(ed_seed).public_key().public_bytes_raw()
    x_pub = X25519PrivateKey.from_private_bytes(x_seed).public_key().public_bytes_raw()
    return KeyPair(public_key=ed_pub + x_pub, private_key=ed_seed + x_seed, purpose=purpose)


def _check_key(key: bytes, what: str) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_LEN:
        raise KeyFormatError(f"{what} must be {KEY_LEN} bytes, got {len(key) if isinstance(key, (bytes, bytearray)) else type(key)}")


def sign(private_key: bytes, message: bytes) -> bytes:
    """Sign ``message``; the signature verifies only under the matching public key."""
    _check_key(private_key, "private key")
    if not message:
        raise ValueError("refusing to sign an empty message")
    return Ed25519PrivateKey.from_private_bytes(private_key[:32]).sign(bytes(message))


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Return True iff ``signature`` is valid for ``message`` under ``public_key``."""
    _check_key(public_key, "public key")
    try:
        Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(bytes(signature), bytes(message))
        return True
    except (InvalidSignature, ValueError):
        return False


def _hybrid_key(shared: bytes, eph_pub: bytes, recipient_pub_half: bytes) -> bytes:
    return hashlib.sha256(b"handover/hybrid-v1" + shared + eph_pub + recipient_pub_half).digest()


def asym_encrypt(rng: Rng, public_key: bytes, plaintext: bytes) -> bytes:
    """Hybrid encryption: ephemeral X25519 agreement wrapping an AES-GCM payload.

    Output layout: ephemeral public key (32) || IV (12) || ciphertext+tag.
    """
    _check_key(public_key, "public key")
    recipient_half = public_key[32:]
    eph_priv = X25519PrivateKey.from_private_bytes(rng.token(32))
    eph_pub = eph_priv.public_key().public_bytes_raw()
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(recipient_half))
    key = _hybrid_key(shared, eph_pub, recipient_half)
    iv = rng.token(_GCM_IV_LEN)
    return eph_pub + iv + AESGCM(key).encrypt(iv, bytes(plaintext), None)


def asym_decrypt(private_key: bytes, ciphertext: bytes) -> bytes:
    """Invert :func:`asym_encrypt`; raises :class:`DecryptError` on any tampering."""
    _check_key(private_key, "private key")
    if len(ciphertext) < _HYBRID_OVERHEAD:
        raise DecryptError("ciphertext truncated")
    eph_pub, iv, body = ciphertext[:32], ciphertext[32:44], ciphertext[44:]
    priv = X25519PrivateKey.from_private_bytes(private_key[32:])
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        recipient_half = priv.public_key().public_bytes_raw()
        key = _hybrid_key(shared, eph_pub, recipient_half)
        return AESGCM(key).decrypt(iv, bytes(body), None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptError("authentication failed") from exc


def generate_symmetric_key(rng: Rng) -> SymmetricKey:
    return SymmetricKey(rng.token(SYM_KEY_LEN))


def sym_encrypt(rng: Rng, key: SymmetricKey, plaintext: bytes) -> bytes:
    """AES-GCM with a fresh IV per call: IV (12) || ciphertext+tag."""
    iv = rng.token(_GCM_IV_LEN)
    return iv + AESGCM(key.key_bytes).encrypt(iv, bytes(plaintext), None)


def sym_decrypt(key: SymmetricKey, ciphertext: bytes) -> bytes:
    if len(ciphertext) < _GCM_IV_LEN + _GCM_TAG_LEN:
        raise DecryptError("ciphertext truncated")
    try:
        return AESGCM(key.key_bytes).decrypt(ciphertext[:_GCM_IV_LEN], bytes(ciphertext[_GCM_IV_LEN:]), None)
    except InvalidTag as exc:
        raise DecryptError("authentication failed") from exc


def fresh_nonce(rng: Rng) -> bytes:
    """Draw a fresh 16-byte nonce; collisions are negligible at simulation scale."""
    return rng.token(NONCE_LEN)


def derive_did(verification_key: bytes) -> Did:
    """Derive the DID for a verification key; re-derivation always matches."""
    _check_key(verification_key, "verification key")
    digest = hashlib.sha256(verification_key).digest()[:20]
    identifier = base64.b32encode(digest).decode("ascii").lower().rstrip("=")
    return Did(method=DID_METHOD, identifier=identifier, verification_key=bytes(verification_key))

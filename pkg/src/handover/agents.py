"""Entity state machines: manufacturer, distributor, and wallet agents.

Each agent consumes one delivery event at a time from the scheduler and holds
isolated state; everything an agent ever learns arrives through a channel.
Handlers return a machine-readable verdict string that the simulator writes
into the trace (``accepted`` or ``rejected:<reason>``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import crypto, messages, simnet
from .credential import (
    CredentialDefinition,
    CredentialSchema,
    VerifiableCredential,
    credential_signing_bytes,
    generate_vc,
    make_credential_id,
    present_proof,
    product_schema,
    verify_credential_signature,
    verify_presentation,
)
from .crypto import KeyPurpose, SymmetricKey
from .messages import (
    CHALLENGE_TYPES,
    EnvelopeReject,
    MessagePayload,
    NonceSession,
    PayloadError,
    ReplayGuard,
    is_valid_pin,
    mint_pin,
    mint_tid,
    payload,
    seal,
    validate_nonce_echo,
)

# Kinds that answer an exchange this agent opened; they must match an open
# nonce session.  Everything else is a fresh request guarded by TID/state.
RESPONSE_KINDS = frozenset(
    {
        "ownershipClaimResp",
        "ownershipClaimAck",
        "PINResp",
        "ownershipTransferResp",
        "ownershipProofReq",
        "ownershipProofResp",
        "pinChallengeReq",
        "pinChallengeResp",
        "revokeVCResp",
    }
)


class AgentActionError(Exception):
    """A locally-initiated action cannot start (missing state, no connection)."""


class PinFormatError(ValueError):
    """PIN contains characters outside [A-Z0-9] or has a bad length."""


def pin_numeric(pin: str) -> int:
    """Base-36 positional value of a PIN, most significant character first."""
    if not is_valid_pin(pin):
        raise PinFormatError(pin)
    return int(pin, 36)


def evaluate_challenge(pin_value: int, challenge_by: int, challenge_type: str) -> Fraction:
    """Exact rational result of (PIN value <op> challengeBy); PIN is the left operand."""
    if not 100 <= challenge_by <= 9999:
        raise ValueError("challengeBy must be a 3-4 digit positive integer")
    if challenge_type == "+":
        return Fraction(pin_value + challenge_by)
    if challenge_type == "-":
        return Fraction(pin_value - challenge_by)
    if challenge_type == "*":
        return Fraction(pin_value * challenge_by)
    if challenge_type == "/":
        return Fraction(pin_value, challenge_by)
    raise ValueError(f"unknown challenge type {challenge_type!r}")


@dataclass
class Connection:
    """One side of a pairwise SSI connection; keys are unique per connection."""

    conn_id: str
    local: crypto.KeyPair
    remote_public_key: bytes
    remote_did: str
    remote_agent_id: str
    replay: ReplayGuard = field(default_factory=ReplayGuard)

    def dump(self) -> dict:
        return {
            "connId": self.conn_id,
            "localPublicKey": self.local.public_key.hex(),
            "localPrivateKey": self.local.private_key.hex(),
            "remotePublicKey": self.remote_public_key.hex(),
            "remoteDid": self.remote_did,
            "remoteAgent": self.remote_agent_id,
            "replayCache": self.replay.dump(),
        }


@dataclass
class ProductRecord:
    """Manufacturer-side state of one product."""

    product_code: str
    distributor_id: str = ""
    conn_id: str = ""
    status: str = "registered"
    previously_sold_count: int = 0
    first_purchase_date: int = 0
    last_purchase_date: int = 0
    email: str = ""
    current_credential_id: Optional[str] = None

    def to_attributes(self) -> dict:
        return {
            "productCode": self.product_code,
            "distributorID": self.distributor_id,
            "ConnID": self.conn_id,
            "status": self.status,
            "previouslySoldCount": self.previously_sold_count,
            "firstPurchaseDate": self.first_purchase_date,
            "lastPurchaseDate": self.last_purchase_date,
            "email": self.email,
        }

    def dump(self) -> dict:
        d = {k: str(v) if not isinstance(v, int) else v for k, v in self.to_attributes().items()}
        d["currentCredentialId"] = self.current_credential_id
        return d


@dataclass
class ClaimantAttribute:
    """Manufacturer-side pending claim: at most one per product code.

    A used-product entry becomes claimable only once the seller's ownership
    proof has verified (``authorized``); until then the buyer's claim is
    rejected even with a matching TID.
    """

    product_code: str
    tid: str
    form: str  # "new" (tid+pin sale) | "used" (tid+encrypted pin transfer)
    pin: Optional[str] = None
    encrypted_pin: Optional[bytes] = None
    key: Optional[SymmetricKey] = None
    challenge_by: Optional[int] = None
    challenge_type: Optional[str] = None
    authorized: bool = False

    def dump(self) -> dict:
        return {
            "productCode": self.product_code,
            "tid": self.tid,
            "form": self.form,
            "pin": self.pin,
            "encryptedPin": self.encrypted_pin.hex() if self.encrypted_pin else None,
            "key": self.key.key_bytes.hex() if self.key else None,
            "challengeBy": self.challenge_by,
            "challengeType": self.challenge_type,
            "authorized": self.authorized,
        }


@dataclass
class OwnershipClaimingData:
    """Wallet-side record of one sale or purchase in progress.

    On a selling wallet only the PIN ciphertext is ever present; the plaintext
    PIN and the symmetric key exist solely on the buying side.
    """

    role: str  # "buying" | "selling"
    tid: str
    counterparty_conn: str
    product_code: Optional[str] = None
    pin: Optional[str] = None
    key: Optional[SymmetricKey] = None
    encrypted_pin: Optional[bytes] = None

    def dump(self) -> dict:
        return {
            "role": self.role,
            "tid": self.tid,
            "counterpartyConn": self.counterparty_conn,
            "productCode": self.product_code,
            "pin": self.pin,
            "key": self.key.key_bytes.hex() if self.key else None,
            "encryptedPin": self.encrypted_pin.hex() if self.encrypted_pin else None,
        }


class Agent:
    """Base agent: connection management, envelope plumbing, replay discipline."""

    HANDLERS: dict[str, str] = {}
    ROLE = "agent"

    def __init__(self, agent_id: str, world: "simnet.World") -> None:
        self.agent_id = agent_id
        self.world = world
        self.rng = world.rng
        self.online = True
        self.root_keys = crypto.generate_keypair(self.rng, KeyPurpose.DID_ROOT)
        self.did = crypto.derive_did(self.root_keys.public_key)
        self.email = f"{agent_id.lower()}@mail.local"
        self.connections: dict[str, Connection] = {}
        self.connections_by_id: dict[str, Connection] = {}
        self.inbox: list[simnet.OobMessage] = []
        self._expected: dict[tuple[str, str, str], NonceSession] = {}
        self._direct_expected: dict[tuple[str, str, str], NonceSession] = {}
        world.register_agent(self)

    # -- wiring ----------------------------------------------------------

    def add_connection(self, conn: Connection) -> None:
        old = self.connections.get(conn.remote_did)
        if old is not None:
            self.connections_by_id.pop(old.conn_id, None)
        self.connections[conn.remote_did] = conn
        self.connections_by_id[conn.conn_id] = conn

    def connection_with(self, remote_did: str) -> Connection:
        conn = self.connections.get(remote_did)
        if conn is None:
            raise AgentActionError(f"{self.agent_id} has no connection with {remote_did}")
        return conn

    def send(self, conn: Connection, nonce: bytes, p: MessagePayload) -> None:
        env = seal(
            self.rng,
            conn.local.private_key,
            self.did.uri,
            conn.remote_public_key,
            self.world.mediator_public_key(),
            conn.remote_did,
            nonce,
            p,
        )
        self.world.send_envelope(self.agent_id, env, p.kind)

    def expect(self, conn: Connection, kind: str, nonce: Optional[bytes], context: dict | None = None) -> None:
        key = (conn.conn_id, kind, nonce.hex() if nonce is not None else "*")
        self._expected[key] = NonceSession(nonce=nonce, context=dict(context or {}))

    def drop_expectation(self, conn: Connection, kind: str, nonce: Optional[bytes]) -> None:
        self._expected.pop((conn.conn_id, kind, nonce.hex() if nonce is not None else "*"), None)

    def _take_session(self, conn: Connection, kind: str, nonce: bytes) -> Optional[NonceSession]:
        exact = (conn.conn_id, kind, nonce.hex())
        session = self._expected.get(exact)
        if session is not None and validate_nonce_echo(session, nonce):
            del self._expected[exact]
            return session
        wildcard = (conn.conn_id, kind, "*")
        session = self._expected.get(wildcard)
        if session is not None and validate_nonce_echo(session, nonce):
            del self._expected[wildcard]
            return session
        return None

    # -- inbound dispatch --------------------------------------------------

    def deliver(self, event: "simnet.DeliveryEvent") -> str:
        if event.channel == simnet.CHANNEL_OOB:
            self.inbox.append(event.body)
            return "delivered"
        if event.channel == simnet.CHANNEL_HTTPS:
            return self._handle_direct(event.frm, event.body)
        if event.channel == simnet.CHANNEL_SSI:
            return self._handle_ssi(event.body)
        return "rejected:unknown-channel"

    def _handle_ssi(self, inner_ciphertext: bytes) -> str:
        view = None
        for conn in self.connections.values():
            try:
                view = messages.open_inner(conn.local.private_key, inner_ciphertext)
                break
            except crypto.DecryptError:
                continue
        if view is None:
            return "rejected:decrypt-error"
        sender_conn = self.connections.get(view.sender_did)
        if sender_conn is None:
            return "rejected:unknown-sender"
        try:
            nonce, p = messages.verify_inner(view, sender_conn.remote_public_key)
        except EnvelopeReject as exc:
            return f"rejected:{exc.reason}"
        except PayloadError:
            return "rejected:malformed-payload"
        if not sender_conn.replay.register(nonce, p.kind):
            return "rejected:replay"
        session = None
        if p.kind in RESPONSE_KINDS:
            session = self._take_session(sender_conn, p.kind, nonce)
            if session is None:
                return "rejected:nonce-mismatch"
        return self.handle_payload(sender_conn, nonce, p, session)

    def handle_payload(
        self, conn: Connection, nonce: bytes, p: MessagePayload, session: Optional[NonceSession]
    ) -> str:
        name = self.HANDLERS.get(p.kind)
        if name is None:
            return "rejected:unexpected-kind"
        return getattr(self, name)(conn, nonce, p, session)

    def _handle_direct(self, frm: str, dm: "simnet.DirectMessage") -> str:
        return "rejected:unexpected-kind"

    # -- introspection -----------------------------------------------------

    def state_dump(self) -> dict:
        return {
            "agentId": self.agent_id,
            "role": self.ROLE,
            "did": self.did.uri,
            "online": self.online,
            "email": self.email,
            "connections": {did: conn.dump() for did, conn in sorted(self.connections.items())},
            "expectations": sorted(f"{c}:{k}:{n}" for c, k, n in self._expected),
            "inbox": [{"subject": m.subject, "fields": dict(sorted(m.fields.items()))} for m in self.inbox],
        }


def establish_connection(inviter: Agent, invitee: Agent) -> tuple[Connection, Connection]:
    """Create matching pairwise connection state on both agents.

    Models the QR invitation plus handshake; each acceptance mints fresh keys
    on both sides, so replaying an invitation never recovers old traffic.
    """
    world = inviter.world
    conn_id = world.rng.token(8).hex()
    inviter_keys = crypto.generate_keypair(world.rng, KeyPurpose.CONNECTION)
    invitee_keys = crypto.generate_keypair(world.rng, KeyPurpose.CONNECTION)
    inviter.add_connection(
        Connection(conn_id, inviter_keys, invitee_keys.public_key, invitee.did.uri, invitee.agent_id)
    )
    invitee.add_connection(
        Connection(conn_id, invitee_keys, inviter_keys.public_key, inviter.did.uri, inviter.agent_id)
    )
    world.emit(
        channel=simnet.CHANNEL_CONTROL,
        kind="connection-established",
        frm=inviter.agent_id,
        to=invitee.agent_id,
        verdict="ok",
        meta={"connId": conn_id},
    )
    return inviter.connections[invitee.did.uri], invitee.connections[inviter.did.uri]


class ManufacturerAgent(Agent):
    """Issuer and verifier: owns the product catalog and the claimant list."""

    ROLE = "manufacturer"
    HANDLERS = {
        "ownershipClaimReq": "_on_ownership_claim_req",
        "ownershipTransferReq": "_on_ownership_transfer_req",
        "ownershipProofResp": "_on_ownership_proof_resp",
        "pinChallengeResp": "_on_pin_challenge_resp",
        "revokeVCResp": "_on_revoke_vc_resp",
        "ownershipClaimAck": "_on_ownership_claim_ack",
    }

    def __init__(self, agent_id: str, world: "simnet.World") -> None:
        super().__init__(agent_id, world)
        self.schema: CredentialSchema = product_schema()
        self.cred_def = CredentialDefinition(
            cred_def_id=f"creddef:{self.did.uri}:{self.schema.schema_id}",
            schema_id=self.schema.schema_id,
            issuer_did=self.did.uri,
            issuer_public_key=self.root_keys.public_key,
        )
        self.revocation_registry_id = f"revreg:{self.did.uri}:{self.schema.schema_id}"
        vdr = world.registry
        vdr.publish_schema(self.schema.schema_id, self.schema.attribute_names, self.did.uri)
        vdr.publish_cred_def(
            self.cred_def.cred_def_id, self.schema.schema_id, self.did.uri, self.root_keys.public_key
        )
        vdr.create_revocation_registry(self.revocation_registry_id, self.did.uri)
        self.products: dict[str, ProductRecord] = {}
        self.claimants: dict[str, ClaimantAttribute] = {}

    def add_product(self, product_code: str) -> ProductRecord:
        record = ProductRecord(product_code=product_code)
        self.products[product_code] = record
        return record

    def _claimant_by_tid(self, tid: str, form: str) -> Optional[ClaimantAttribute]:
        for claim in self.claimants.values():
            if claim.tid == tid and claim.form == form:
                return claim
        return None

    def _issue(self, product: ProductRecord) -> VerifiableCredential:
        vc = generate_vc(
            product.to_attributes(),
            self.schema,
            self.cred_def,
            self.root_keys.private_key,
            self.revocation_registry_id,
            issued_at=self.world.tick(),
            vdr=self.world.registry,
        )
        product.current_credential_id = vc.credential_id
        self.world.emit(
            channel=simnet.CHANNEL_REGISTRY,
            kind="vc-issued",
            frm=self.agent_id,
            to=product.product_code,
            verdict="ok",
            meta={"productCode": product.product_code, "credentialId": vc.credential_id},
        )
        return vc

    # -- distributor channel ------------------------------------------------

    def _handle_direct(self, frm: str, dm: "simnet.DirectMessage") -> str:
        if dm.payload is None or dm.payload.kind != "productSellingReq":
            return "rejected:unexpected-kind"
        body = dm.payload.body
        code = body["productCode"]
        product = self.products.get(code)
        if product is None:
            self.world.send_direct(self.agent_id, frm, dm.nonce, None, error="unknown-product")
            return "rejected:unknown-product"
        if product.status != "registered" or code in self.claimants:
            self.world.send_direct(self.agent_id, frm, dm.nonce, None, error="already-sold")
            return "rejected:already-sold"
        now = self.world.tick()
        product.distributor_id = body["distributorID"]
        product.email = body["email"]
        product.first_purchase_date = now
        product.last_purchase_date = now
        tid = mint_tid(self.rng)
        pin = mint_pin(self.rng)
        self.claimants[code] = ClaimantAttribute(product_code=code, tid=tid, form="new", pin=pin)
        self.world.send_direct(self.agent_id, frm, dm.nonce, payload("productSellingResp", tid=tid))
        self.world.send_email(
            self.agent_id,
            product.email,
            "pin",
            {"productCode": code, "pin": pin, "nonce": dm.nonce.hex()},
        )
        return "accepted"

    # -- new-product claim (tid + pin) ---------------------------------------

    def _on_ownership_claim_req(self, conn, nonce, p, session) -> str:
        if p.body["pin"] is not None:
            return self._claim_new(conn, nonce, p)
        return self._claim_used(conn, nonce, p)

    def _claim_new(self, conn: Connection, nonce: bytes, p: MessagePayload) -> str:
        claim = self._claimant_by_tid(p.body["tid"], "new")
        if claim is None or claim.pin != p.body["pin"]:
            return "rejected:unknown-claim"
        product = self.products.get(claim.product_code)
        if product is None:
            return "rejected:unknown-product"
        product.conn_id = conn.conn_id
        product.status = "sold"
        vc = self._issue(product)
        del self.claimants[claim.product_code]  # entry consumed; the pair is single-use
        self.send(conn, nonce, payload("ownershipClaimResp", credential=vc))
        self.expect(conn, "ownershipClaimAck", nonce)
        self._emit_product_updated(product, "new-purchase")
        return "accepted"

    # -- transfer authorisation ----------------------------------------------

    def _on_ownership_transfer_req(self, conn, nonce, p, session) -> str:
        code = p.body["productCode"]
        if code in self.claimants:
            # the product is already being claimed or transferred right now
            self.send(conn, nonce, payload("ownershipTransferResp", status="rejected"))
            return "rejected:duplicate-transfer"
        product = self.products.get(code)
        if product is None:
            self.send(conn, nonce, payload("ownershipTransferResp", status="rejected"))
            return "rejected:unknown-product"
        if product.status != "sold":
            self.send(conn, nonce, payload("ownershipTransferResp", status="rejected"))
            return "rejected:not-transferable"
        self.claimants[code] = ClaimantAttribute(
            product_code=code, tid=p.body["tid"], form="used", encrypted_pin=bytes(p.body["encryptedPin"])
        )
        product.status = "transfer_pending"
        challenge = crypto.fresh_nonce(self.rng)
        self.send(
            conn, nonce, payload("ownershipProofReq", attributes=list(self.schema.attribute_names), challenge=challenge)
        )
        self.expect(conn, "ownershipProofResp", nonce, context={"productCode": code, "challenge": challenge})
        return "accepted"

    def _rollback_transfer(self, code: str) -> None:
        self.claimants.pop(code, None)
        product = self.products.get(code)
        if product is not None and product.status == "transfer_pending":
            product.status = "sold"

    def _on_ownership_proof_resp(self, conn, nonce, p, session) -> str:
        code = session.context["productCode"]
        challenge = session.context["challenge"]
        product = self.products[code]
        presentation = p.body["presentation"]
        report = verify_presentation(presentation, challenge, self.world.registry, conn.remote_public_key)
        reasons = list(report.reasons)
        if not reasons and presentation.credential.cred_def_id != self.cred_def.cred_def_id:
            reasons.append("wrong-issuer")
        if not reasons and presentation.credential.attribute("productCode") != code:
            reasons.append("wrong-product")
        if not reasons and presentation.credential.credential_id != product.current_credential_id:
            reasons.append("stale-credential")
        if reasons:
            self._rollback_transfer(code)
            self.send(conn, nonce, payload("ownershipTransferResp", status="rejected"))
            return f"rejected:{reasons[0]}"
        self.claimants[code].authorized = True  # the buyer's claim is serviceable from here on
        self.send(conn, nonce, payload("ownershipTransferResp", status="accepted"))
        return "accepted"

    # -- used-product claim (tid + symmetric key) -----------------------------

    def _claim_used(self, conn: Connection, nonce: bytes, p: MessagePayload) -> str:
        claim = self._claimant_by_tid(p.body["tid"], "used")
        if claim is None:
            return "rejected:unknown-tid"
        if not claim.authorized:
            # the seller never completed the ownership proof for this transfer
            return "rejected:transfer-not-authorized"
        try:
            key = SymmetricKey(bytes(p.body["key"]))
        except crypto.KeyFormatError:
            return "rejected:bad-key"
        claim.key = key  # the key only ever arrives with the buyer's claim
        claim.challenge_by, claim.challenge_type = self.draw_challenge()
        self.send(
            conn,
            nonce,
            payload(
                "pinChallengeReq",
                tid=claim.tid,
                challengeBy=claim.challenge_by,
                challengeType=claim.challenge_type,
            ),
        )
        self.expect(conn, "pinChallengeResp", nonce, context={"tid": claim.tid})
        return "accepted"

    def draw_challenge(self) -> tuple[int, str]:
        """Fresh 3-4 digit operand and an arithmetic operator, uniformly drawn."""
        return self.rng.randint(100, 9999), self.rng.choice(CHALLENGE_TYPES)

    def check_challenge_response(self, claim: ClaimantAttribute, result: Fraction) -> tuple[bool, str]:
        """Decrypt the stored PIN and recompute; accept only on exact equality."""
        if claim.key is None or claim.encrypted_pin is None or claim.challenge_by is None:
            return False, "unknown-tid"
        try:
            pin_plain = crypto.sym_decrypt(claim.key, claim.encrypted_pin).decode("ascii")
            mf_result = evaluate_challenge(pin_numeric(pin_plain), claim.challenge_by, claim.challenge_type)
        except (crypto.DecryptError, UnicodeDecodeError, PinFormatError):
            return False, "pin-decrypt"
        if mf_result != result:
            return False, "challenge-mismatch"
        return True, ""

    def _on_pin_challenge_resp(self, conn, nonce, p, session) -> str:
        claim = self._claimant_by_tid(session.context["tid"], "used")
        if claim is None or p.body["tid"] != session.context["tid"]:
            return "rejected:unknown-tid"
        ok, reason = self.check_challenge_response(claim, p.body["challengeResult"])
        if not ok:
            # claimant entry stays; a legitimate buyer may retry the claim
            return f"rejected:{reason}"
        return self._commit_transfer(conn, nonce, claim)

    def _commit_transfer(self, buyer_conn: Connection, nonce: bytes, claim: ClaimantAttribute) -> str:
        product = self.products[claim.product_code]
        old_credential_id = product.current_credential_id
        self.world.registry.revoke_credential(self.did.uri, self.revocation_registry_id, old_credential_id)
        self.world.emit(
            channel=simnet.CHANNEL_REGISTRY,
            kind="vc-revoked",
            frm=self.agent_id,
            to=product.product_code,
            verdict="ok",
            meta={"productCode": product.product_code, "credentialId": old_credential_id},
        )
        old_conn = self.connections_by_id.get(product.conn_id)
        if old_conn is not None:
            revoke_nonce = crypto.fresh_nonce(self.rng)
            self.send(
                old_conn,
                revoke_nonce,
                payload("revokeVC", credentialId=old_credential_id, productCode=product.product_code),
            )
            self.expect(old_conn, "revokeVCResp", revoke_nonce)
        product.status = "transferred"
        product.conn_id = buyer_conn.conn_id
        product.previously_sold_count += 1
        product.last_purchase_date = self.world.tick()
        product.email = self.world.agent_email(buyer_conn.remote_agent_id)
        product.status = "sold"
        new_vc = self._issue(product)
        offer_nonce = crypto.fresh_nonce(self.rng)  # issuance leg runs under its own nonce
        self.send(buyer_conn, offer_nonce, payload("ownershipClaimResp", credential=new_vc))
        self.expect(buyer_conn, "ownershipClaimAck", offer_nonce)
        del self.claimants[claim.product_code]
        self._emit_product_updated(product, "transfer-committed")
        return "accepted"

    def _emit_product_updated(self, product: ProductRecord, reason: str) -> None:
        self.world.emit(
            channel=simnet.CHANNEL_REGISTRY,
            kind="product-updated",
            frm=self.agent_id,
            to=product.product_code,
            verdict="ok",
            meta={
                "productCode": product.product_code,
                "previouslySoldCount": product.previously_sold_count,
                "status": product.status,
                "connId": product.conn_id,
                "reason": reason,
            },
        )

    def _on_revoke_vc_resp(self, conn, nonce, p, session) -> str:
        # informational; revocation took effect when the registry entry landed
        return "accepted" if p.body["status"] == "accepted" else "rejected:holder-declined"

    def _on_ownership_claim_ack(self, conn, nonce, p, session) -> str:
        return "accepted" if p.body["status"] == "accepted" else "rejected:holder-declined"

    def state_dump(self) -> dict:
        d = super().state_dump()
        d["products"] = {code: rec.dump() for code, rec in sorted(self.products.items())}
        d["claimants"] = {code: c.dump() for code, c in sorted(self.claimants.items())}
        return d


class DistributorAgent(Agent):
    """Sells catalog products on the manufacturer's behalf over the direct channel."""

    ROLE = "distributor"

    def __init__(self, agent_id: str, world: "simnet.World") -> None:
        super().__init__(agent_id, world)
        self.sales: list[dict] = []

    def record_sale(self, manufacturer_id: str, product_code: str, buyer_email: str) -> None:
        nonce = crypto.fresh_nonce(self.rng)
        now = self.world.tick()
        req = payload(
            "productSellingReq",
            productCode=product_code,
            distributorID=self.agent_id,
            ConnID="",
            status="sold",
            previouslySoldCount=0,
            firstPurchaseDate=now,
            lastPurchaseDate=now,
            email=buyer_email,
        )
        self.world.send_direct(self.agent_id, manufacturer_id, nonce, req)
        self._direct_expected[(manufacturer_id, "productSellingResp", nonce.hex())] = NonceSession(
            nonce, {"productCode": product_code, "email": buyer_email}
        )

    def _handle_direct(self, frm: str, dm: "simnet.DirectMessage") -> str:
        session = self._direct_expected.pop((frm, "productSellingResp", dm.nonce.hex()), None)
        if session is None or not validate_nonce_echo(session, dm.nonce):
            return "rejected:nonce-mismatch"
        if dm.error is not None:
            return f"rejected:{dm.error}"
        if dm.payload is None or dm.payload.kind != "productSellingResp":
            return "rejected:unexpected-kind"
        tid = dm.payload.body["tid"]
        self.sales.append({"productCode": session.context["productCode"], "tid": tid})
        self.world.send_email(
            self.agent_id,
            session.context["email"],
            "tid",
            {"productCode": session.context["productCode"], "tid": tid, "nonce": dm.nonce.hex()},
        )
        return "accepted"

    def state_dump(self) -> dict:
        d = super().state_dump()
        d["sales"] = list(self.sales)
        return d


class WalletAgent(Agent):
    """Buyer/seller wallet: holds credentials and ownership claiming data."""

    ROLE = "wallet"
    HANDLERS = {
        "PINReq": "_on_pin_req",
        "PINResp": "_on_pin_resp",
        "ownershipProofReq": "_on_ownership_proof_req",
        "pinChallengeReq": "_on_pin_challenge_req",
        "ownershipClaimResp": "_on_ownership_claim_resp",
        "ownershipTransferResp": "_on_ownership_transfer_resp",
        "revokeVC": "_on_revoke_vc",
    }

    def __init__(self, agent_id: str, world: "simnet.World") -> None:
        super().__init__(agent_id, world)
        self.credentials: list[VerifiableCredential] = []
        self.revoked_ids: set[str] = set()
        self.claiming: list[OwnershipClaimingData] = []

    def _claim_entry(self, tid: str, role: str | None = None) -> Optional[OwnershipClaimingData]:
        for entry in self.claiming:
            if entry.tid == tid and (role is None or entry.role == role):
                return entry
        return None

    # -- locally initiated actions ------------------------------------------

    def claim_new(self, manufacturer_did: str, tid: str, pin: str) -> None:
        """Send the new-product ownership claim with the emailed TID and PIN."""
        conn = self.connection_with(manufacturer_did)
        if self._claim_entry(tid) is None:
            self.claiming.append(
                OwnershipClaimingData(role="buying", tid=tid, counterparty_conn=conn.conn_id, pin=pin)
            )
        nonce = crypto.fresh_nonce(self.rng)
        self.send(conn, nonce, payload("ownershipClaimReq", tid=tid, pin=pin, key=None))
        self.expect(conn, "ownershipClaimResp", nonce, context={"tid": tid})

    def start_sell(self, buyer_did: str, product_code: str) -> str:
        """Open a sale: mint a TID and ask the buyer for an encrypted PIN."""
        conn = self.connection_with(buyer_did)
        tid = mint_tid(self.rng)
        self.claiming.append(
            OwnershipClaimingData(
                role="selling", tid=tid, counterparty_conn=conn.conn_id, product_code=product_code
            )
        )
        nonce = crypto.fresh_nonce(self.rng)
        self.send(conn, nonce, payload("PINReq", tid=tid))
        self.expect(conn, "PINResp", nonce, context={"tid": tid})
        return tid

    def start_transfer(self, manufacturer_did: str, product_code: str) -> None:
        """Ask the manufacturer to transfer ownership using the stored sale data."""
        entry = next(
            (
                e
                for e in self.claiming
                if e.role == "selling" and e.product_code == product_code and e.encrypted_pin is not None
            ),
            None,
        )
        if entry is None:
            raise AgentActionError(f"{self.agent_id} has no completed sale data for {product_code}")
        conn = self.connection_with(manufacturer_did)
        nonce = crypto.fresh_nonce(self.rng)
        self.send(
            conn,
            nonce,
            payload(
                "ownershipTransferReq", productCode=product_code, encryptedPin=entry.encrypted_pin, tid=entry.tid
            ),
        )
        self.expect(conn, "ownershipProofReq", nonce, context={"productCode": product_code})
        self.expect(conn, "ownershipTransferResp", nonce, context={"productCode": product_code})

    def claim_used(self, manufacturer_did: str, tid: str) -> None:
        """Claim a second-hand purchase: reveal the symmetric key to the manufacturer."""
        entry = self._claim_entry(tid, role="buying")
        if entry is None or entry.key is None:
            raise AgentActionError(f"{self.agent_id} holds no purchase data for tid {tid}")
        conn = self.connection_with(manufacturer_did)
        nonce = crypto.fresh_nonce(self.rng)
        self.send(conn, nonce, payload("ownershipClaimReq", tid=tid, pin=None, key=entry.key.key_bytes))
        self.expect(conn, "pinChallengeReq", nonce, context={"tid": tid})

    # -- handlers -------------------------------------------------------------

    def _on_pin_req(self, conn, nonce, p, session) -> str:
        tid = p.body["tid"]
        pin = mint_pin(self.rng)
        key = crypto.generate_symmetric_key(self.rng)
        entry = OwnershipClaimingData(
            role="buying",
            tid=tid,
            counterparty_conn=conn.conn_id,
            pin=pin,
            key=key,
            encrypted_pin=crypto.sym_encrypt(self.rng, key, pin.encode("ascii")),
        )
        self.claiming.append(entry)
        self.world.emit(
            channel=simnet.CHANNEL_AUDIT,
            kind="secret-minted",
            frm=self.agent_id,
            to=conn.remote_agent_id,
            verdict="ok",
            meta={
                "owner": self.agent_id,
                "seller": conn.remote_agent_id,
                "tid": tid,
                "pin": pin,
                "keyHex": key.key_bytes.hex(),
            },
        )
        self.send(conn, nonce, payload("PINResp", encryptedPin=entry.encrypted_pin, tid=tid))
        return "accepted"

    def _on_pin_resp(self, conn, nonce, p, session) -> str:
        if p.body["tid"] != session.context["tid"]:
            return "rejected:tid-mismatch"
        entry = self._claim_entry(session.context["tid"], role="selling")
        if entry is None:
            return "rejected:unknown-tid"
        entry.encrypted_pin = bytes(p.body["encryptedPin"])  # opaque to this wallet
        return "accepted"

    def _select_credential(self, product_code: str, requested: list[str]) -> Optional[VerifiableCredential]:
        for vc in self.credentials:
            if vc.credential_id in self.revoked_ids:
                continue
            names = [name for name, _ in vc.attributes]
            if vc.attribute("productCode") == product_code and all(r in names for r in requested):
                return vc
        return None

    def _on_ownership_proof_req(self, conn, nonce, p, session) -> str:
        vc = self._select_credential(session.context["productCode"], p.body["attributes"])
        if vc is None:
            return "rejected:no-matching-credential"
        presentation = present_proof(vc, bytes(p.body["challenge"]), self.did.uri, conn.local.private_key)
        self.send(conn, nonce, payload("ownershipProofResp", presentation=presentation))
        return "accepted"

    def _on_pin_challenge_req(self, conn, nonce, p, session) -> str:
        entry = self._claim_entry(p.body["tid"], role="buying")
        if entry is None or entry.pin is None:
            return "rejected:unknown-tid"
        result = evaluate_challenge(pin_numeric(entry.pin), p.body["challengeBy"], p.body["challengeType"])
        self.send(conn, nonce, payload("pinChallengeResp", tid=entry.tid, challengeResult=result))
        # the credential offer that follows runs under a nonce the issuer mints
        self.expect(conn, "ownershipClaimResp", None, context={"tid": entry.tid})
        return "accepted"

    def _on_ownership_claim_resp(self, conn, nonce, p, session) -> str:
        vc = p.body["credential"]
        ok, reason = verify_credential_signature(vc, self.world.registry)
        if ok and self.world.registry.is_revoked(vc.credential_id):
            ok, reason = False, "revoked"
        if not ok:
            self.send(conn, nonce, payload("ownershipClaimAck", status="rejected"))
            return f"rejected:{reason}"
        self.credentials.append(vc)
        entry = self._claim_entry(session.context.get("tid", ""))
        if entry is not None:
            entry.product_code = vc.attribute("productCode")
        self.send(conn, nonce, payload("ownershipClaimAck", status="accepted"))
        return "accepted"

    def _on_ownership_transfer_resp(self, conn, nonce, p, session) -> str:
        self.drop_expectation(conn, "ownershipProofReq", nonce)
        return "accepted" if p.body["status"] == "accepted" else "rejected:transfer-rejected"

    def _on_revoke_vc(self, conn, nonce, p, session) -> str:
        self.revoked_ids.add(p.body["credentialId"])
        self.send(conn, nonce, payload("revokeVCResp", status="accepted"))
        return "accepted"

    def state_dump(self) -> dict:
        d = super().state_dump()
        d["credentials"] = [
            {
                "credentialId": vc.credential_id,
                "credDefId": vc.cred_def_id,
                "attributes": [[n, v] for n, v in vc.attributes],
                "issuerSignature": vc.issuer_signature.hex(),
                "revocationRegistryId": vc.revocation_registry_id,
                "issuedAt": vc.issued_at,
            }
            for vc in self.credentials
        ]
        d["revokedIds"] = sorted(self.revoked_ids)
        d["claiming"] = [entry.dump() for entry in self.claiming]
        return d


class AdversaryWallet(WalletAgent):
    """Wallet that plays the protocol dishonestly to probe the manufacturer.

    ``attack_mode`` controls how ownership proof requests are answered:
    ``self-issued`` presents a credential signed by the adversary under its own
    published definition, ``unknown-creddef`` references a definition that is
    not on the registry, and ``garbage`` presents a victim-definition credential
    with an invalid signature.
    """

    ROLE = "adversary-wallet"

    def __init__(self, agent_id: str, world: "simnet.World") -> None:
        super().__init__(agent_id, world)
        self.attack_mode = "self-issued"
        self.target_cred_def_id: Optional[str] = None
        self._own_cred_def: Optional[CredentialDefinition] = None

    def craft_transfer_request(self, manufacturer_did: str, product_code: str) -> None:
        """Send a transfer request for a product this wallet never owned."""
        conn = self.connection_with(manufacturer_did)
        nonce = crypto.fresh_nonce(self.rng)
        fake_pin_ct = self.rng.token(40)
        self.send(
            conn,
            nonce,
            payload(
                "ownershipTransferReq",
                productCode=product_code,
                encryptedPin=fake_pin_ct,
                tid=mint_tid(self.rng),
            ),
        )
        self.expect(conn, "ownershipProofReq", nonce, context={"productCode": product_code})
        self.expect(conn, "ownershipTransferResp", nonce, context={"productCode": product_code})

    def _forged_credential(self, product_code: str) -> VerifiableCredential:
        schema = product_schema()
        if self.attack_mode == "self-issued":
            # a definition the registry will happily resolve, but not the victim's
            cred_def_id = f"creddef:{self.did.uri}:{schema.schema_id}"
            if self._own_cred_def is None:
                self.world.registry.publish_cred_def(
                    cred_def_id, schema.schema_id, self.did.uri, self.root_keys.public_key
                )
                self._own_cred_def = CredentialDefinition(
                    cred_def_id, schema.schema_id, self.did.uri, self.root_keys.public_key
                )
        elif self.attack_mode == "unknown-creddef":
            cred_def_id = "creddef:did:handover:nobody:ghost"
        else:  # "garbage": victim's definition, signature that cannot verify
            cred_def_id = self.target_cred_def_id or "creddef:unset"
        attributes = {
            name: (product_code if name == "productCode" else "forged") for name in schema.attribute_names
        }
        attributes["previouslySoldCount"] = "0"
        attributes["firstPurchaseDate"] = "0"
        attributes["lastPurchaseDate"] = "0"
        ordered = tuple((name, str(attributes[name])) for name in schema.attribute_names)
        issued_at = self.world.tick()
        credential_id = make_credential_id(cred_def_id, ordered, issued_at)
        signature = crypto.sign(
            self.root_keys.private_key, credential_signing_bytes(credential_id, cred_def_id, ordered)
        )
        return VerifiableCredential(
            credential_id=credential_id,
            cred_def_id=cred_def_id,
            attributes=ordered,
            issuer_signature=signature,
            revocation_registry_id="revreg:forged",
            issued_at=issued_at,
        )

    def _on_ownership_proof_req(self, conn, nonce, p, session) -> str:
        vc = self._forged_credential(session.context["productCode"])
        presentation = present_proof(vc, bytes(p.body["challenge"]), self.did.uri, conn.local.private_key)
        self.send(conn, nonce, payload("ownershipProofResp", presentation=presentation))
        return "accepted"

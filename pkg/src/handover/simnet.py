"""Deterministic in-memory network: event scheduler, store-and-forward
mediator, out-of-band email channel, and injectable adversary actions.

Logical time advances one tick per hop.  A run is a pure function of the seed,
the scenario, and the injected actions, so traces replay byte-identically.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from . import crypto
from .messages import Envelope, MessagePayload, seal, unseal_at_mediator
from .registry import VerifiableDataRegistry

MEDIATOR_ID = "MD"

CHANNEL_SSI = "ssi"
CHANNEL_HTTPS = "https"
CHANNEL_OOB = "oob-email"
CHANNEL_REGISTRY = "registry"
CHANNEL_AUDIT = "audit"
CHANNEL_CONTROL = "control"

DEFAULT_MAX_TICKS = 100_000


@dataclass(frozen=True)
class OobMessage:
    """Email-style out-of-band message; content rides outside the SSI transport."""

    subject: str
    fields: dict


@dataclass(frozen=True)
class DirectMessage:
    """Pre-secured request/response unit for the distributor<->manufacturer leg."""

    nonce: bytes
    payload: Optional[MessagePayload]
    error: Optional[str] = None


@dataclass
class DeliveryEvent:
    seq: int
    deliver_at: int
    frm: str
    to: str
    channel: str
    body: Any
    kind: str  # tracing label only; agent logic never reads it
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AdversaryAction:
    """One wire-level attack; referenced events must be observable (sealed) traffic."""

    kind: str  # "replay" | "tamper" | "drop" | "spoof"
    seq: Optional[int] = None
    byte_index: Optional[int] = None
    new_byte: Optional[int] = None
    payload: Optional[MessagePayload] = None
    forged_sender: Optional[str] = None  # DID the inner layer claims
    recipient: Optional[str] = None  # agent id the envelope routes to
    knows_endpoint_key: bool = True
    via_connection_with: Optional[str] = None  # whose leaked connection key seals the inner
    trigger_tick: Optional[int] = None


class SimError(Exception):
    pass


class Mediator:
    """Honest-but-curious relay: reads routing headers, stores sealed payloads."""

    def __init__(self, keys: crypto.KeyPair) -> None:
        self.keys = keys
        self.routes: dict[str, str] = {}
        self.queues: dict[str, deque] = {}
        self.dead_letters: list[bytes] = []
        self.audit_bytes: list[bytes] = []  # everything this process ever held

    def register(self, did_uri: str, agent_id: str) -> None:
        self.routes[did_uri] = agent_id

    def handle(self, world: "World", event: DeliveryEvent) -> str:
        envelope: Envelope = event.body
        self.audit_bytes.append(envelope.outer_ciphertext)
        try:
            recipient_did, inner = unseal_at_mediator(self.keys.private_key, envelope)
        except crypto.DecryptError:
            self.dead_letters.append(envelope.outer_ciphertext)
            return "dead-letter:unreadable"
        self.audit_bytes.append(inner)
        agent_id = self.routes.get(recipient_did)
        if agent_id is None or agent_id not in world.agents:
            self.dead_letters.append(inner)
            return "dead-letter"
        markers = {k: v for k, v in event.extra.items() if k in ("injected", "of", "forgedSender", "tampered")}
        if world.agents[agent_id].online:
            world.schedule(
                frm=MEDIATOR_ID, to=agent_id, channel=CHANNEL_SSI, body=inner, kind=event.kind, meta=markers
            )
            return "forwarded"
        self.queues.setdefault(agent_id, deque()).append((inner, event.kind))
        return "queued"

    def poll(self, world: "World", agent_id: str) -> int:
        """Drain the offline queue for an agent, preserving send order."""
        queue = self.queues.get(agent_id)
        count = 0
        while queue:
            inner, kind = queue.popleft()
            world.schedule(frm=MEDIATOR_ID, to=agent_id, channel=CHANNEL_SSI, body=inner, kind=kind)
            count += 1
        return count

    def state_dump(self) -> dict:
        return {
            "routes": dict(sorted(self.routes.items())),
            "queues": {aid: [inner.hex() for inner, _ in q] for aid, q in sorted(self.queues.items())},
            "deadLetters": [b.hex() for b in self.dead_letters],
        }


class World:
    """One simulation universe: registry, mediator, agents, scheduler, trace."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.rng = crypto.Rng(seed)
        self.clock = 0
        self._seq = 0
        self._heap: list[tuple[int, int, DeliveryEvent]] = []
        self._pending: set[int] = set()
        self._drops: set[int] = set()
        self._tampers: dict[int, list[tuple[int, int]]] = {}
        self.trace: list[dict] = []
        self.wire_log: dict[int, DeliveryEvent] = {}
        self.registry = VerifiableDataRegistry(clock=self.tick)
        self.mediator = Mediator(crypto.generate_keypair(self.rng))
        self.agents: dict[str, Any] = {}
        self.email_directory: dict[str, str] = {}
        self.email_log: list[dict] = []  # what a mailbox eavesdropper would see
        self.timed_out = False

    # -- registration ------------------------------------------------------

    def register_agent(self, agent) -> None:
        if agent.agent_id in self.agents or agent.agent_id == MEDIATOR_ID:
            raise SimError(f"duplicate agent id {agent.agent_id}")
        self.agents[agent.agent_id] = agent
        self.email_directory[agent.email] = agent.agent_id
        self.mediator.register(agent.did.uri, agent.agent_id)
        self.registry.publish_did_doc(agent.did.uri, agent.did.verification_key, {"agent": agent.agent_id})

    def agent_email(self, agent_id: str) -> str:
        return self.agents[agent_id].email

    def mediator_public_key(self) -> bytes:
        return self.mediator.keys.public_key

    def tick(self) -> int:
        return self.clock

    def set_online(self, agent_id: str, online: bool) -> None:
        self.agents[agent_id].online = online
        if online:
            self.mediator.poll(self, agent_id)

    # -- scheduling ----------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def schedule(
        self,
        *,
        frm: str,
        to: str,
        channel: str,
        body: Any,
        kind: str,
        delay: int = 1,
        meta: dict | None = None,
    ) -> int:
        event = DeliveryEvent(
            seq=self._next_seq(),
            deliver_at=self.clock + delay,
            frm=frm,
            to=to,
            channel=channel,
            body=body,
            kind=kind,
            extra=dict(meta or {}),
        )
        heapq.heappush(self._heap, (event.deliver_at, event.seq, event))
        self._pending.add(event.seq)
        return event.seq

    def send_envelope(self, sender_id: str, envelope: Envelope, kind: str) -> int:
        return self.schedule(frm=sender_id, to=MEDIATOR_ID, channel=CHANNEL_SSI, body=envelope, kind=kind)

    def send_direct(
        self, sender_id: str, recipient_id: str, nonce: bytes, payload: Optional[MessagePayload], error: str | None = None
    ) -> int:
        dm = DirectMessage(nonce=bytes(nonce), payload=payload, error=error)
        kind = payload.kind if payload is not None else f"error:{error}"
        return self.schedule(frm=sender_id, to=recipient_id, channel=CHANNEL_HTTPS, body=dm, kind=kind)

    def send_email(self, sender_id: str, to_email: str, subject: str, fields: dict) -> int:
        self.email_log.append({"to": to_email, "subject": subject, "fields": dict(fields)})
        agent_id = self.email_directory.get(to_email)
        if agent_id is None:
            return self.schedule(frm=sender_id, to="unknown-mailbox", channel=CHANNEL_OOB, body=None, kind=subject)
        return self.schedule(
            frm=sender_id,
            to=agent_id,
            channel=CHANNEL_OOB,
            body=OobMessage(subject=subject, fields=dict(fields)),
            kind=subject,
        )

    # -- tracing ---------------------------------------------------------------

    def emit(
        self,
        *,
        channel: str,
        kind: str,
        frm: str,
        to: str,
        verdict: str,
        meta: dict | None = None,
        seq: int | None = None,
    ) -> None:
        self.trace.append(
            {
                "seq": seq if seq is not None else self._next_seq(),
                "tick": self.clock,
                "from": frm,
                "to": to,
                "channel": channel,
                "kind": kind,
                "verdict": verdict,
                "meta": meta or {},
            }
        )

    def _event_meta(self, event: DeliveryEvent) -> dict:
        meta = dict(event.extra)
        if event.channel == CHANNEL_SSI:
            body = event.body
            meta["bytes"] = body.outer_ciphertext.hex() if isinstance(body, Envelope) else bytes(body).hex()
        elif event.channel == CHANNEL_HTTPS:
            meta["nonce"] = event.body.nonce.hex()
        elif event.channel == CHANNEL_OOB and event.body is not None:
            meta["fields"] = dict(sorted(event.body.fields.items()))
        return meta

    # -- execution ----------------------------------------------------------------

    def run_until_quiescent(self, max_ticks: int | None = None) -> bool:
        """Execute pending events in (deliver_at, seq) order; False on tick overrun."""
        limit = max_ticks if max_ticks is not None else DEFAULT_MAX_TICKS
        while self._heap:
            deliver_at, _, event = heapq.heappop(self._heap)
            self._pending.discard(event.seq)
            if deliver_at > limit:
                self.timed_out = True
                self.emit(
                    channel=CHANNEL_CONTROL,
                    kind="timeout",
                    frm="-",
                    to="-",
                    verdict="timeout",
                    meta={"limit": limit, "next": deliver_at},
                )
                return False
            self.clock = max(self.clock, deliver_at)
            if event.seq in self._drops:
                self._drops.discard(event.seq)
                self.emit(
                    channel=event.channel,
                    kind=event.kind,
                    frm=event.frm,
                    to=event.to,
                    verdict="dropped",
                    seq=event.seq,
                )
                continue
            self._apply_tampers(event)
            verdict = self._dispatch(event)
            if event.channel == CHANNEL_SSI:
                self.wire_log[event.seq] = event
            self.emit(
                channel=event.channel,
                kind=event.kind,
                frm=event.frm,
                to=event.to,
                verdict=verdict,
                meta=self._event_meta(event),
                seq=event.seq,
            )
        return True

    def _apply_tampers(self, event: DeliveryEvent) -> None:
        for byte_index, new_byte in self._tampers.pop(event.seq, []):
            event.body = _flip_body_byte(event.body, byte_index, new_byte)
            event.extra["tampered"] = True

    def _dispatch(self, event: DeliveryEvent) -> str:
        if event.to == MEDIATOR_ID:
            return self.mediator.handle(self, event)
        agent = self.agents.get(event.to)
        if agent is None:
            return "dead-letter"
        return agent.deliver(event)

    # -- adversary interface ----------------------------------------------------------

    def inject(self, action: AdversaryAction) -> Optional[int]:
        """Apply one adversary action; returns the scheduled seq where applicable."""
        if action.kind == "drop":
            if action.seq not in self._pending:
                raise SimError(f"drop: event {action.seq} is not in flight")
            self._drops.add(action.seq)
            return None
        if action.kind == "tamper":
            return self._inject_tamper(action)
        if action.kind == "replay":
            return self._inject_replay(action)
        if action.kind == "spoof":
            return self._inject_spoof(action)
        raise SimError(f"unknown adversary action {action.kind}")

    def _inject_tamper(self, action: AdversaryAction) -> Optional[int]:
        original = self.wire_log.get(action.seq)
        if action.seq in self._pending or original is None:
            # in flight, or a pre-registration against a deterministic future seq
            self._tampers.setdefault(action.seq, []).append((action.byte_index, action.new_byte))
            return None
        # already delivered: re-inject a tampered copy of the observed bytes
        body = _flip_body_byte(original.body, action.byte_index, action.new_byte)
        return self.schedule(
            frm=original.frm,
            to=original.to,
            channel=original.channel,
            body=body,
            kind=original.kind,
            meta={"injected": "tamper", "of": action.seq},
        )

    def _inject_replay(self, action: AdversaryAction) -> int:
        original = self.wire_log.get(action.seq)
        if original is None:
            raise SimError(f"replay: event {action.seq} was never on the wire")
        delay = 1
        if action.trigger_tick is not None:
            delay = max(1, action.trigger_tick - self.clock)
        return self.schedule(
            frm=original.frm,
            to=original.to,
            channel=original.channel,
            body=original.body,
            kind=original.kind,
            delay=delay,
            meta={"injected": "replay", "of": action.seq},
        )

    def _inject_spoof(self, action: AdversaryAction) -> int:
        recipient = self.agents[action.recipient]
        endpoint_key = None
        if action.knows_endpoint_key:
            via = action.via_connection_with or action.forged_sender
            conn = recipient.connections.get(via)
            if conn is not None:
                endpoint_key = conn.local.public_key
        if endpoint_key is None:
            endpoint_key = crypto.generate_keypair(self.rng).public_key
        attacker_keys = crypto.generate_keypair(self.rng)  # bound to no connection
        envelope = seal(
            self.rng,
            attacker_keys.private_key,
            action.forged_sender,
            endpoint_key,
            self.mediator.keys.public_key,
            recipient.did.uri,
            crypto.fresh_nonce(self.rng),
            action.payload,
        )
        return self.schedule(
            frm="adversary",
            to=MEDIATOR_ID,
            channel=CHANNEL_SSI,
            body=envelope,
            kind=action.payload.kind,
            meta={"injected": "spoof", "forgedSender": action.forged_sender},
        )

    # -- whole-world introspection -------------------------------------------------------

    def state_dumps(self) -> dict:
        dumps = {aid: agent.state_dump() for aid, agent in self.agents.items()}
        dumps[MEDIATOR_ID] = self.mediator.state_dump()
        return dumps

    def emit_state_dumps(self) -> None:
        for agent_id, dump in self.state_dumps().items():
            self.emit(
                channel=CHANNEL_AUDIT,
                kind="state-dump",
                frm=agent_id,
                to="-",
                verdict="ok",
                meta={"state": dump},
            )


def _flip_body_byte(body: Any, byte_index: int, new_byte: int) -> Any:
    if isinstance(body, Envelope):
        raw = bytearray(body.outer_ciphertext)
        raw[byte_index % len(raw)] = new_byte & 0xFF
        return Envelope(outer_ciphertext=bytes(raw))
    if isinstance(body, (bytes, bytearray)):
        raw = bytearray(body)
        raw[byte_index % len(raw)] = new_byte & 0xFF
        return bytes(raw)
    raise SimError("tampering is defined for sealed wire bytes only")

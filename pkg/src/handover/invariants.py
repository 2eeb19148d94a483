"""Trace-level invariant scanner.

Works on any trace produced by a run: the trace carries registry events
(issuance, revocation, product updates), audit records (minted secrets and
final state dumps), and the raw wire bytes of every routed message, which is
everything the global checks need.
"""

from __future__ import annotations

from typing import Iterable

from .encoding import canonical_json


def scan_trace(records: Iterable[dict]) -> list[dict]:
    """Return one violation dict per breached invariant, empty when clean."""
    violations: list[dict] = []
    live: dict[str, set[str]] = {}
    sold_counts: dict[str, int] = {}
    secrets: list[dict] = []
    dumps: dict[str, tuple[int, dict]] = {}
    wire_chunks: list[tuple[int, bytes]] = []

    for rec in records:
        kind = rec.get("kind", "")
        meta = rec.get("meta", {})
        seq = rec.get("seq", -1)
        if kind == "vc-issued":
            holders = live.setdefault(meta["productCode"], set())
            holders.add(meta["credentialId"])
            if len(holders) > 1:
                violations.append(
                    {
                        "seq": seq,
                        "invariant": "single-live-credential",
                        "detail": f"{meta['productCode']} has {sorted(holders)} unrevoked",
                    }
                )
        elif kind == "vc-revoked":
            live.get(meta["productCode"], set()).discard(meta["credentialId"])
        elif kind == "product-updated":
            code = meta["productCode"]
            new_count = meta["previouslySoldCount"]
            old_count = sold_counts.get(code, 0)
            if new_count < old_count:
                violations.append(
                    {
                        "seq": seq,
                        "invariant": "counter-monotonicity",
                        "detail": f"{code} previouslySoldCount {old_count} -> {new_count}",
                    }
                )
            elif new_count > old_count and not (
                new_count == old_count + 1 and meta.get("reason") == "transfer-committed"
            ):
                violations.append(
                    {
                        "seq": seq,
                        "invariant": "counter-monotonicity",
                        "detail": f"{code} count increased without a committed transfer",
                    }
                )
            sold_counts[code] = max(old_count, new_count)
        elif kind == "secret-minted":
            secrets.append({**meta, "seq": seq})
        elif kind == "state-dump":
            dumps[rec["from"]] = (seq, meta.get("state", {}))
        if rec.get("channel") == "ssi" and "bytes" in meta:
            wire_chunks.append((seq, bytes.fromhex(meta["bytes"])))
        if rec.get("channel") == "oob-email" and "fields" in meta:
            wire_chunks.append((seq, canonical_json(meta["fields"]).encode("utf-8")))

    violations.extend(_scan_pin_secrecy(secrets, dumps, wire_chunks))
    return violations


def _scan_pin_secrecy(
    secrets: list[dict],
    dumps: dict[str, tuple[int, dict]],
    wire_chunks: list[tuple[int, bytes]],
) -> list[dict]:
    violations = []
    for secret in secrets:
        owner = secret.get("owner")
        pin_bytes = secret["pin"].encode("ascii")
        key_hex = secret["keyHex"]
        key_bytes = bytes.fromhex(key_hex)
        for seq, chunk in wire_chunks:
            if pin_bytes in chunk or key_bytes in chunk or key_hex.encode("ascii") in chunk:
                violations.append(
                    {
                        "seq": seq,
                        "invariant": "pin-secrecy",
                        "detail": f"secret of {owner} visible on the wire",
                    }
                )
        for agent_id, (seq, state) in dumps.items():
            if agent_id == owner:
                continue  # the buyer legitimately holds its own PIN and key
            role = state.get("role", "")
            text = canonical_json(state)
            if secret["pin"] in text:
                violations.append(
                    {
                        "seq": seq,
                        "invariant": "pin-secrecy",
                        "detail": f"plaintext PIN of {owner} stored by {agent_id}",
                    }
                )
            # the manufacturer receives the key by design (used-product claim)
            if role != "manufacturer" and key_hex in text:
                violations.append(
                    {
                        "seq": seq,
                        "invariant": "pin-secrecy",
                        "detail": f"symmetric key of {owner} stored by {agent_id}",
                    }
                )
    return violations

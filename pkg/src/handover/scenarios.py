"""Declarative scenario runner: casts agents, executes scripted steps, checks
expected verdicts, and runs the global invariant scan over the trace.

Every step yields exactly one verdict string, derived from the decision point
of the flow it drives, so scripts can assert rejects as easily as successes.
The built-in scenarios cover the honest lifecycles and the stock attacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import simnet
from .agents import (
    AdversaryWallet,
    Agent,
    AgentActionError,
    DistributorAgent,
    ManufacturerAgent,
    WalletAgent,
    establish_connection,
)
from .encoding import canonical_json
from .invariants import scan_trace
from .messages import KIND_FIELDS, MessagePayload, payload
from .simnet import AdversaryAction, World

STEP_OPS = (
    "connect",
    "record_sale",
    "claim_new",
    "sell",
    "transfer",
    "claim_used",
    "offline",
    "online",
    "replay",
    "tamper",
    "spoof",
    "adversary_transfer",
)


class ScenarioError(Exception):
    """Scenario file is malformed; ``location`` points at the offending part."""

    def __init__(self, location: str, problem: str):
        super().__init__(f"{location}: {problem}")
        self.location = location
        self.problem = problem


@dataclass(frozen=True)
class ScenarioStep:
    op: str
    args: dict
    expect: str


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    seed: int
    manufacturer: str
    distributor: Optional[str]
    wallets: tuple[str, ...]
    adversaries: tuple[str, ...]
    products: tuple[str, ...]
    script: tuple[ScenarioStep, ...]

    @property
    def agent_names(self) -> tuple[str, ...]:
        names = [self.manufacturer]
        if self.distributor:
            names.append(self.distributor)
        names.extend(self.wallets)
        names.extend(self.adversaries)
        return tuple(names)


@dataclass
class StepResult:
    index: int
    op: str
    verdict: str
    expect: str

    @property
    def ok(self) -> bool:
        return self.verdict == self.expect


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    seed: int
    world: World
    cast: dict[str, Agent]
    steps: list[StepResult] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)

    @property
    def divergence(self) -> Optional[StepResult]:
        return next((s for s in self.steps if not s.ok), None)

    @property
    def ok(self) -> bool:
        return self.divergence is None and not self.violations and not self.world.timed_out

    def trace_lines(self) -> list[str]:
        return [canonical_json(rec) for rec in self.world.trace]

    def write_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.trace_lines():
                fh.write(line + "\n")


# -- parsing -----------------------------------------------------------------


def _require(data: dict, key: str, kinds, location: str):
    if key not in data:
        raise ScenarioError(location, f"missing required key {key!r}")
    value = data[key]
    if not isinstance(value, kinds):
        raise ScenarioError(f"{location}.{key}", f"expected {kinds}, got {type(value).__name__}")
    return value


def parse_scenario(data: dict) -> ScenarioSpec:
    if not isinstance(data, dict):
        raise ScenarioError("scenario", "top level must be an object")
    name = _require(data, "name", str, "scenario")
    seed = _require(data, "seed", int, "scenario")
    cast = _require(data, "cast", dict, "scenario")
    manufacturer = _require(cast, "manufacturer", str, "cast")
    distributor = cast.get("distributor")
    if distributor is not None and not isinstance(distributor, str):
        raise ScenarioError("cast.distributor", "expected a string")
    wallets = tuple(_require(cast, "wallets", list, "cast"))
    adversaries = tuple(cast.get("adversaries", []))
    products = tuple(_require(data, "products", list, "scenario"))
    declared = {manufacturer, distributor, *wallets, *adversaries} - {None}
    if len(declared) != (2 if distributor else 1) + len(wallets) + len(adversaries):
        raise ScenarioError("cast", "agent names must be unique")
    script = []
    raw_script = _require(data, "script", list, "scenario")
    for index, raw in enumerate(raw_script):
        location = f"script[{index}]"
        if not isinstance(raw, dict):
            raise ScenarioError(location, "step must be an object")
        op = _require(raw, "op", str, location)
        if op not in STEP_OPS:
            raise ScenarioError(location, f"unknown op {op!r}")
        expect = _require(raw, "expect", str, location)
        args = {k: v for k, v in raw.items() if k not in ("op", "expect")}
        for ref_key in ("a", "b", "wallet", "seller", "buyer", "distributor", "agent", "adversary"):
            if ref_key in args and args[ref_key] not in declared:
                raise ScenarioError(f"{location}.{ref_key}", f"undeclared agent {args[ref_key]!r}")
        script.append(ScenarioStep(op=op, args=args, expect=expect))
    return ScenarioSpec(
        name=name,
        seed=seed,
        manufacturer=manufacturer,
        distributor=distributor,
        wallets=wallets,
        adversaries=adversaries,
        products=products,
        script=tuple(script),
    )


def load_scenario_file(path: str) -> ScenarioSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(path, f"cannot read file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}", f"invalid JSON: {exc.msg}") from exc
    return parse_scenario(data)


def payload_from_json(kind: str, body: dict, location: str = "payload") -> MessagePayload:
    """Build a payload from scenario JSON; bytes fields are hex strings."""
    spec = KIND_FIELDS.get(kind)
    if spec is None:
        raise ScenarioError(location, f"unknown message kind {kind!r}")
    converted = {}
    for name, ftype in spec:
        raw = body.get(name)
        if ftype in ("bytes", "opt_bytes") and isinstance(raw, str):
            converted[name] = bytes.fromhex(raw)
        elif ftype == "fraction" and isinstance(raw, list):
            converted[name] = Fraction(raw[0], raw[1])
        elif ftype in ("vc", "presentation"):
            raise ScenarioError(location, f"{kind}.{name} cannot be scripted")
        else:
            converted[name] = raw
    try:
        return payload(kind, **converted)
    except Exception as exc:
        raise ScenarioError(location, f"invalid {kind} body: {exc}") from exc


# -- world construction ---------------------------------------------------------


def build_world(spec: ScenarioSpec, seed: Optional[int] = None) -> tuple[World, dict[str, Agent]]:
    world = World(seed if seed is not None else spec.seed)
    cast: dict[str, Agent] = {}
    manufacturer = ManufacturerAgent(spec.manufacturer, world)
    cast[spec.manufacturer] = manufacturer
    for code in spec.products:
        manufacturer.add_product(code)
    if spec.distributor:
        cast[spec.distributor] = DistributorAgent(spec.distributor, world)
    for name in spec.wallets:
        cast[name] = WalletAgent(name, world)
    for name in spec.adversaries:
        adversary = AdversaryWallet(name, world)
        adversary.target_cred_def_id = manufacturer.cred_def.cred_def_id
        cast[name] = adversary
    return world, cast


# -- step execution ----------------------------------------------------------------


def _last_decision(delta: list[dict], candidates: list[tuple[str, str]]) -> str:
    verdict = None
    for rec in delta:
        for to, kind in candidates:
            if rec["to"] == to and rec["kind"] == kind and rec["channel"] in (
                simnet.CHANNEL_SSI,
                simnet.CHANNEL_HTTPS,
            ):
                verdict = rec["verdict"]
    return verdict if verdict is not None else "no-decision"


def _injected_verdicts(delta: list[dict], marker: str) -> list[str]:
    return [
        rec["verdict"]
        for rec in delta
        if rec.get("meta", {}).get("injected") == marker
        and rec["channel"] == simnet.CHANNEL_SSI
        and rec["to"] not in (simnet.MEDIATOR_ID,)
    ]


def _latest_email(wallet: WalletAgent, subject: str, product: Optional[str] = None) -> Optional[dict]:
    for message in reversed(wallet.inbox):
        if message.subject != subject:
            continue
        if product is not None and message.fields.get("productCode") != product:
            continue
        return message.fields
    return None


def execute_step(world: World, cast: dict[str, Agent], spec: ScenarioSpec, step: ScenarioStep) -> str:
    """Run one step to quiescence and return its decision verdict."""
    mark = len(world.trace)
    manufacturer = cast[spec.manufacturer]
    try:
        if step.op == "connect":
            establish_connection(cast[step.args["a"]], cast[step.args["b"]])
            world.run_until_quiescent()
            return "ok"

        if step.op == "offline":
            world.set_online(step.args["agent"], False)
            return "ok"

        if step.op == "online":
            world.set_online(step.args["agent"], True)
            world.run_until_quiescent()
            return "ok"

        if step.op == "record_sale":
            distributor = cast[step.args.get("distributor", spec.distributor)]
            buyer = cast[step.args["buyer"]]
            distributor.record_sale(manufacturer.agent_id, step.args["product"], buyer.email)
            world.run_until_quiescent()
            return _last_decision(world.trace[mark:], [(manufacturer.agent_id, "productSellingReq")])

        if step.op == "claim_new":
            wallet = cast[step.args["wallet"]]
            product = step.args.get("product")
            tid = step.args.get("tid")
            pin = step.args.get("pin")
            if tid is None:
                fields = _latest_email(wallet, "tid", product)
                if fields is None:
                    return "rejected:no-tid-email"
                tid = fields["tid"]
                product = product or fields.get("productCode")
            if pin is None:
                fields = _latest_email(wallet, "pin", product)
                if fields is None:
                    return "rejected:no-pin-email"
                pin = fields["pin"]
            wallet.claim_new(manufacturer.did.uri, tid, pin)
            world.run_until_quiescent()
            return _last_decision(
                world.trace[mark:],
                [(manufacturer.agent_id, "ownershipClaimReq"), (wallet.agent_id, "ownershipClaimResp")],
            )

        if step.op == "sell":
            seller = cast[step.args["seller"]]
            buyer = cast[step.args["buyer"]]
            seller.start_sell(buyer.did.uri, step.args["product"])
            world.run_until_quiescent()
            return _last_decision(world.trace[mark:], [(seller.agent_id, "PINResp")])

        if step.op == "transfer":
            seller = cast[step.args["seller"]]
            seller.start_transfer(manufacturer.did.uri, step.args["product"])
            world.run_until_quiescent()
            return _last_decision(
                world.trace[mark:],
                [
                    (manufacturer.agent_id, "ownershipTransferReq"),
                    (seller.agent_id, "ownershipProofReq"),
                    (manufacturer.agent_id, "ownershipProofResp"),
                ],
            )

        if step.op == "claim_used":
            wallet = cast[step.args["wallet"]]
            tid = step.args.get("tid")
            if tid is None:
                entry = next(
                    (e for e in reversed(wallet.claiming) if e.role == "buying" and e.key is not None), None
                )
                if entry is None:
                    return "rejected:no-purchase-data"
                tid = entry.tid
            wallet.claim_used(manufacturer.did.uri, tid)
            world.run_until_quiescent()
            return _last_decision(
                world.trace[mark:],
                [
                    (manufacturer.agent_id, "ownershipClaimReq"),
                    (wallet.agent_id, "pinChallengeReq"),
                    (manufacturer.agent_id, "pinChallengeResp"),
                    (wallet.agent_id, "ownershipClaimResp"),
                ],
            )

        if step.op == "replay":
            seqs = _resolve_seqs(world, step.args.get("seq", "all-ssi"))
            for seq in seqs:
                world.inject(AdversaryAction(kind="replay", seq=seq))
                world.run_until_quiescent()
            verdicts = _injected_verdicts(world.trace[mark:], "replay")
            if not verdicts:
                return "no-decision"
            if all(v.startswith("rejected") for v in verdicts):
                return "all-rejected" if len(seqs) > 1 else verdicts[-1]
            return "accepted-replay"

        if step.op == "tamper":
            seqs = _resolve_seqs(world, step.args.get("seq", "last-ssi"))
            for seq in seqs:
                world.inject(
                    AdversaryAction(
                        kind="tamper",
                        seq=seq,
                        byte_index=step.args.get("byte_index", 7),
                        new_byte=step.args.get("new_byte", 0xA5),
                    )
                )
                world.run_until_quiescent()
            verdicts = _injected_verdicts(world.trace[mark:], "tamper")
            if not verdicts:
                return "no-decision"
            if all(v.startswith("rejected") or v.startswith("dead-letter") for v in verdicts):
                return "all-rejected" if len(seqs) > 1 else verdicts[-1]
            return "accepted-tamper"

        if step.op == "spoof":
            forged = cast[step.args["a"]] if "a" in step.args else None
            forged_did = forged.did.uri if forged else step.args.get("forged_sender", "did:handover:ghost")
            message = step.args.get("message", {})
            p = payload_from_json(message.get("kind", "PINReq"), message.get("body", {"tid": "00" * 16}))
            world.inject(
                AdversaryAction(
                    kind="spoof",
                    payload=p,
                    forged_sender=forged_did,
                    recipient=step.args["recipient"],
                    knows_endpoint_key=step.args.get("knows_endpoint_key", True),
                )
            )
            world.run_until_quiescent()
            verdicts = _injected_verdicts(world.trace[mark:], "spoof")
            return verdicts[-1] if verdicts else "no-decision"

        if step.op == "adversary_transfer":
            adversary = cast[step.args["adversary"]]
            adversary.attack_mode = step.args.get("mode", "self-issued")
            adversary.craft_transfer_request(manufacturer.did.uri, step.args["product"])
            world.run_until_quiescent()
            return _last_decision(
                world.trace[mark:],
                [
                    (manufacturer.agent_id, "ownershipTransferReq"),
                    (manufacturer.agent_id, "ownershipProofResp"),
                ],
            )
    except AgentActionError:
        return "rejected:action-failed"
    raise ScenarioError(step.op, "unhandled op")  # unreachable: ops validated at parse time


def _resolve_seqs(world: World, selector) -> list[int]:
    if selector == "all-ssi":
        return sorted(world.wire_log)
    if selector == "last-ssi":
        if not world.wire_log:
            return []
        return [max(world.wire_log)]
    if isinstance(selector, int):
        return [selector]
    raise ScenarioError("seq", f"bad event selector {selector!r}")


def run_scenario(
    spec: ScenarioSpec, seed: Optional[int] = None, max_ticks: Optional[int] = None
) -> ScenarioResult:
    """Execute a whole scenario; the result carries verdicts, trace, and scan findings."""
    world, cast = build_world(spec, seed)
    result = ScenarioResult(spec=spec, seed=seed if seed is not None else spec.seed, world=world, cast=cast)
    for index, step in enumerate(spec.script):
        verdict = execute_step(world, cast, spec, step)
        if max_ticks is not None and world.clock > max_ticks:
            world.timed_out = True
        result.steps.append(StepResult(index=index, op=step.op, verdict=verdict, expect=step.expect))
        world.emit(
            channel=simnet.CHANNEL_CONTROL,
            kind="step",
            frm="-",
            to="-",
            verdict=verdict,
            meta={"index": index, "op": step.op, "expect": step.expect},
        )
    world.emit_state_dumps()
    result.violations = scan_trace(world.trace)
    return result


# -- built-in scenarios ------------------------------------------------------------

_LIFECYCLE_PREFIX = [
    {"op": "record_sale", "product": "PC-100", "buyer": "B1", "expect": "accepted"},
    {"op": "connect", "a": "B1", "b": "MF", "expect": "ok"},
    {"op": "claim_new", "wallet": "B1", "expect": "accepted"},
    {"op": "connect", "a": "B1", "b": "B2", "expect": "ok"},
    {"op": "sell", "seller": "B1", "buyer": "B2", "product": "PC-100", "expect": "accepted"},
    {"op": "connect", "a": "B2", "b": "MF", "expect": "ok"},
    {"op": "transfer", "seller": "B1", "product": "PC-100", "expect": "accepted"},
    {"op": "claim_used", "wallet": "B2", "expect": "accepted"},
]

BUILTIN_SCENARIOS: dict[str, dict] = {
    "new-purchase": {
        "name": "new-purchase",
        "seed": 11,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1"]},
        "products": ["PC-100"],
        "script": [
            {"op": "record_sale", "product": "PC-100", "buyer": "B1", "expect": "accepted"},
            {"op": "connect", "a": "B1", "b": "MF", "expect": "ok"},
            {"op": "claim_new", "wallet": "B1", "expect": "accepted"},
        ],
    },
    "full-lifecycle": {
        "name": "full-lifecycle",
        "seed": 17,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1", "B2"]},
        "products": ["PC-100"],
        "script": list(_LIFECYCLE_PREFIX),
    },
    "wrong-pin": {
        "name": "wrong-pin",
        "seed": 23,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1"]},
        "products": ["PC-100"],
        "script": [
            {"op": "record_sale", "product": "PC-100", "buyer": "B1", "expect": "accepted"},
            {"op": "connect", "a": "B1", "b": "MF", "expect": "ok"},
            {"op": "claim_new", "wallet": "B1", "pin": "WRONGP1", "expect": "rejected:unknown-claim"},
            {"op": "claim_new", "wallet": "B1", "expect": "accepted"},
        ],
    },
    "replay-attack": {
        "name": "replay-attack",
        "seed": 29,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1", "B2"]},
        "products": ["PC-100"],
        "script": list(_LIFECYCLE_PREFIX)
        + [{"op": "replay", "seq": "all-ssi", "expect": "all-rejected"}],
    },
    "duplicate-transfer": {
        "name": "duplicate-transfer",
        "seed": 31,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1", "B2"]},
        "products": ["PC-100"],
        "script": list(_LIFECYCLE_PREFIX[:7])
        + [{"op": "transfer", "seller": "B1", "product": "PC-100", "expect": "rejected:duplicate-transfer"}],
    },
    "spoof-attack": {
        "name": "spoof-attack",
        "seed": 37,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1"], "adversaries": ["EVE"]},
        "products": ["PC-100"],
        "script": [
            {"op": "record_sale", "product": "PC-100", "buyer": "B1", "expect": "accepted"},
            {"op": "connect", "a": "B1", "b": "MF", "expect": "ok"},
            {"op": "claim_new", "wallet": "B1", "expect": "accepted"},
            {"op": "connect", "a": "EVE", "b": "MF", "expect": "ok"},
            {
                "op": "adversary_transfer",
                "adversary": "EVE",
                "product": "PC-100",
                "mode": "self-issued",
                "expect": "rejected:wrong-issuer",
            },
            {
                "op": "adversary_transfer",
                "adversary": "EVE",
                "product": "PC-100",
                "mode": "unknown-creddef",
                "expect": "rejected:unknown-issuer",
            },
            {
                "op": "adversary_transfer",
                "adversary": "EVE",
                "product": "PC-100",
                "mode": "garbage",
                "expect": "rejected:bad-issuer-sig",
            },
            {
                "op": "spoof",
                "a": "B1",
                "recipient": "MF",
                "message": {"kind": "PINReq", "body": {"tid": "00112233445566778899aabbccddeeff"}},
                "expect": "rejected:bad-signature",
            },
        ],
    },
    "offline-claim": {
        "name": "offline-claim",
        "seed": 41,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1"]},
        "products": ["PC-100"],
        "script": [
            {"op": "record_sale", "product": "PC-100", "buyer": "B1", "expect": "accepted"},
            {"op": "connect", "a": "B1", "b": "MF", "expect": "ok"},
            {"op": "offline", "agent": "B1", "expect": "ok"},
            {"op": "claim_new", "wallet": "B1", "expect": "accepted"},
            {"op": "online", "agent": "B1", "expect": "ok"},
        ],
    },
    "sale-only": {
        "name": "sale-only",
        "seed": 43,
        "cast": {"manufacturer": "MF", "distributor": "DS", "wallets": ["B1", "B2"]},
        "products": ["PC-100"],
        "script": [
            {"op": "record_sale", "product": "PC-100", "buyer": "B1", "expect": "accepted"},
        ],
    },
}


def builtin_scenario(name: str) -> ScenarioSpec:
    if name not in BUILTIN_SCENARIOS:
        raise ScenarioError("scenario", f"unknown built-in scenario {name!r}")
    return parse_scenario(BUILTIN_SCENARIOS[name])

import io
import json

import pytest

from handover.cli import main
from handover.scenarios import (
    BUILTIN_SCENARIOS,
    ScenarioError,
    builtin_scenario,
    load_scenario_file,
    parse_scenario,
    run_scenario,
)


def run_cli(*argv, stdin=""):
    out = io.StringIO()
    code = main(list(argv), out=out, stdin=io.StringIO(stdin))
    return code, out.getvalue()


def test_run_builtin_passes(tmp_path):
    code, output = run_cli("run", "new-purchase")
    assert code == 0
    assert "scenario new-purchase: PASS" in output
    assert output.count("PASS") >= 3


def test_run_writes_trace_and_ledger(tmp_path):
    trace = tmp_path / "trace.ndjson"
    ledger = tmp_path / "ledger.ndjson"
    code, _ = run_cli("run", "full-lifecycle", "--trace", str(trace), "--ledger-out", str(ledger))
    assert code == 0
    trace_lines = trace.read_text().splitlines()
    assert all(json.loads(line) for line in trace_lines)
    assert ledger.read_text().splitlines()
    # identical invocation gives byte-identical files
    trace2 = tmp_path / "trace2.ndjson"
    ledger2 = tmp_path / "ledger2.ndjson"
    run_cli("run", "full-lifecycle", "--trace", str(trace2), "--ledger-out", str(ledger2))
    assert trace.read_bytes() == trace2.read_bytes()
    assert ledger.read_bytes() == ledger2.read_bytes()


def test_run_seed_override_changes_trace(tmp_path):
    a = tmp_path / "a.ndjson"
    b = tmp_path / "b.ndjson"
    run_cli("run", "new-purchase", "--trace", str(a), "--seed", "5")
    run_cli("run", "new-purchase", "--trace", str(b), "--seed", "6")
    assert a.read_bytes() != b.read_bytes()


def test_run_malformed_scenario_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, output = run_cli("run", str(bad))
    assert code == 2
    assert "scenario error" in output


def test_run_missing_key_reports_location(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "seed": 1, "cast": {"manufacturer": "MF", "wallets": []}}))
    code, output = run_cli("run", str(bad))
    assert code == 2
    assert "products" in output


def test_run_verdict_mismatch_exit_1(tmp_path):
    data = dict(BUILTIN_SCENARIOS["new-purchase"])
    data = json.loads(json.dumps(data))
    data["script"][2]["expect"] = "rejected:unknown-claim"  # wrong expectation on purpose
    path = tmp_path / "mismatch.json"
    path.write_text(json.dumps(data))
    code, output = run_cli("run", str(path))
    assert code == 1
    assert "FAIL at step 3" in output
    assert "got accepted" in output


def test_scan_clean_trace(tmp_path):
    trace = tmp_path / "trace.ndjson"
    run_cli("run", "full-lifecycle", "--trace", str(trace))
    code, output = run_cli("scan", str(trace))
    assert code == 0
    assert "0 violation(s)" in output


def test_scan_detects_planted_violation(tmp_path):
    trace = tmp_path / "trace.ndjson"
    run_cli("run", "full-lifecycle", "--trace", str(trace))
    records = [json.loads(line) for line in trace.read_text().splitlines()]
    secret = next(r for r in records if r["kind"] == "secret-minted")
    # plant the buyer's plaintext pin into a wire record
    wire = next(r for r in records if r["channel"] == "ssi" and "bytes" in r["meta"])
    wire["meta"]["bytes"] += secret["meta"]["pin"].encode("ascii").hex()
    trace.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    code, output = run_cli("scan", str(trace))
    assert code == 1
    assert "pin-secrecy" in output


def test_scan_bad_file_exit_2(tmp_path):
    trace = tmp_path / "trace.ndjson"
    trace.write_text('{"seq": 1}\nnot-json\n')
    code, _ = run_cli("scan", str(trace))
    assert code == 2
    code, _ = run_cli("scan", str(tmp_path / "missing.ndjson"))
    assert code == 2


def test_list_builtins():
    code, output = run_cli("list")
    assert code == 0
    for name in BUILTIN_SCENARIOS:
        assert name in output


def test_usage_error_exit_2():
    code, _ = run_cli("run")  # missing scenario argument
    assert code == 2


def test_wallet_repl_claim_flow():
    # determinism lets a parallel run of the same scenario predict the emailed values
    reference = run_scenario(builtin_scenario("sale-only"))
    inbox = reference.cast["B1"].inbox
    tid = next(m.fields["tid"] for m in inbox if m.subject == "tid")
    pin = next(m.fields["pin"] for m in inbox if m.subject == "pin")
    script = "\n".join(
        [
            "inbox",
            "credentials",
            "connect MF",
            f"claim {tid} WRONGP",  # wrong pin first: rejection, repl continues
            f"claim {tid} {pin}",
            "credentials",
            "quit",
        ]
    )
    code, output = run_cli("wallet", "B1", stdin=script + "\n")
    assert code == 0
    assert f"tid: nonce=" in output or "tid:" in output  # inbox shows both emails
    assert "pin:" in output
    assert "(none)" in output  # credentials empty before the claim
    assert "claim_new: rejected:unknown-claim" in output
    assert "claim_new: accepted" in output
    assert "[valid]" in output


def test_wallet_repl_rejects_wrong_agent():
    code, output = run_cli("wallet", "MF")
    assert code == 2
    assert "not a wallet" in output


def test_parse_scenario_unknown_agent_reference():
    data = json.loads(json.dumps(BUILTIN_SCENARIOS["new-purchase"]))
    data["script"][1]["a"] = "GHOST"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(data)
    assert "GHOST" in str(err.value)


def test_load_scenario_file_roundtrip(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(BUILTIN_SCENARIOS["new-purchase"]))
    spec = load_scenario_file(str(path))
    result = run_scenario(spec)
    assert result.ok

import json
import subprocess
import sys

import pytest

from qsb.cli import main


def test_run_fig2_table(capsys):
    assert main(["run", "--scenario", "fig2", "--format", "table"]) == 0
    out = capsys.readouterr().out
    assert "txn_Da" in out and "conflicting-version" in out and "rounds/block=2" in out


def test_run_writes_report_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["run", "--scenario", "all_honest", "--seed", "7", "--out", str(a)]) == 0
    assert main(["run", "--scenario", "all_honest", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["seed"] == 7


def test_run_empty_exit_zero(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "--scenario", "empty", "--out", str(out)]) == 0
    assert all(not b["txns"] for b in json.loads(out.read_text())["blocks"])


def test_run_bad_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": ["A", "B", "C", "D"], "genesis": {"A": 1}, "link_defaults": {"key_rate": "x"}}')
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "link_defaults.key_rate" in capsys.readouterr().err
    assert main(["run", "--scenario", "fig2", "--seed", "-1"]) == 2
    assert main(["bogus"]) == 2


@pytest.fixture
def export(tmp_path):
    folder = tmp_path / "chains"
    assert main(["run", "--scenario", "all_honest", "--out", str(tmp_path / "r.json"), "--export", str(folder)]) == 0
    return folder / "A.jsonl"


def test_verify_ok(export, capsys):
    assert main(["verify", str(export)]) == 0
    assert "ok: 5 blocks" in capsys.readouterr().out


def test_verify_tampered(export, capsys):
    lines = export.read_text().splitlines()
    block = json.loads(lines[2])
    block["txns"][0]["amount"] += 1
    del block["txns"][0]["txid"]
    lines[2] = json.dumps(block)
    export.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(export)]) == 1
    assert "height 2" in capsys.readouterr().out


def test_verify_hash_bit_flip(export, capsys):
    lines = export.read_text().splitlines()
    block = json.loads(lines[3])
    h = block["block_hash"]
    block["block_hash"] = ("1" if h[0] == "0" else "0") + h[1:]
    lines[3] = json.dumps(block)
    export.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(export)]) == 1
    assert "height 3" in capsys.readouterr().out


def test_verify_truncated(export):
    text = export.read_text()
    export.write_text(text[: len(text) // 2])
    assert main(["verify", str(export)]) == 2


def test_keys_table(tmp_path, capsys):
    report = tmp_path / "r.json"
    main(["run", "--scenario", "fig2", "--out", str(report)])
    capsys.readouterr()
    assert main(["keys", str(report)]) == 0
    out = capsys.readouterr().out
    assert "A->B" in out and "per link" in out and "per node" in out and "network" in out
    assert main(["keys", str(tmp_path / "missing.json")]) == 2


def test_keys_zero_traffic(tmp_path, capsys):
    report = tmp_path / "r.json"
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({
        "nodes": ["A", "B", "C", "D"], "genesis": {"A": 1}, "link_defaults": {"key_rate": 1},
        "block_interval": 10, "blocks": 1,
    }))
    main(["run", "--scenario", str(scen), "--out", str(report)])
    data = json.loads(report.read_text())
    # consensus still runs; subtract it to see that no transaction traffic was keyed
    assert all(d["bits_by_kind"].get("txn", 0) == 0 for d in data["keys"]["directions"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qsb", "run", "--scenario", "empty", "--format", "table"],
                          capture_output=True, text=True, env={"QSB_LOG": "DEBUG", "PATH": ""})
    assert proc.returncode == 0
    assert "simulated empty" in proc.stderr

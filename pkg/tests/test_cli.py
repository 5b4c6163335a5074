import json
import subprocess
import sys

import pytest

from shardsim.harness.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main


def test_verify_pass(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["verify", "closed-form", "--seed", "42", "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["seed"] == 42 and doc["claims"][0]["id"] == "closed-form"
    assert "PASS  closed-form" in capsys.readouterr().err


def test_verify_csv(capsys):
    assert main(["verify", "elastico-attack", "--out", "csv", "--trials", "2000"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("id,anchor,expected,measured,tolerance,pass\n")


def test_verify_unknown_claim(capsys):
    assert main(["verify", "no-such-claim"]) == EXIT_CONFIG
    assert "unknown claim id" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("scenario:\n  n: -5\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
    assert "scenario.n" in capsys.readouterr().err
    assert main(["verify", "closed-form", "--trials", "0"]) == EXIT_CONFIG
    assert main(["verify", "closed-form", "--jobs", "0"]) == EXIT_CONFIG


def test_simulate_json_and_csv(tmp_path):
    out = tmp_path / "s.json"
    assert main(["simulate", "--profile", "rapidchain", "-n", "400", "--epochs", "2", "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["profile"] == "rapidchain" and doc["violations"] == []
    assert len(doc["config_digest"]) == 16
    csv_out = tmp_path / "s.csv"
    assert main(["simulate", "--profile", "baseline", "--out", "csv", "-o", str(csv_out)]) == EXIT_OK
    assert csv_out.read_text().splitlines()[0] == "epoch,omega_m,omega_s,omega_c,sigma_scale"


def test_simulate_bad_override():
    assert main(["simulate", "--profile", "nakamoto"]) == EXIT_CONFIG
    assert main(["simulate", "-n", "4", "-m", "9"]) == EXIT_CONFIG


@pytest.mark.parametrize("name", ["elastico", "takeover", "slowly-adaptive", "sbac-replay",
                                  "cross-shard-double-spend", "monoxide-dilution"])
def test_attacks(name, tmp_path):
    out = tmp_path / "a.json"
    assert main(["attack", name, "--seed", "42", "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["attack"] == name and doc["as_expected"] is True


def test_report_verb(tmp_path, capsys):
    out = tmp_path / "r.json"
    main(["verify", "closed-form", "cuckoo-churn", "-o", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ["PASS  closed-form", "PASS  cuckoo-churn"]
    doc = json.loads(out.read_text())
    doc["claims"][0]["pass"] = False
    out.write_text(json.dumps(doc))
    assert main(["report", str(out)]) == EXIT_FAIL
    assert main(["report", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_failing_claim_exit_code(tmp_path):
    out = tmp_path / "r.json"
    code = main(["verify", "scalability", "-o", str(out)])
    doc = json.loads(out.read_text())
    assert code == (EXIT_OK if doc["claims"][0]["pass"] else EXIT_FAIL)


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "shardsim", "verify", "closed-form"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["claims"][0]["pass"] is True

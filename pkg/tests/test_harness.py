import json

import pytest

from shardsim.crossshard import Protocol
from shardsim.harness.config import ConfigError, RunConfig, ScenarioConfig, load_config, parse_config
from shardsim.harness.profiles import PROFILES, ProfileError, ProtocolProfile, get_profile
from shardsim.harness.report import (
    ReportError, all_pass, build_report, claims_csv, dumps, load_report, summary_lines, validate,
)
from shardsim.harness.scenario import run_scenario
from shardsim.harness.verifiers import REGISTRY, UnknownClaim, claim_seed, run_claims, run_verifier


# -- config ------------------------------------------------------------------

def test_default_config():
    cfg = parse_config(None)
    assert cfg == RunConfig()
    assert cfg.scenario.profile == "omniledger" and cfg.verify.claims == ["all"]


def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError, match="scenario.bogus"):
        parse_config({"scenario": {"bogus": 1}})


def test_out_of_range_value():
    with pytest.raises(ConfigError, match="scenario.p"):
        parse_config({"scenario": {"p": 0.7}})
    with pytest.raises(ConfigError, match="profile"):
        parse_config({"scenario": {"profile": "bitcoin"}})
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_yaml_loading(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 7\nscenario:\n  profile: rapidchain\n  n: 800\n  workload:\n    inputs: 1\n")
    cfg = load_config(str(path))
    assert cfg.seed == 7 and cfg.scenario.n == 800 and cfg.scenario.workload.inputs == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(str(bad))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_digest_tracks_content():
    a = parse_config({"seed": 1})
    assert a.digest() == parse_config({"seed": 1}).digest()
    assert a.digest() != parse_config({"seed": 2}).digest()
    assert len(a.digest()) == 16


# -- profiles ----------------------------------------------------------------

def test_profiles_present():
    assert set(PROFILES) == {"elastico", "monoxide", "omniledger", "rapidchain", "baseline"}
    with pytest.raises(ProfileError):
        get_profile("nope")


def test_shard_count_rule():
    omni, rc = get_profile("omniledger"), get_profile("rapidchain")
    assert omni.log_coefficient == pytest.approx(300)
    assert rc.log_coefficient == pytest.approx(78)
    assert omni.shard_count(16000) == 5
    assert rc.shard_count(2000) == 3
    assert omni.shard_count(100) == 2
    assert get_profile("baseline").shard_count(10**6) == 1


def test_profile_cross_field_rules():
    base = get_profile("monoxide")
    with pytest.raises(ProfileError, match="light"):
        ProtocolProfile(**{**base.__dict__, "storage": "own"})
    with pytest.raises(ProfileError, match="p < a"):
        base.with_p(0.6)
    assert base.with_p(None) is base
    assert get_profile("omniledger").cross_shard is Protocol.ATOMIX


# -- scenarios ---------------------------------------------------------------

def test_omniledger_positive_conditions():
    small = run_scenario("omniledger", ScenarioConfig(n=4000, m=2, p=0.25, epochs=5), 42)
    big = run_scenario("omniledger", ScenarioConfig(n=4000, m=8, p=0.25, epochs=5), 42)
    assert big.violations == []
    assert all(big.checks.values())
    assert big.report.sigma_scale > small.report.sigma_scale


def test_elastico_attack_breaks_consistency():
    res = run_scenario("elastico", ScenarioConfig(profile="elastico", n=400, m=8, epochs=1, attack=True), 42)
    found = [v for v in res.violations if v.kind == "consistency"]
    assert found
    assert len(found[0].parties) == 2


def test_elastico_stores_everything():
    res = run_scenario("elastico", ScenarioConfig(profile="elastico", n=400, m=8, epochs=2), 1)
    assert res.report.omega_s == pytest.approx(400, rel=0.05)


def test_baseline_sigma_is_one():
    res = run_scenario("baseline", ScenarioConfig(profile="baseline", n=400), 3)
    assert res.m == 1 and res.report.sigma_scale == pytest.approx(1.0, rel=0.05)


@pytest.mark.parametrize("profile", sorted(PROFILES))
def test_profiles_run_clean(profile):
    res = run_scenario(profile, ScenarioConfig(profile=profile, n=400, epochs=2), 5)
    assert res.violations == [], [v.to_dict() for v in res.violations]
    assert res.stable_user_txs > 0
    assert res.report.identity_holds()


@pytest.mark.parametrize("profile", ["omniledger", "rapidchain", "monoxide"])
def test_cross_shard_double_spends_are_contained(profile):
    res = run_scenario(profile, ScenarioConfig(profile=profile, n=400, epochs=2, attack=True), 7)
    assert res.violations == []
    assert res.attack_pairs > 0
    assert "mixed" not in res.outcomes


def test_scenario_is_deterministic():
    cfg = ScenarioConfig(profile="rapidchain", n=600, epochs=2)
    a = json.dumps(run_scenario("rapidchain", cfg, 9).to_dict(), sort_keys=True)
    b = json.dumps(run_scenario("rapidchain", cfg, 9).to_dict(), sort_keys=True)
    assert a == b


def test_scenario_rejects_too_many_shards():
    with pytest.raises(ValueError):
        run_scenario("omniledger", ScenarioConfig(n=4, m=8), 0)


# -- verifiers and reports ---------------------------------------------------

def test_registry_ids():
    assert list(REGISTRY) == ["closed-form", "cross-shard-fraction", "shard-degree", "shard-honesty",
                              "elastico-attack", "adaptive-takeover", "storage-growth", "scalability",
                              "atomicity", "trace", "cuckoo-churn"]


def test_claim_seed_is_per_claim():
    assert claim_seed(42, "trace") == claim_seed(42, "trace")
    assert claim_seed(42, "trace") != claim_seed(42, "atomicity")


@pytest.mark.parametrize("claim", ["closed-form", "cross-shard-fraction", "elastico-attack",
                                   "adaptive-takeover", "storage-growth", "cuckoo-churn"])
def test_fast_claims_pass(claim):
    res = run_verifier(claim, 42)
    assert res.passed, res.to_dict()


def test_cross_fraction_claim_reports_expected_value():
    res = run_verifier("cross-shard-fraction", 42).to_dict()
    assert "0.9375" in json.dumps(res["expected"])


def test_storage_claim_meets_bound():
    res = run_verifier("storage-growth", 42).to_dict()
    assert res["pass"] and "6" in json.dumps(res["expected"])


def test_unknown_claim():
    with pytest.raises(UnknownClaim):
        run_claims(["no-such-claim"], 0)


def test_report_round_trip(tmp_path):
    results = run_claims(["closed-form", "elastico-attack"], 42)
    rep = build_report(42, "abc", results)
    assert set(rep) == {"schema_version", "config_digest", "seed", "claims", "factors", "violations"}
    path = tmp_path / "r.json"
    path.write_text(dumps(rep))
    assert load_report(str(path)) == json.loads(dumps(rep))
    assert all_pass(rep)
    assert summary_lines(rep) == ["PASS  closed-form", "PASS  elastico-attack"]
    lines = claims_csv(rep).splitlines()
    assert lines[0] == "id,anchor,expected,measured,tolerance,pass" and len(lines) == 3


def test_report_validation(tmp_path):
    with pytest.raises(ReportError, match="missing keys"):
        validate({"seed": 1})
    with pytest.raises(ReportError, match="schema_version"):
        validate({"schema_version": 9, "config_digest": "", "seed": 0, "claims": [], "factors": {},
                  "violations": []})
    bad = tmp_path / "x.json"
    bad.write_text("{not json")
    with pytest.raises(ReportError, match="not JSON"):
        load_report(str(bad))

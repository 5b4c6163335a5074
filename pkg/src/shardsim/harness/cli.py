"""Command line: simulate, verify, attack, report."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from ..adversary import (TakeoverSetup, adaptive_takeover_demo, elastico_double_spend,
                         monoxide_resilience, slowly_adaptive_epochs)
from ..crossshard import unfixed_double_creation
from .config import ConfigError, RunConfig, ScenarioConfig, load_config
from .report import ReportError, all_pass, build_report, claims_csv, dumps, load_report, summary_lines
from .scenario import run_scenario
from .verifiers import REGISTRY, UnknownClaim, run_claims

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

ATTACKS = ("elastico", "takeover", "slowly-adaptive", "sbac-replay", "cross-shard-double-spend",
           "monoxide-dilution")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--trials", type=int, help="trial count for Monte Carlo claims")
    p.add_argument("--out", choices=("json", "csv"), default="json", help="output format")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent claims")
    p.add_argument("-o", "--output", help="write to this file instead of stdout")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="shardsim", description="Sharded ledger simulator and verifier.")
    sub = parser.add_subparsers(dest="verb", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run one scenario")
    sim.add_argument("--profile", help="protocol profile (overrides the config)")
    sim.add_argument("-n", type=int, help="number of parties")
    sim.add_argument("-m", type=int, help="number of shards")
    sim.add_argument("--epochs", type=int)
    sim.add_argument("--attack", action="store_true", help="inject double-spend attempts")
    ver = sub.add_parser("verify", parents=[common], help="check claims")
    ver.add_argument("claim", nargs="+", help=f"claim id or 'all' ({', '.join(REGISTRY)})")
    att = sub.add_parser("attack", parents=[common], help="run a named attack")
    att.add_argument("name", choices=ATTACKS)
    rep = sub.add_parser("report", parents=[common], help="summarise or convert a JSON report")
    rep.add_argument("path")
    return parser


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials: must be >= 1")
        cfg = cfg.model_copy(update={"verify": cfg.verify.model_copy(update={"trials": args.trials})})
    if args.jobs < 1:
        raise ConfigError("--jobs: must be >= 1")
    return cfg


def _simulate(args: argparse.Namespace, cfg: RunConfig) -> int:
    updates = {k: v for k, v in (("profile", args.profile), ("n", args.n), ("m", args.m),
                                 ("epochs", args.epochs)) if v is not None}
    if args.attack:
        updates["attack"] = True
    try:
        scen = ScenarioConfig.model_validate({**cfg.scenario.model_dump(), **updates})
    except Exception as err:  # pydantic ValidationError
        raise ConfigError(f"scenario: {err}") from None
    res = run_scenario(scen.profile, scen, cfg.seed)
    if args.out == "csv":
        _emit(res.report.series_csv(), args.output)
    else:
        doc = res.to_dict()
        doc["config_digest"] = cfg.model_copy(update={"scenario": scen}).digest()
        _emit(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.output)
    return EXIT_FAIL if res.violations and not scen.attack else EXIT_OK


def _verify(args: argparse.Namespace, cfg: RunConfig) -> int:
    claims = args.claim or cfg.verify.claims
    try:
        results = run_claims(claims, cfg.seed, cfg.verify.trials, args.jobs)
    except UnknownClaim as err:
        raise ConfigError(f"unknown claim id {err.args[0]!r} (known: {', '.join(REGISTRY)})") from None
    report = build_report(cfg.seed, cfg.digest(), results)
    _emit(claims_csv(report) if args.out == "csv" else dumps(report), args.output)
    for line in summary_lines(report):
        print(line, file=sys.stderr)
    return EXIT_OK if all_pass(report) else EXIT_FAIL


def _attack(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed
    name = args.name
    if name == "elastico":
        res = run_scenario("elastico", ScenarioConfig(profile="elastico", n=400, m=8, epochs=1, attack=True), seed)
        found = [v.to_dict() for v in res.violations if v.kind == "consistency"]
        doc = {"attack": name, "success_rate": elastico_double_spend(8, 100_000, seed) / 100_000,
               "violations": found}
        ok = bool(found)
    elif name == "takeover":
        rep = adaptive_takeover_demo(TakeoverSetup(100, 10, 10, seed=seed))
        doc = {"attack": name, "report": json.loads(rep.to_json())}
        ok = rep.violated
    elif name == "slowly-adaptive":
        found = slowly_adaptive_epochs(100, 10, 10, 100, seed)
        doc = {"attack": name, "violations": [json.loads(v.to_json()) for v in found]}
        ok = not found
    elif name == "sbac-replay":
        doc = {"attack": name, "shapes": {n: r.to_dict() for n, r in unfixed_double_creation()}}
        ok = any(r["double_creations"] for r in doc["shapes"].values())
    elif name == "cross-shard-double-spend":
        doc = {"attack": name, "profiles": {}}
        ok = True
        for prof in ("omniledger", "rapidchain", "monoxide"):
            res = run_scenario(prof, ScenarioConfig(profile=prof, n=400, epochs=2, attack=True), seed)
            doc["profiles"][prof] = {"violations": [v.to_dict() for v in res.violations],
                                     "outcomes": dict(sorted(res.outcomes.items())),
                                     "rejected_user_txs": res.rejected_user_txs}
            ok &= not res.violations
    else:
        doc = {"attack": name, "bounds": {
            f"m{m}_mp{mp}": monoxide_resilience(m, mp, 1 - mp)._asdict()
            for m in (2, 4, 8, 16) for mp in (0.0, 0.25, 0.5)}}
        ok = True
    doc["as_expected"] = ok
    _emit(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.output)
    return EXIT_OK if ok else EXIT_FAIL


def _report(args: argparse.Namespace) -> int:
    report = load_report(args.path)
    if args.out == "csv":
        _emit(claims_csv(report), args.output)
    else:
        _emit("\n".join(summary_lines(report)) + "\n", args.output)
    return EXIT_OK if all_pass(report) else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "report":
            return _report(args)
        cfg = _config(args)
        if args.verb == "simulate":
            return _simulate(args, cfg)
        if args.verb == "verify":
            return _verify(args, cfg)
        return _attack(args, cfg)
    except (ConfigError, ReportError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

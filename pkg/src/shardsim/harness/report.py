"""Machine-readable run reports (JSON and CSV)."""

from __future__ import annotations

import csv
import io
import json
from typing import Iterable

from ..metrics import SCHEMA_VERSION
from .verifiers import ClaimResult

CLAIM_FIELDS = ("id", "anchor", "expected", "measured", "tolerance", "pass")


class ReportError(ValueError):
    pass


def build_report(seed: int, config_digest: str, results: Iterable[ClaimResult]) -> dict:
    results = list(results)
    factors: dict = {}
    violations: list = []
    for r in results:
        for key, value in r.factors.items():
            factors[f"{r.id}:{key}"] = value
        violations.extend(dict(v, claim=r.id) for v in r.violations)
    return {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest,
        "seed": seed,
        "claims": [r.to_dict() for r in results],
        "factors": factors,
        "violations": violations,
    }


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def claims_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CLAIM_FIELDS)
    for c in report["claims"]:
        w.writerow([c["id"], c["anchor"], json.dumps(c["expected"], sort_keys=True),
                    json.dumps(c["measured"], sort_keys=True), c["tolerance"], c["pass"]])
    return buf.getvalue()


def load_report(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise ReportError(f"{path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ReportError(f"{path}: not JSON ({err.msg})") from None
    validate(data)
    return data


def validate(data: object) -> None:
    if not isinstance(data, dict):
        raise ReportError("report must be a JSON object")
    missing = {"schema_version", "config_digest", "seed", "claims", "factors", "violations"} - set(data)
    if missing:
        raise ReportError(f"missing keys: {', '.join(sorted(missing))}")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ReportError(f"schema_version {data['schema_version']} (expected {SCHEMA_VERSION})")
    for i, c in enumerate(data["claims"]):
        gone = set(CLAIM_FIELDS) - set(c)
        if gone:
            raise ReportError(f"claims[{i}]: missing {', '.join(sorted(gone))}")


def all_pass(report: dict) -> bool:
    return all(c["pass"] for c in report["claims"])


def summary_lines(report: dict) -> list[str]:
    return [f"{'PASS' if c['pass'] else 'FAIL'}  {c['id']}" for c in report["claims"]]

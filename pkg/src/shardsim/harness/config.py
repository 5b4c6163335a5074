"""YAML run configuration. Unknown keys are rejected."""

from __future__ import annotations

import hashlib
import json
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .profiles import PROFILES


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WorkloadConfig(_Strict):
    tx_per_epoch: Optional[int] = Field(None, ge=1, description="default: 16 per shard")
    inputs: int = Field(2, ge=1, le=8)
    outputs: int = Field(3, ge=1, le=8)
    placement: Literal["uniform", "intra"] = "uniform"
    inject_conflicts: int = Field(0, ge=0)


class ScenarioConfig(_Strict):
    profile: str = "omniledger"
    n: int = Field(400, ge=1)
    m: Optional[int] = Field(None, ge=1, description="default: the profile's shard-count rule")
    p: Optional[float] = Field(None, ge=0, lt=0.5, description="default: the profile's p")
    epochs: int = Field(3, ge=1)
    rounds_per_epoch: int = Field(24, ge=1)
    block_capacity: int = Field(100, ge=1)
    attack: bool = False
    censor: bool = True
    workload: WorkloadConfig = WorkloadConfig()

    @field_validator("profile")
    @classmethod
    def _known(cls, v: str) -> str:
        if v not in PROFILES:
            raise ValueError(f"unknown profile {v!r} (known: {', '.join(sorted(PROFILES))})")
        return v

    @model_validator(mode="after")
    def _fits(self) -> "ScenarioConfig":
        if self.m is not None and self.m > self.n:
            raise ValueError(f"m={self.m} exceeds n={self.n}")
        return self


class VerifyConfig(_Strict):
    claims: list[str] = ["all"]
    trials: Optional[int] = Field(None, ge=1, description="default: each claim's own trial count")


class RunConfig(_Strict):
    seed: int = 0
    scenario: ScenarioConfig = ScenarioConfig()
    verify: VerifyConfig = VerifyConfig()

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _format(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        path = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{path}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: object) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from None
    return parse_config(data)

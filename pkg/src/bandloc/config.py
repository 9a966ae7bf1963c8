"""Strict parsing of flat JSON experiment configs."""
from __future__ import annotations

import json
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .ensembles import Ensemble
from .montecarlo import default_threads

EXPERIMENTS = ("decay", "apriori", "jacobian-verify", "shift-verify", "events",
               "correlator", "lemma-check")


class ConfigError(ValueError):
    """Syntax, unknown-key or type errors in a config document."""


# Per-experiment defaults; a key given in the document always wins.
EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "decay": {"W_list": [1, 2], "n_samples": 10_000},
    "apriori": {"W_list": [1, 2, 4], "n_list": list(range(1, 33)), "n_samples": 10_000},
    "jacobian-verify": {"W_list": [1, 2, 3], "trials": 100},
    "shift-verify": {"W_list": [2, 4, 8, 16], "n_samples": 100_000, "trials": 6},
    "events": {"W": 2, "n_list": [16, 32, 64], "n_samples": 20_000, "K": 1.0,
               "phi_fraction": 0.15},
    "correlator": {"W": 1, "n": 64, "n_samples": 1000},
    "lemma-check": {"trials": 100},
}


class MixtureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)
    support_bound: float
    atoms: list[tuple[float, float]]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    experiment: Literal["decay", "apriori", "jacobian-verify", "shift-verify", "events",
                        "correlator", "lemma-check"]
    seed: int = 0
    threads: int = Field(default_factory=default_threads, ge=1)
    out: str = "bandloc-out"

    # model
    n: int = Field(16, ge=1)
    W: int = Field(1, ge=1)
    ensemble: Ensemble = Field(Ensemble.WEGNER_COMPLEX, strict=False)
    z: float = 0.0
    mixture: Optional[MixtureConfig] = None

    # moments
    s: float = 0.5
    r: float = 0.25
    q: Optional[float] = None
    distances: list[int] = [8, 16, 32, 64, 128]
    n_list: list[int] = [16, 32, 64]
    W_list: list[int] = [1]
    n_samples: int = Field(10_000, ge=1)
    r_squared_min: float = 0.95
    envelope_misfit: float = 0.5

    # shift
    K: float = Field(4.0, ge=1.0)
    phi_fraction: float = 1 / 12
    sharp: float = Field(3.0, ge=3.0)
    trials: int = Field(100, ge=1)
    delta_W: float = 0.05
    fd_tolerance: float = 1e-4
    remainder_W_list: list[int] = [2, 4, 8]
    remainder_delta_W: float = 0.095
    cov_W: int = 2
    cov_n: int = 2
    cov_delta: float = 1e-3
    cov_samples: int = 100_000
    slope_window: float = 0.2
    remainder_slope_window: float = 0.3

    # events
    K_event: float = 16.0
    C_norm: float = 3.0
    tail_W: int = 4
    tail_K: float = 4.0
    tail_samples: int = 100_000

    # correlator
    pairs: list[tuple[int, int]] = [(1, 8), (1, 64)]
    dense_cap: int = 4096

    # lemma-check
    rs_pairs: list[tuple[float, float]] = [(0.25, 0.5), (0.1, 0.3), (0.2, 0.9), (0.5, 0.6)]
    mw_trials: int = 10_000

    @field_validator("s")
    @classmethod
    def _s_range(cls, v):
        if not 0 < v < 1:
            raise ValueError("s must lie in (0, 1)")
        return v

    @field_validator("phi_fraction")
    @classmethod
    def _phi_range(cls, v):
        if not 0 < v < 1 / 6:
            raise ValueError("phi_fraction must lie in (0, 1/6)")
        return v

    @field_validator("delta_W", "remainder_delta_W")
    @classmethod
    def _regime(cls, v):
        if not 0 < v < 0.1:
            raise ValueError("delta * W must lie in (0, 0.1)")
        return v

    @field_validator("distances", "n_list")
    @classmethod
    def _increasing(cls, v):
        if not v or v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("must be a nonempty strictly increasing list of positive integers")
        return v

    @field_validator("W_list", "remainder_W_list")
    @classmethod
    def _widths(cls, v):
        if not v or min(v) < 1:
            raise ValueError("widths must be positive")
        return v

    @model_validator(mode="after")
    def _cross(self):
        if not 0 < self.C_norm**2 < self.K_event:
            raise ValueError("need 0 < C_norm < sqrt(K_event)")
        if self.ensemble is Ensemble.GAUSSIAN_MIXTURE and self.mixture is None:
            raise ValueError("gaussian-mixture ensemble needs a mixture entry")
        return self


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ConfigError(f"duplicate key {k!r}")
        seen[k] = v
    return seen


def parse_config(text: str) -> ExperimentConfig:
    """Parse a flat JSON document into an ExperimentConfig.

    Errors carry the line/column (syntax) or the offending key (schema).
    """
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    exp = raw.get("experiment")
    merged = dict(EXPERIMENT_DEFAULTS.get(exp, {})) if isinstance(exp, str) else {}
    if exp == "decay" and "W" in raw and "W_list" not in raw:
        merged["W_list"] = [raw["W"]]
    merged.update(raw)
    try:
        return ExperimentConfig.model_validate_json(json.dumps(merged))
    except ValidationError as exc:
        parts = []
        for err in exc.errors():
            key = ".".join(str(p) for p in err["loc"]) or "<root>"
            parts.append(f"{key}: {err['msg']}")
        raise ConfigError("; ".join(parts)) from exc


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


def config_echo(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")

import json
import logging
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

logger = logging.getLogger("ntk-config")

CONFIG_FILE = "config.json"
DEFAULT_SEEDS = list(range(10))
DEFAULT_OUT = "runs"


# ── Command configs (one flat object per command, unknown keys rejected) ──────

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TrainRunConfig(_Strict):
    L: int = Field(1, ge=1)
    m: int = Field(128, ge=2)
    d: int = Field(6, ge=1)
    seed: int = Field(0, ge=0)
    eta: float = Field(0.1, gt=0)
    T: int = Field(500, ge=0)
    dataset: Literal["xor", "sphere"] = "xor"
    n: int = Field(20, ge=1)
    snapshot_every: int = Field(50, ge=1)
    probes: list[str] = []
    seeds: list[int] | None = None
    step_size_guard: bool = True
    reference: bool = False
    delta: float = Field(0.1, gt=0, lt=1)

    @field_validator("m")
    @classmethod
    def _even_width(cls, v):
        if v % 2:
            raise ValueError("width m must be even")
        return v


class SweepConfig(_Strict):
    vary: Literal["n", "d"] = "n"
    values: list[int] = [10, 12, 14, 16, 18, 20, 24, 28]
    d: int = Field(6, ge=3)
    n: int = Field(64, ge=1)
    L: int = Field(1, ge=1)
    m: int = Field(128, ge=2)
    eta: float = Field(0.1, gt=0)
    T: int = Field(500, ge=0)
    seeds: list[int] = DEFAULT_SEEDS

    @model_validator(mode="after")
    def _enough_cells(self):
        if len(self.values) < 3:
            raise ValueError(f"a sweep needs at least 3 values, got {len(self.values)}")
        if len(self.seeds) < 3:
            raise ValueError(f"a sweep needs at least 3 seeds, got {len(self.seeds)}")
        return self


class MarginConfig(_Strict):
    L: int = Field(1, ge=1)
    m: int = Field(128, ge=2)
    d: int = Field(6, ge=3)
    n: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    T: int = Field(500, ge=2)
    dataset: Literal["xor", "sphere"] = "xor"
    tol: float = Field(1e-8, gt=0)
    max_iters: int = Field(100_000, ge=1)
    trend_dims: list[int] = [4, 5, 6, 7, 8, 9, 10]
    flip_duplicate: bool = False


# ── Loading ───────────────────────────────────────────────────────────────────

def _describe(err: ValidationError) -> str:
    unknown = [".".join(str(p) for p in e["loc"]) for e in err.errors() if e["type"] == "extra_forbidden"]
    other = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}"
             for e in err.errors() if e["type"] != "extra_forbidden"]
    parts = []
    if unknown:
        parts.append(f"unknown key(s): {', '.join(unknown)}")
    parts.extend(other)
    return "; ".join(parts)


def parse_config(raw: dict, model: type[BaseModel]):
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {_describe(e)}") from e


def load_config(path: str | Path | None, model: type[BaseModel], overrides: dict | None = None,
                default_path: str | None = None):
    """Read a JSON config (or ``default_path`` when present), apply overrides and validate."""
    raw = {}
    candidate = Path(path) if path else (Path(default_path) if default_path else None)
    if path and not candidate.exists():
        raise ConfigError(f"config file not found: {candidate}")
    if candidate is not None and candidate.exists():
        try:
            with open(candidate, "r") as f:
                raw = json.load(f)
            logger.info(f"[CONFIG] Loaded: {candidate}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{candidate} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{candidate} must hold one JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_config(raw, model)


# ── Environment fallbacks ─────────────────────────────────────────────────────

def resolve_threads(cli_value: int | None) -> int:
    if cli_value is not None:
        value = cli_value
    else:
        env = os.environ.get("NTKLAB_THREADS", "")
        try:
            value = int(env) if env else 1
        except ValueError as e:
            raise ConfigError(f"NTKLAB_THREADS must be an integer, got '{env}'") from e
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def resolve_out(cli_value: str | None) -> Path:
    return Path(cli_value or os.environ.get("NTKLAB_OUT", DEFAULT_OUT))


def parse_seeds(text: str | None) -> list[int] | None:
    """'0,1,2' or '0-9' into a list of seeds."""
    if not text:
        return None
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError as e:
        raise ConfigError(f"cannot parse seed list '{text}'") from e
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be non-negative")
    return seeds


def parse_probe_args(pairs: list[str] | None) -> dict:
    args = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"probe argument '{pair}' is not of the form key=value")
        key, value = pair.split("=", 1)
        args[key.strip()] = value.strip()
    return args

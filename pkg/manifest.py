import json
import logging
import os
import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from checkpoint import write_csv

logger = logging.getLogger("ntk-manifest")

CODE_VERSION = "ntklab 0.1.0"
MANIFEST_NAME = "manifest.json"

# Expected 2-XOR population test errors (m=128, T=500, eta=0.1, two-layer net).
REFERENCE_ERRORS_BY_N = {10: 0.4625, 12: 0.4500, 14: 0.3625, 16: 0.3438, 18: 0.3219, 20: 0.3063, 24: 0.2469, 28: 0.2062}
REFERENCE_ERRORS_BY_D = {7: 0.0125, 8: 0.1313, 9: 0.2484, 10: 0.3080, 11: 0.3365, 12: 0.4190}
TABLE_TOLERANCE = 0.10
SLOPE_BRACKET = (0.10, 0.20)
SLOPE_MIN_R2 = 0.8

SWEEP_COLUMNS = ["n", "d", "d2_over_n", "mean_error", "std_error", "seeds"]


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: str
    status: Literal["running", "ok", "failed", "acceptance-failed", "empty"] = "running"
    config: dict[str, Any] = {}
    seeds: list[int] = []
    artifacts: list[str] = []
    timings: dict[str, float] = {}
    code_version: str = CODE_VERSION
    notes: list[str] = []
    summary: dict[str, Any] = {}
    checks: dict[str, bool] = {}
    error: str | None = None
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    host: str = Field(default_factory=platform.node)


class SweepRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int
    d: int
    d2_over_n: float
    mean_error: float
    std_error: float = Field(ge=0.0)
    seeds: int


class SweepResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vary: Literal["n", "d"]
    rows: list[SweepRow]
    slope: float
    intercept: float
    r2: float

    @model_validator(mode="after")
    def _sorted(self):
        keys = [r.d2_over_n for r in self.rows]
        if keys != sorted(keys):
            raise ValueError("sweep rows must be sorted by d^2/n")
        return self

    def to_csv(self, path) -> Path:
        return write_csv(path, SWEEP_COLUMNS,
                         ([r.n, r.d, r.d2_over_n, r.mean_error, r.std_error, r.seeds] for r in self.rows))

    def table_checks(self) -> dict:
        """Row-by-row comparison with the expected-error tables plus the slope bracket."""
        table = REFERENCE_ERRORS_BY_N if self.vary == "n" else REFERENCE_ERRORS_BY_D
        checks = {}
        for r in self.rows:
            key = r.n if self.vary == "n" else r.d
            if key in table:
                checks[f"{self.vary}={key}"] = abs(r.mean_error - table[key]) <= TABLE_TOLERANCE
        lo, hi = SLOPE_BRACKET
        checks["slope"] = lo <= self.slope <= hi
        checks["slope_r2"] = self.r2 >= SLOPE_MIN_R2
        return checks


# ── Writing ───────────────────────────────────────────────────────────────────

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, data) -> Path:
    """Write through a temp file and rename so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".new")
    with open(tmp, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    os.replace(tmp, path)
    return path


class RunRecorder:
    """Collects artifacts and timings for one command; writes the manifest last."""

    def __init__(self, out_dir, command: str, config: dict, seeds: list | None = None, notes: list | None = None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command=command, config=config, seeds=list(seeds or []), notes=list(notes or []))
        self._started = time.time()

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def add(self, path) -> Path:
        path = Path(path)
        rel = str(path.relative_to(self.out_dir)) if path.is_relative_to(self.out_dir) else str(path)
        if rel not in self.manifest.artifacts:
            self.manifest.artifacts.append(rel)
        return path

    def timing(self, key: str, seconds: float):
        self.manifest.timings[key] = round(seconds, 3)

    def note(self, text: str):
        self.manifest.notes.append(text)

    def finish(self, status: str = "ok", error: str | None = None, summary: dict | None = None,
               checks: dict | None = None) -> Path:
        m = self.manifest
        existing = [a for a in m.artifacts if (self.out_dir / a).exists() or Path(a).exists()]
        missing = sorted(set(m.artifacts) - set(existing))
        if missing:
            logger.warning(f"[MANIFEST] dropping {len(missing)} missing artifact(s): {', '.join(missing)}")
        m.artifacts = existing
        m.status = status
        m.error = error
        m.summary.update(summary or {})
        m.checks.update(checks or {})
        m.timings["total"] = round(time.time() - self._started, 3)
        path = write_json(self.out_dir / MANIFEST_NAME, m.model_dump(mode="json"))
        logger.info(f"[MANIFEST] {m.command} -> {path} ({status})")
        return path


def load_manifest(path) -> RunManifest:
    with open(path, "r") as f:
        return RunManifest.model_validate(json.load(f))

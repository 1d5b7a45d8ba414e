import json
import logging
from pathlib import Path

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from manifest import SweepResult, load_manifest

logger = logging.getLogger("ntk-report")

SWEEP_ARTIFACT = "sweep.json"


def _config_key(config: dict) -> str:
    return json.dumps({k: v for k, v in config.items() if k not in ("seed", "seeds")}, sort_keys=True)


def build_summary(manifest_paths) -> dict:
    """Merge manifests into one machine-readable summary. Missing files are listed, never fatal."""
    runs, sweeps, missing = [], [], []
    for raw in manifest_paths:
        path = Path(raw)
        try:
            manifest = load_manifest(path)
        except (OSError, ValueError, ValidationError) as e:
            logger.warning(f"[REPORT] cannot read {path}: {e}")
            missing.append(str(path))
            continue
        base = path.parent
        for art in manifest.artifacts:
            if not (base / art).exists():
                missing.append(str(base / art))
        runs.append({
            "manifest": str(path),
            "command": manifest.command,
            "status": manifest.status,
            "config": manifest.config,
            "summary": manifest.summary,
            "checks": manifest.checks,
        })
        if SWEEP_ARTIFACT in manifest.artifacts and (base / SWEEP_ARTIFACT).exists():
            try:
                with open(base / SWEEP_ARTIFACT) as f:
                    sweeps.append({"manifest": str(path), "result": SweepResult.model_validate(json.load(f))})
            except (OSError, ValueError, ValidationError) as e:
                logger.warning(f"[REPORT] bad sweep artifact next to {path}: {e}")
                missing.append(str(base / SWEEP_ARTIFACT))

    clashes = []
    by_command = {}
    for run in runs:
        by_command.setdefault(run["command"], []).append(run)
    for command, group in by_command.items():
        keys = {_config_key(r["config"]) for r in group}
        if len(keys) > 1:
            clashes.append({"command": command, "manifests": [r["manifest"] for r in group]})

    return {
        "runs": runs,
        "sweeps": [{"manifest": s["manifest"], **s["result"].model_dump(mode="json")} for s in sweeps],
        "missing": missing,
        "clashes": clashes,
        "check_lines": [f"{'PASS' if ok else 'FAIL'} {r['command']}:{k}" for r in runs for k, ok in r["checks"].items()],
    }


def render_summary(summary: dict, console: Console | None = None):
    console = console or Console()
    clashing = {m for c in summary["clashes"] for m in c["manifests"]}

    runs = Table(title="Runs")
    for col in ("manifest", "command", "status", "checks"):
        runs.add_column(col)
    for r in summary["runs"]:
        passed = sum(r["checks"].values())
        flag = " [clash]" if r["manifest"] in clashing else ""
        runs.add_row(r["manifest"] + flag, r["command"], r["status"], f"{passed}/{len(r['checks'])}")
    console.print(runs)

    for sweep in summary["sweeps"]:
        table = Table(title=f"xor sweep over {sweep['vary']} ({sweep['manifest']})")
        for col in ("n", "d", "d²/n", "mean error", "std", "seeds"):
            table.add_column(col, justify="right")
        for row in sweep["rows"]:
            table.add_row(str(row["n"]), str(row["d"]), f"{row['d2_over_n']:.2f}", f"{row['mean_error']:.4f}",
                          f"{row['std_error']:.4f}", str(row["seeds"]))
        console.print(table)
        console.print(f"slope {sweep['slope']:.4f}  intercept {sweep['intercept']:.4f}  r² {sweep['r2']:.3f}")

    for line in summary["check_lines"]:
        console.print(line)
    for c in summary["clashes"]:
        console.print(f"[yellow]clash[/yellow]: {c['command']} configs differ across {', '.join(c['manifests'])}")
    for m in summary["missing"]:
        console.print(f"[red]missing[/red]: {m}")

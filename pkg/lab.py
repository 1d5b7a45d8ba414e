import os

# one BLAS thread per process; --threads only sizes the worker pool
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from dotenv import load_dotenv
from rich.console import Console
from scipy import stats
from tqdm import tqdm

from checkpoint import save_checkpoint, write_csv, write_dataset_csv
from config import (
    CONFIG_FILE,
    MarginConfig,
    SweepConfig,
    TrainRunConfig,
    load_config,
    parse_probe_args,
    parse_seeds,
    resolve_out,
    resolve_threads,
)
from datasets import XorSpec, make_dataset, population_metrics, xor_population, xor_sample
from errors import EXIT_EMPTY, AcceptanceError, ConfigError, DivergenceError, LabError
from manifest import REFERENCE_ERRORS_BY_N, TABLE_TOLERANCE, RunRecorder, SweepResult, SweepRow, write_json
from margin import build_reference, solve_margin, tangent_features
from network import NetworkConfig, NetworkParams, init_symmetric
from probes import (
    ProbeReport,
    bound_check,
    descent_probe,
    drift_probe,
    flip_probe,
    grad_drift_probe,
    init_norm_probe,
    margin_trend,
    rademacher_iterates,
    run_probe,
    semi_smooth_probe,
)
from report import build_summary, render_summary
from trainer import TrainConfig, eval_F_S, eval_Ftilde_S, step_size_limits, train

logger = logging.getLogger("ntk-lab")

TRAIN_PROBES = ("flip", "drift", "grad-drift", "semi-smooth", "init-norm", "descent", "rademacher-iterates", "bound")
PROBE_CSV_COLUMNS = ["series", "x", "y"]

app = typer.Typer(add_completion=False, help="Gradient-descent lab for deep ReLU networks in the lazy-training regime.")


# ── Bootstrap ─────────────────────────────────────────────────────────────────

def setup_logging():
    level = os.environ.get("NTKLAB_LOG_LEVEL", "INFO").upper()
    handler = logging.StreamHandler()
    if os.environ.get("NTKLAB_LOG_FORMAT", "").lower() == "json":
        from pythonjsonlogger.json import JsonFormatter
        handler.setFormatter(JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s:%(name)s:%(message)s"))
    logging.basicConfig(level=level, handlers=[handler], force=True)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def init_sentry():
    dsn = os.environ.get("SENTRY_DSN", "")
    if dsn:
        import sentry_sdk
        sentry_sdk.init(
            dsn=dsn,
            traces_sample_rate=0.0,
            environment=os.environ.get("ENVIRONMENT", "local"),
        )
        logger.info("[LAB] Sentry error tracking enabled")


@app.callback()
def main():
    load_dotenv()
    setup_logging()
    init_sentry()


def _record_failure(recorder: RunRecorder, e: Exception, checks: dict | None = None):
    if isinstance(e, LabError):
        logger.error(f"[LAB] {recorder.manifest.command} failed: {type(e).__name__}: {e}")
    else:
        logger.exception(f"[LAB] {recorder.manifest.command} crashed: {type(e).__name__}: {e}")
    status = "acceptance-failed" if isinstance(e, AcceptanceError) else "failed"
    recorder.finish(status=status, error=f"{type(e).__name__}: {e}", checks=checks)


def _require(checks: dict, what: str):
    failed = [k for k, v in checks.items() if not v]
    if failed:
        shown = ", ".join(failed[:10]) + (" ..." if len(failed) > 10 else "")
        raise AcceptanceError(f"{what}: {len(failed)} check(s) failed: {shown}")


def _report_artifacts(report: ProbeReport, out_dir: Path, plot: bool) -> list:
    """JSON plus series CSV (and SVGs when asked) for one report."""
    paths = [write_json(out_dir / f"{report.name}.json", report.model_dump(mode="json"))]
    if report.series:
        paths.append(write_csv(out_dir / f"{report.name}.csv", PROBE_CSV_COLUMNS, report.series_rows()))
        if plot:
            from plots import plot_report
            paths.extend(plot_report(report, out_dir))
    return paths


def _run_pool(fn, jobs: list, threads: int, desc: str) -> dict:
    """fn(*args) per (key, args) job; results keyed so completion order never matters."""
    results = {}
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(fn, *args): key for key, args in jobs}
            for future in tqdm(as_completed(futures), total=len(futures), desc=desc, leave=False):
                results[futures[future]] = future.result()
    else:
        for key, args in tqdm(jobs, desc=desc, leave=False):
            results[key] = fn(*args)
    return results


# ══════════════════════════════════════════════════════════════════════════════
# TRAIN
# ══════════════════════════════════════════════════════════════════════════════

def _train_probes(names, init, final, traj, data, ref, cfg: TrainRunConfig, seed: int) -> list:
    reports = []
    for name in names:
        if name == "flip":
            reports.append(flip_probe(init, final, data))
        elif name == "drift":
            reports.append(drift_probe(init, final, data))
        elif name == "grad-drift":
            reports.append(grad_drift_probe(init, final, data))
        elif name == "semi-smooth":
            reports.append(semi_smooth_probe(final, ref.params if ref else init, data, init=init))
        elif name == "init-norm":
            reports.append(init_norm_probe(init, data.inputs))
        elif name == "descent":
            reports.append(descent_probe(traj, ref.params, data, cfg.eta, init=init))
        elif name == "rademacher-iterates":
            reports.append(rademacher_iterates(traj, data, seed=seed))
        elif name == "bound":
            population = xor_population(XorSpec(d=cfg.d, seed=seed))
            reports.append(bound_check(traj, ref, init, data, population, cfg.eta, delta=cfg.delta, seed=seed))
    return reports


def _train_one(cfg: TrainRunConfig, seed: int, out_dir: str, plot: bool) -> dict:
    """One seed end to end. Returns artifact paths, summary numbers and probe checks."""
    seed_dir = Path(out_dir) / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    artifacts, summary, checks = [], {}, {}

    init = init_symmetric(NetworkConfig(L=cfg.L, m=cfg.m, d=cfg.d, seed=seed))
    data = make_dataset(cfg.dataset, cfg.d, cfg.n, seed)
    artifacts.append(write_dataset_csv(seed_dir / "train.csv", data.inputs, data.labels))
    artifacts.append(save_checkpoint(seed_dir / "init.ckpt", init, seed, 0))

    ref = None
    if cfg.reference:
        cert = solve_margin(tangent_features(init, data))
        summary["gamma"] = cert.gamma
        if cert.separable:
            ref = build_reference(init, cert, max(cfg.T, 2), data)
            summary["reference_min_margin"] = float(np.min(ref.margins))
            summary["F_S"] = eval_F_S(ref.params, init, data, cfg.eta, max(cfg.T, 1)).value
            summary["step_size_limit"] = step_size_limits(cfg.L, eval_Ftilde_S(ref.params, data))["limit"]
        else:
            logger.warning(f"[TRAIN] seed={seed}: training set is not NTK-separable, no reference")
            if {"descent", "bound"} & set(cfg.probes):
                raise ConfigError(f"seed {seed}: descent/bound probes need a separable training set")

    tcfg = TrainConfig(eta=cfg.eta, T=cfg.T, snapshot_every=cfg.snapshot_every,
                       step_size_guard=cfg.step_size_guard, checkpoint_dir=str(seed_dir / "snapshots"))
    try:
        traj = train(init, data, tcfg, reference=ref.params if ref else None, seed=seed)
    except DivergenceError as e:
        if e.partial is not None and e.partial.steps:
            e.partial.to_csv(seed_dir / "trajectory.partial.csv")
        raise
    artifacts.append(traj.to_csv(seed_dir / "trajectory.csv"))
    artifacts.extend(s.path for s in traj.snapshots if s.path is not None)
    final = traj.final.load()
    if cfg.T > 0:
        artifacts.append(save_checkpoint(seed_dir / "final.ckpt", final, seed, cfg.T))

    summary["final_train_loss"] = traj.train_loss[-1]
    summary["dist_from_init"] = traj.dist_from_init[-1]
    if cfg.dataset == "xor":
        pop = population_metrics(final, xor_population(XorSpec(d=cfg.d, seed=seed)))
        summary["population_zero_one_error"] = pop.zero_one_error
        summary["population_loss"] = pop.logistic_loss

    for report in _train_probes(cfg.probes, init, final, traj, data, ref, cfg, seed):
        artifacts.extend(_report_artifacts(report, seed_dir, plot))
        checks.update({f"seed{seed}:{report.name}:{k}": v for k, v in report.checks.items()})
    return {"artifacts": [str(p) for p in artifacts], "summary": summary, "checks": checks}


def _train_notes(cfg: TrainRunConfig) -> list:
    notes = []
    if cfg.dataset == "xor" and cfg.T > 0:
        notes.append(f"eta*T = {cfg.eta * cfg.T:g} is fixed across n; the excess-risk rate assumes eta*T of order n "
                     f"(here n = {cfg.n})")
    if cfg.reference:
        notes.append("margin and reference certified on the training sample only")
    return notes


def _table_row(cfg: TrainRunConfig) -> float | None:
    if (cfg.dataset, cfg.L, cfg.m, cfg.T, cfg.d) == ("xor", 1, 128, 500, 6) and math.isclose(cfg.eta, 0.1):
        return REFERENCE_ERRORS_BY_N.get(cfg.n)
    return None


def cmd_train(cfg: TrainRunConfig, out_dir: Path, seeds: list | None = None, threads: int = 1,
              plot: bool = False, check: bool = False) -> Path:
    seeds = seeds or cfg.seeds or [cfg.seed]
    recorder = RunRecorder(out_dir, "train", cfg.model_dump(mode="json"), seeds, _train_notes(cfg))
    checks = {}
    try:
        unknown = [p for p in cfg.probes if p not in TRAIN_PROBES]
        if unknown:
            raise ConfigError(f"unknown probe(s) {', '.join(unknown)}; available in train: {', '.join(TRAIN_PROBES)}")
        if {"descent", "bound"} & set(cfg.probes) and not cfg.reference:
            raise ConfigError('descent and bound probes need "reference": true')
        if "bound" in cfg.probes and cfg.dataset != "xor":
            raise ConfigError("the bound probe needs the xor dataset (exact population)")
        started = time.time()
        results = _run_pool(_train_one, [(s, (cfg, s, str(out_dir), plot)) for s in seeds], threads, "train")
        recorder.timing("train", time.time() - started)
        per_seed = {}
        for s in seeds:
            for art in results[s]["artifacts"]:
                recorder.add(art)
            per_seed[str(s)] = results[s]["summary"]
            checks.update(results[s]["checks"])
        summary = {"per_seed": per_seed}
        errors = [r["population_zero_one_error"] for r in per_seed.values() if "population_zero_one_error" in r]
        if errors:
            summary["mean_population_zero_one_error"] = float(np.mean(errors))
            summary["std_population_zero_one_error"] = float(np.std(errors))
            expected = _table_row(cfg)
            if expected is not None:
                summary["expected_error"] = expected
                checks["table_error"] = abs(float(np.mean(errors)) - expected) <= TABLE_TOLERANCE
                if not checks["table_error"]:
                    recorder.note(f"mean error misses the expected {expected} by more than {TABLE_TOLERANCE} "
                                  f"(known deviation at eta*T = {cfg.eta * cfg.T:g}, see DESIGN.md)")
        recorder.manifest.summary.update(summary)
        if check:
            _require(checks, "train")
        return recorder.finish("ok", checks=checks)
    except Exception as e:
        _record_failure(recorder, e, checks)
        raise


# ══════════════════════════════════════════════════════════════════════════════
# XOR SWEEP
# ══════════════════════════════════════════════════════════════════════════════

def _xor_cell(L: int, m: int, d: int, n: int, eta: float, T: int, seed: int) -> float:
    init = init_symmetric(NetworkConfig(L=L, m=m, d=d, seed=seed))
    spec = XorSpec(d=d, seed=seed)
    traj = train(init, xor_sample(spec, n), TrainConfig(eta=eta, T=T, snapshot_every=max(T, 1), step_size_guard=False))
    return population_metrics(traj.final.load(), xor_population(spec)).zero_one_error


def aggregate_sweep(vary: str, cells: list) -> SweepResult:
    """cells are (n, d, seed, error); one row per distinct (n, d) and a free-intercept fit of error on d²/n."""
    groups = {}
    for n, d, _, err in cells:
        groups.setdefault((n, d), []).append(err)
    rows = sorted(
        (SweepRow(n=n, d=d, d2_over_n=d * d / n, mean_error=float(np.mean(errs)), std_error=float(np.std(errs)),
                  seeds=len(errs)) for (n, d), errs in groups.items()),
        key=lambda r: r.d2_over_n,
    )
    x = np.array([r.d2_over_n for r in rows])
    y = np.array([r.mean_error for r in rows])
    if len(rows) >= 2 and np.ptp(x) > 0:
        res = stats.linregress(x, y)
        slope, intercept, r2 = float(res.slope), float(res.intercept), float(res.rvalue) ** 2
    else:
        logger.warning("[SWEEP] fewer than two distinct d^2/n values; slope undefined")
        slope, intercept, r2 = float("nan"), float(np.mean(y)), 0.0
    return SweepResult(vary=vary, rows=rows, slope=slope, intercept=intercept, r2=r2)


def cmd_xor_sweep(cfg: SweepConfig, out_dir: Path, threads: int = 1, plot: bool = False,
                  check: bool = False) -> SweepResult:
    seeds = cfg.seeds
    recorder = RunRecorder(out_dir, "xor-sweep", cfg.model_dump(mode="json"), seeds,
                           [f"eta*T = {cfg.eta * cfg.T:g} is held fixed while {cfg.vary} varies"])
    checks = {}
    try:
        jobs = []
        for value in cfg.values:
            n, d = (value, cfg.d) if cfg.vary == "n" else (cfg.n, value)
            jobs.extend(((n, d, s), (cfg.L, cfg.m, d, n, cfg.eta, cfg.T, s)) for s in seeds)
        logger.info(f"[SWEEP] {len(jobs)} cells ({len(cfg.values)} values x {len(seeds)} seeds), {threads} worker(s)")
        started = time.time()
        results = _run_pool(_xor_cell, jobs, threads, "xor-sweep")
        recorder.timing("cells", time.time() - started)
        cells = [(n, d, s, results[(n, d, s)]) for (n, d, s), _ in jobs]
        result = aggregate_sweep(cfg.vary, cells)

        recorder.add(write_csv(recorder.path("cells.csv"), ["n", "d", "seed", "zero_one_error"], cells))
        recorder.add(result.to_csv(recorder.path("sweep.csv")))
        recorder.add(write_json(recorder.path("sweep.json"), result.model_dump(mode="json")))
        if plot:
            from plots import plot_sweep
            recorder.add(plot_sweep(result.rows, result, recorder.path("sweep.svg")))
        checks = result.table_checks()
        missed = [k for k, ok in checks.items() if not ok]
        if missed:
            recorder.note(f"outside the expected-error table: {', '.join(missed)} "
                          f"(known deviation at eta*T = {cfg.eta * cfg.T:g}, see DESIGN.md)")
        logger.info(f"[SWEEP] slope={result.slope:.4f} intercept={result.intercept:.4f} r2={result.r2:.3f}")
        recorder.manifest.summary.update({"slope": result.slope, "intercept": result.intercept, "r2": result.r2})
        if check:
            _require(checks, "xor-sweep")
        recorder.finish("ok", checks=checks)
        return result
    except Exception as e:
        _record_failure(recorder, e, checks)
        raise


# ══════════════════════════════════════════════════════════════════════════════
# MARGIN
# ══════════════════════════════════════════════════════════════════════════════

def cmd_margin(cfg: MarginConfig, out_dir: Path, trend: bool = False, plot: bool = False, check: bool = False) -> dict:
    recorder = RunRecorder(out_dir, "margin", cfg.model_dump(mode="json"), [cfg.seed],
                           ["margin certified on the training sample only"])
    checks = {}
    try:
        init = init_symmetric(NetworkConfig(L=cfg.L, m=cfg.m, d=cfg.d, seed=cfg.seed))
        data = make_dataset(cfg.dataset, cfg.d, cfg.n, cfg.seed)
        if cfg.flip_duplicate:
            data = data.with_flipped_copy(0)
        started = time.time()
        cert = solve_margin(tangent_features(init, data), tol=cfg.tol, max_iters=cfg.max_iters)
        recorder.timing("solve", time.time() - started)
        payload = {**cert.to_json(), "m": cfg.m, "L": cfg.L, "d": cfg.d, "n": data.n, "seed": cfg.seed}
        checks = {"separable": cert.separable, "converged": cert.converged}
        if cert.separable:
            direction = NetworkParams(cert.W_star.matrices, init.a)
            recorder.add(save_checkpoint(recorder.path("w_star.ckpt"), direction, cfg.seed, 0, {"kind": "direction"}))
            ref = build_reference(init, cert, cfg.T, data)
            recorder.add(save_checkpoint(recorder.path("reference.ckpt"), ref.params, cfg.seed, 0, {"kind": "reference"}))
            payload.update({"reference_scale": ref.scale, "reference_shift": ref.shift_norm,
                            "reference_min_margin": float(np.min(ref.margins)), "log_T": math.log(cfg.T)})
        else:
            logger.info("[MARGIN] gamma = 0, reference model refused")
            payload["reference"] = "refused: margin is zero"
        recorder.add(write_json(recorder.path("certificate.json"), payload))
        recorder.manifest.summary.update({k: payload[k] for k in ("gamma", "dual_gap", "min_margin")})
        if trend:
            report = margin_trend(cfg.trend_dims, m=cfg.m, L=cfg.L, seed=cfg.seed)
            for path in _report_artifacts(report, out_dir, plot):
                recorder.add(path)
            checks.update({f"trend:{k}": v for k, v in report.checks.items()})
            recorder.manifest.summary["trend_exponent"] = report.scalars["exponent"]
            if not report.checks["exponent_in_bracket"]:
                recorder.note(f"inverse-margin exponent {report.scalars['exponent']:.3g} outside [0.7, 1.4] "
                              f"on the full support (known deviation, see DESIGN.md)")
        if check:
            _require(checks, "margin")
        recorder.finish("ok", checks=checks)
        return payload
    except Exception as e:
        _record_failure(recorder, e, checks)
        raise


# ══════════════════════════════════════════════════════════════════════════════
# PROBE / REPORT
# ══════════════════════════════════════════════════════════════════════════════

def cmd_probe(name: str, args: dict, out_dir: Path, seed: int = 0, threads: int = 1,
              plot: bool = False, check: bool = False) -> ProbeReport:
    recorder = RunRecorder(out_dir, "probe", {"name": name, "args": args, "seed": seed}, [seed])
    checks = {}
    try:
        started = time.time()
        report = run_probe(name, args, seed, threads)
        recorder.timing("probe", time.time() - started)
        for path in _report_artifacts(report, out_dir, plot):
            recorder.add(path)
        checks = dict(report.checks)
        recorder.manifest.summary.update(report.scalars)
        if check:
            _require(checks, f"probe {name}")
        recorder.finish("ok", checks=checks)
        return report
    except Exception as e:
        _record_failure(recorder, e, checks)
        raise


def cmd_report(paths: list, out_dir: Path | None = None, console: Console | None = None) -> dict:
    summary = build_summary(paths)
    render_summary(summary, console)
    if out_dir is not None:
        write_json(Path(out_dir) / "summary.json", summary)
    return summary


# ── typer surface ─────────────────────────────────────────────────────────────

_CSV_HELP = ("CSV floats carry 17 significant digits. trajectory.csv: step,train_loss,dist_from_init,dist_from_ref,"
             "grad_norm. sweep.csv: n,d,d2_over_n,mean_error,std_error,seeds. probe CSVs: series,x,y.")


def _exit_on(e: LabError) -> typer.Exit:
    logger.error(f"[LAB] {type(e).__name__}: {e}")
    return typer.Exit(code=e.exit_code)


@app.command("train", help=f"Train per seed, run probes, write artifacts and a manifest. {_CSV_HELP}")
def train_command(
    config: Optional[Path] = typer.Option(None, "--config", help="JSON config (default: ./config.json)"),
    out: Optional[str] = typer.Option(None, "--out", help="output root (env NTKLAB_OUT)"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="e.g. 0,1,2 or 0-9"),
    threads: Optional[int] = typer.Option(None, "--threads", help="worker processes (env NTKLAB_THREADS)"),
    plot: bool = typer.Option(False, "--plot", help="emit SVG plots per probe series"),
    check: bool = typer.Option(False, "--check", help="exit 4 if any acceptance check fails"),
):
    try:
        cfg = load_config(config, TrainRunConfig, default_path=CONFIG_FILE)
        path = cmd_train(cfg, resolve_out(out) / "train", parse_seeds(seeds), resolve_threads(threads), plot, check)
    except LabError as e:
        raise _exit_on(e) from e
    typer.echo(str(path))


@app.command("xor-sweep", help=f"Population error on 2-XOR against d²/n, over n or over d. {_CSV_HELP}")
def xor_sweep_command(
    config: Optional[Path] = typer.Option(None, "--config"),
    vary: Optional[str] = typer.Option(None, "--vary", help="n or d"),
    values: Optional[str] = typer.Option(None, "--values", help="comma-separated values"),
    out: Optional[str] = typer.Option(None, "--out"),
    seeds: Optional[str] = typer.Option(None, "--seeds"),
    threads: Optional[int] = typer.Option(None, "--threads"),
    plot: bool = typer.Option(False, "--plot"),
    check: bool = typer.Option(False, "--check"),
):
    try:
        try:
            parsed = [int(v) for v in values.split(",")] if values else None
        except ValueError as e:
            raise ConfigError(f"--values must be comma-separated integers, got '{values}'") from e
        cfg = load_config(config, SweepConfig, {"vary": vary, "values": parsed, "seeds": parse_seeds(seeds)})
        result = cmd_xor_sweep(cfg, resolve_out(out) / f"xor-sweep-{cfg.vary}", resolve_threads(threads), plot, check)
    except LabError as e:
        raise _exit_on(e) from e
    render_summary({"runs": [], "sweeps": [{"manifest": "-", **result.model_dump(mode="json")}],
                    "missing": [], "clashes": [], "check_lines": []})


@app.command("margin", help="Certify the NTK margin of a dataset and build the reference model.")
def margin_command(
    config: Optional[Path] = typer.Option(None, "--config"),
    out: Optional[str] = typer.Option(None, "--out"),
    trend: bool = typer.Option(False, "--trend", help="also fit 1/gamma against d on 2-XOR"),
    plot: bool = typer.Option(False, "--plot"),
    check: bool = typer.Option(False, "--check"),
):
    try:
        cfg = load_config(config, MarginConfig)
        payload = cmd_margin(cfg, resolve_out(out) / "margin", trend, plot, check)
    except LabError as e:
        raise _exit_on(e) from e
    typer.echo(json.dumps({k: payload[k] for k in ("gamma", "dual_gap", "converged")}))


@app.command("probe", help=f"Run one probe from the catalog. {_CSV_HELP}")
def probe_command(
    name: str = typer.Argument(..., help="probe name"),
    arg: Optional[list[str]] = typer.Option(None, "--arg", help="probe argument key=value, repeatable"),
    seed: int = typer.Option(0, "--seed"),
    out: Optional[str] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
    plot: bool = typer.Option(False, "--plot"),
    check: bool = typer.Option(False, "--check"),
):
    try:
        report = cmd_probe(name, parse_probe_args(arg), resolve_out(out) / f"probe-{name}", seed,
                           resolve_threads(threads), plot, check)
    except LabError as e:
        raise _exit_on(e) from e
    for line in report.check_lines():
        typer.echo(line)


@app.command("report", help="Merge run manifests into one table and a summary.json.")
def report_command(
    manifests: Optional[list[Path]] = typer.Argument(None, help="manifest.json paths"),
    out: Optional[str] = typer.Option(None, "--out"),
):
    if not manifests:
        typer.echo("no manifests given: empty summary")
        raise typer.Exit(code=EXIT_EMPTY)
    summary = cmd_report(manifests, resolve_out(out))
    if not summary["runs"]:
        raise typer.Exit(code=EXIT_EMPTY)


if __name__ == "__main__":
    app()

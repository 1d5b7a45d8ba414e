"""Measurements of the quantities the lazy-training analysis bounds.

Each probe returns a ``ProbeReport``: scalars, optional (x, y) series, an
optional log-log fit and named pass/fail checks. Probes never mutate their
inputs and draw randomness only from Philox streams keyed by the seed they
are given, so re-running a probe is bit-identical.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats
from tqdm import tqdm

from datasets import LabeledDataset, XorSpec, population_metrics, sphere_dataset, sphere_sample, xor_population, xor_sample
from errors import ConfigError, PreconditionError
from margin import ReferenceModel, solve_margin, tangent_features
from network import (
    STREAM_PROBE,
    NetworkConfig,
    NetworkParams,
    accurate_mean,
    backprop_deltas,
    directional_derivative,
    forward_batch,
    gradient_gram,
    init_symmetric,
    layer_distances,
    linearized_output,
    per_sample_gradient_norms,
    philox_stream,
    product_operator_norm,
    random_perturbation,
    spectral_norm,
    targeted_perturbation,
    trace_batch,
)
from trainer import Trajectory, empirical_risk, eval_F_S

logger = logging.getLogger("ntk-probes")

FIT_R2_FLAG = 0.7
DEFAULT_DELTA = 0.1
DEFAULT_C0 = 3.0
DEFAULT_DRIFT_C = 10.0
MAX_ENUMERATION_N = 16
# random: Gaussian direction per layer; targeted: cheapest sign flips at one input
PERTURBATIONS = ("random", "targeted")
# power-iteration residual tolerance for the init-norm checks
INIT_NORM_POWER_TOL = 1e-4

# probe ids inside STREAM_PROBE
_ID_SWEEP = 1
_ID_LIPSCHITZ = 2
_ID_INDICATOR = 3
_ID_RADEMACHER = 4
_ID_ITERATES = 5


# ══════════════════════════════════════════════════════════════════════════════
# REPORT TYPES
# ══════════════════════════════════════════════════════════════════════════════

class Series(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: list[float]
    y: list[float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"series has {len(self.x)} x values but {len(self.y)} y values")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("series x must be strictly increasing")
        return self


class Fit(BaseModel):
    model_config = ConfigDict(extra="forbid")

    exponent: float
    intercept: float
    r2: float = Field(ge=0.0, le=1.0)
    points: int
    flagged: bool = False


_NONNEGATIVE_KEYS = ("flips", "drift", "norm", "residual", "distance")


class ProbeReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    scalars: dict[str, float] = {}
    series: dict[str, Series] = {}
    fit: Fit | None = None
    meta: dict[str, Any] = {}
    checks: dict[str, bool] = {}

    @model_validator(mode="after")
    def _check_bounds(self):
        m = self.meta.get("m")
        for key, value in self.scalars.items():
            if math.isnan(value):
                continue
            if any(k in key for k in _NONNEGATIVE_KEYS) and value < 0:
                raise ValueError(f"{key}={value} must be >= 0")
            if "flips" in key and m is not None and value > m:
                raise ValueError(f"{key}={value} exceeds width m={m}")
            if key.endswith("zero_one_error") and not 0.0 <= value <= 1.0:
                raise ValueError(f"{key}={value} outside [0, 1]")
        return self

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def check_lines(self) -> list:
        return [f"{'PASS' if ok else 'FAIL'} {self.name}:{key}" for key, ok in self.checks.items()]

    def series_rows(self):
        for key, s in self.series.items():
            for x, y in zip(s.x, s.y):
                yield key, x, y


@dataclass(frozen=True)
class ScalingSweep:
    widths: tuple
    repeats: int = 10
    L: int = 2
    d: int = 5
    n: int = 16
    R: float = 1.0
    perturbation: str | None = None

    def __post_init__(self):
        resolve_perturbation("flip", self.perturbation)
        widths = tuple(int(m) for m in self.widths)
        if len(widths) < 2 or any(b <= a for a, b in zip(widths, widths[1:])):
            raise ConfigError(f"sweep widths must be >= 2 increasing values, got {widths}")
        if self.repeats < 1:
            raise ConfigError(f"sweep repeats must be >= 1, got {self.repeats}")
        object.__setattr__(self, "widths", widths)

    def perturbation_for(self, kind: str) -> str:
        return resolve_perturbation(kind, self.perturbation)


def resolve_perturbation(kind: str, mode: str | None = None) -> str:
    """The flip measurements default to the targeted direction, the others to a random one."""
    if mode is None:
        return "targeted" if kind == "flip" else "random"
    if mode not in PERTURBATIONS:
        raise ConfigError(f"unknown perturbation '{mode}' (known: {', '.join(PERTURBATIONS)})")
    return mode


def fit_power_law(x, y) -> Fit | None:
    """Least-squares line through (log x, log y); points with y <= 0 are dropped."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        logger.warning(f"[FIT] only {int(keep.sum())} positive points, no power-law fit")
        return None
    res = stats.linregress(np.log(x[keep]), np.log(y[keep]))
    r2 = float(res.rvalue) ** 2
    r2 = 0.0 if not math.isfinite(r2) else min(max(r2, 0.0), 1.0)
    return Fit(exponent=float(res.slope), intercept=float(res.intercept), r2=r2,
               points=int(keep.sum()), flagged=r2 < FIT_R2_FLAG)


def _meta(params: NetworkParams | None = None, **extra) -> dict:
    meta = {"delta": DEFAULT_DELTA}
    if params is not None:
        meta.update({"m": params.m, "L": params.L, "d": params.d})
    meta.update({k: v for k, v in extra.items() if v is not None})
    return meta


def _per_layer_series(values: np.ndarray) -> Series:
    """Max over samples for each layer 1..L."""
    return Series(x=list(range(1, values.shape[1] + 1)), y=[float(v) for v in values.max(axis=0)])


# ══════════════════════════════════════════════════════════════════════════════
# MEASUREMENTS (shared by single probes and width sweeps)
# ══════════════════════════════════════════════════════════════════════════════

def flip_counts(init: NetworkParams, perturbed: NetworkParams, X) -> np.ndarray:
    """‖Σˡ(x_i) − Σˡ₀(x_i)‖₀ as an (n, L) integer array."""
    _, t0 = trace_batch(init, X, strict=False)
    _, t1 = trace_batch(perturbed, X, strict=False)
    return np.stack([np.count_nonzero(s1 != s0, axis=1) for s0, s1 in zip(t0.sigma, t1.sigma)], axis=1)


def hidden_drifts(init: NetworkParams, perturbed: NetworkParams, X) -> tuple:
    """(n, L) array of ‖hˡ(x_i) − hˡ₀(x_i)‖₂, plus both output vectors."""
    f0, t0 = trace_batch(init, X, strict=False)
    f1, t1 = trace_batch(perturbed, X, strict=False)
    drifts = np.stack([np.linalg.norm(h1 - h0, axis=1) for h0, h1 in zip(t0.h[1:], t1.h[1:])], axis=1)
    return drifts, f0, f1


def _drift_shape(params: NetworkParams, R: float) -> float:
    """L²·R·√(log m / m), the width dependence of the uniform hidden-drift bound."""
    return params.L ** 2 * R * math.sqrt(math.log(params.m) / params.m)


def gradient_drifts(init: NetworkParams, perturbed: NetworkParams, X) -> tuple:
    """(n, L) drifts ‖∂f_W(x_i)/∂Wˡ − ∂f_{W(0)}(x_i)/∂Wˡ‖_F and the matching norms of both gradients.

    Both gradients are rank one (δ hᵀ), so
    ‖δhᵀ − δ₀h₀ᵀ‖² = ‖δ−δ₀‖²‖h‖² + ‖δ₀‖²‖h−h₀‖² + 2⟨δ−δ₀, δ₀⟩⟨h, h−h₀⟩.
    """
    _, t0 = trace_batch(init, X, strict=False)
    _, t1 = trace_batch(perturbed, X, strict=False)
    d0 = backprop_deltas(init, t0)
    d1 = backprop_deltas(perturbed, t1)
    drift = np.empty((t0.batch_size, init.L))
    for l in range(init.L):
        du, dv = d1[l] - d0[l], t1.h[l] - t0.h[l]
        sq = (np.einsum("ij,ij->i", du, du) * np.einsum("ij,ij->i", t1.h[l], t1.h[l])
              + np.einsum("ij,ij->i", d0[l], d0[l]) * np.einsum("ij,ij->i", dv, dv)
              + 2.0 * np.einsum("ij,ij->i", du, d0[l]) * np.einsum("ij,ij->i", t1.h[l], dv))
        drift[:, l] = np.sqrt(np.maximum(sq, 0.0))
    return drift, per_sample_gradient_norms(perturbed, t1), per_sample_gradient_norms(init, t0)


def semi_smooth_residuals(W: NetworkParams, W_bar: NetworkParams, X) -> np.ndarray:
    """f_W(x) − f_W̄(x) − ⟨∂f_W(x)/∂W, W − W̄⟩ per input."""
    return (forward_batch(W, X, strict=False) - forward_batch(W_bar, X, strict=False)
            - directional_derivative(W, X, W.minus(W_bar), strict=False))


# ══════════════════════════════════════════════════════════════════════════════
# PERTURBATION PROBES
# ══════════════════════════════════════════════════════════════════════════════

def flip_probe(init: NetworkParams, perturbed: NetworkParams, data: LabeledDataset) -> ProbeReport:
    R = float(np.max(layer_distances(perturbed, init)))
    flips = flip_counts(init, perturbed, data.inputs)
    return ProbeReport(
        name="flip",
        scalars={"max_flips": float(flips.max()), "mean_flips": float(flips.mean()), "R": R},
        series={"flips_by_layer": _per_layer_series(flips)},
        meta=_meta(init, n=data.n, seed=data.seed),
        checks={"flips_le_m": bool(flips.max() <= init.m)},
    )


def drift_probe(init: NetworkParams, perturbed: NetworkParams, data: LabeledDataset) -> ProbeReport:
    R = float(np.max(layer_distances(perturbed, init)))
    drifts, f0, f1 = hidden_drifts(init, perturbed, data.inputs)
    # ‖a‖₂ = √m, so |f − f₀| ≤ √m·‖hᴸ − hᴸ₀‖₂
    floor = np.abs(f1 - f0) / math.sqrt(init.m)
    return ProbeReport(
        name="drift",
        scalars={"max_drift": float(drifts.max()), "R": R,
                 "drift_over_shape": float(drifts.max()) / _drift_shape(init, R) if R > 0 else 0.0},
        series={"drift_by_layer": _per_layer_series(drifts)},
        meta=_meta(init, n=data.n, seed=data.seed),
        checks={"output_floor": bool(np.all(drifts[:, -1] >= floor * (1 - 1e-12)))},
    )


def lipschitz_probe(init: NetworkParams, R: float, n_sphere: int = 200, K: int = 5, seed: int = 0,
                    constant_bound: float = DEFAULT_DRIFT_C) -> ProbeReport:
    """Sampled lower estimate of sup_x max_l ‖hˡ(x) − hˡ₀(x)‖₂ over K perturbations of per-layer norm R."""
    if R < 0:
        raise PreconditionError(f"radius must be >= 0, got {R}")
    X = sphere_sample(init.d, n_sphere, seed, stream=_ID_LIPSCHITZ)
    worst = 0.0
    for k in range(K):
        perturbed = init.shifted(random_perturbation(init, R, seed, stream=_ID_LIPSCHITZ * 1000 + k))
        drifts, _, _ = hidden_drifts(init, perturbed, X)
        worst = max(worst, float(drifts.max()))
    constant = worst / _drift_shape(init, R) if R > 0 else 0.0
    return ProbeReport(
        name="lipschitz",
        scalars={"max_drift": worst, "empirical_constant": constant, "R": R},
        meta=_meta(init, n=n_sphere, K=K, seed=seed, C=constant_bound, sup="sampled lower estimate"),
        checks={"constant_le_C": constant <= constant_bound},
    )


def semi_smooth_probe(W: NetworkParams, W_bar: NetworkParams, data: LabeledDataset,
                      init: NetworkParams | None = None) -> ProbeReport:
    residuals = np.abs(semi_smooth_residuals(W, W_bar, data.inputs))
    scalars = {"max_residual": float(residuals.max()), "median_residual": float(np.median(residuals))}
    if init is not None:
        R = float(max(np.max(layer_distances(W, init)), np.max(layer_distances(W_bar, init))))
        gap = np.abs(forward_batch(W, data.inputs, strict=False) - linearized_output(init, W, data.inputs, strict=False))
        scalars.update({"R": R, "max_linearization_residual": float(gap.max())})
    return ProbeReport(name="semi-smooth", scalars=scalars, meta=_meta(W, n=data.n, seed=data.seed))


def grad_drift_probe(init: NetworkParams, perturbed: NetworkParams, data: LabeledDataset) -> ProbeReport:
    R = float(np.max(layer_distances(perturbed, init)))
    drift, norms, norms0 = gradient_drifts(init, perturbed, data.inputs)
    triangle = bool(np.all(drift <= (norms + norms0) * (1 + 1e-9) + 1e-12))
    return ProbeReport(
        name="grad-drift",
        scalars={"max_grad_drift": float(drift.max()), "median_grad_drift": float(np.median(drift.max(axis=1))),
                 "R": R},
        series={"grad_drift_by_layer": _per_layer_series(drift)},
        meta=_meta(init, n=data.n, seed=data.seed),
        checks={"triangle": triangle},
    )


# ══════════════════════════════════════════════════════════════════════════════
# TRAJECTORY PROBES
# ══════════════════════════════════════════════════════════════════════════════

def descent_slacks(trajectory: Trajectory, eta: float, reference_risk: float) -> np.ndarray:
    """s_t = ‖W(t)−W̄‖² − ‖W(t+1)−W̄‖² − η𝓛_S(W(t)) + 3η𝓛_S(W̄)."""
    dist_sq = np.asarray(trajectory.dist_from_ref, dtype=np.float64) ** 2
    loss = np.asarray(trajectory.train_loss, dtype=np.float64)
    return dist_sq[:-1] - dist_sq[1:] - eta * loss[:-1] + 3.0 * eta * reference_risk


def descent_probe(trajectory: Trajectory, reference: NetworkParams, data: LabeledDataset, eta: float,
                  init: NetworkParams | None = None, slack: float = 1.2) -> ProbeReport:
    """Per-step descent inequality and its telescoped radius invariant along a recorded run."""
    if not trajectory.has_reference:
        raise PreconditionError("descent_probe needs a trajectory trained with the reference attached")
    steps = np.asarray(trajectory.steps)
    if np.any(np.diff(steps) != 1):
        raise PreconditionError("descent_probe needs a series recorded at every step")
    ref_risk, _ = empirical_risk(reference, data)
    s = descent_slacks(trajectory, eta, ref_risk)
    loss = np.asarray(trajectory.train_loss)
    dist_sq = np.asarray(trajectory.dist_from_ref) ** 2

    direct = [trajectory.dist_from_ref[t] ** 2 - trajectory.dist_from_ref[t + 1] ** 2
              - eta * trajectory.train_loss[t] + 3.0 * eta * ref_risk for t in range(len(s))]
    identity_err = float(np.max(np.abs(s - np.asarray(direct)))) if len(s) else 0.0

    eps = 0.01 * eta * loss[0]
    fraction = float(np.mean(s >= -eps)) if len(s) else 1.0
    init = init if init is not None else trajectory.snapshots[0].load()
    T = int(steps[-1])
    F_S = eval_F_S(reference, init, data, eta, max(T, 1)).value
    running = dist_sq + eta * np.concatenate([[0.0], np.cumsum(loss[:-1])])
    return ProbeReport(
        name="descent",
        scalars={"fraction_descent": fraction, "min_slack": float(s.min()) if len(s) else 0.0,
                 "epsilon": eps, "F_S": F_S, "max_radius_invariant": float(running.max()),
                 "identity_error": identity_err, "reference_risk": ref_risk},
        series={"slack": Series(x=[float(t) for t in steps[:-1]], y=[float(v) for v in s]),
                "radius_invariant": Series(x=[float(t) for t in steps], y=[float(v) for v in running])},
        meta=_meta(init, n=data.n, T=T, eta=eta, slack=slack),
        checks={"descent_95": fraction >= 0.95,
                "radius_invariant": bool(np.all(running <= slack * F_S)),
                "identity": identity_err <= 1e-10},
    )


# ══════════════════════════════════════════════════════════════════════════════
# INITIALIZATION PROBES
# ══════════════════════════════════════════════════════════════════════════════

def init_norm_probe(init: NetworkParams, X, c0: float = DEFAULT_C0, product_C: float = 10.0,
                    product_samples: int = 4, power_tol: float = INIT_NORM_POWER_TOL) -> ProbeReport:
    """Spectral norms of Wˡ(0), the hidden-norm band, last-layer gradient norms and product norms."""
    m, L = init.m, init.L
    spectral = np.array([spectral_norm(w, tol=power_tol) for w in init.weights]) / math.sqrt(m)
    _, trace = trace_batch(init, X)
    h_sq = np.stack([np.einsum("ij,ij->i", h, h) for h in trace.h[1:]], axis=1)
    grad_last = per_sample_gradient_norms(init, trace)[:, -1]

    product_max = 0.0
    for i in range(min(product_samples, trace.batch_size)):
        for a_idx in range(2, L + 1):
            for b_idx in range(a_idx, L + 1):
                product_max = max(product_max, product_operator_norm(init, trace, a_idx, b_idx, sample=i, tol=power_tol))
    product_shape = L * math.sqrt(math.log(m))
    return ProbeReport(
        name="init-norm",
        scalars={"max_spectral_norm_over_sqrt_m": float(spectral.max()),
                 "min_hidden_norm_sq": float(h_sq.min()), "max_hidden_norm_sq": float(h_sq.max()),
                 "max_last_layer_grad_norm": float(grad_last.max()),
                 "max_product_norm": product_max,
                 "product_constant": product_max / product_shape},
        series={"spectral_norm_by_layer": Series(x=list(range(1, L + 1)), y=[float(v) for v in spectral])},
        meta=_meta(init, n=trace.batch_size, c0=c0, C=product_C, product_samples=product_samples),
        checks={"spectral_le_c0": bool(spectral.max() <= c0),
                "hidden_band": bool(h_sq.min() >= 2 / 3 and h_sq.max() <= 4 / 3),
                "last_layer_grad": bool(grad_last.max() <= math.sqrt(2) * 1.05),
                "product_le_C_L_sqrtlogm": product_max <= product_C * product_shape},
    )


def gaussian_indicator_check(dim: int, trials: int, seed: int, mode: str = "random", tol: float = 0.01,
                             chunk: int = 100_000) -> ProbeReport:
    """Monte-Carlo E[1{⟨w,c⟩ ≥ 0}⟨w,b⟩²] against ‖b‖²/2 for w ~ N(0, I)."""
    if trials < 10_000:
        raise PreconditionError(f"need at least 1e4 trials, got {trials}")
    rng = philox_stream(seed, STREAM_PROBE, _ID_INDICATOR)
    c = rng.standard_normal(dim)
    c /= np.linalg.norm(c)
    if mode == "zero":
        b = np.zeros(dim)
    elif mode == "parallel":
        b = c.copy()
    elif mode == "orthogonal":
        if dim < 2:
            raise PreconditionError("an orthogonal b needs dim >= 2")
        b = rng.standard_normal(dim)
        b -= np.dot(b, c) * c
        b /= np.linalg.norm(b)
    elif mode == "random":
        b = rng.standard_normal(dim)
        b /= np.linalg.norm(b)
    else:
        raise ConfigError(f"unknown indicator mode '{mode}' (zero, parallel, orthogonal, random)")
    sums, sq_sums, done = 0.0, 0.0, 0
    while done < trials:
        size = min(chunk, trials - done)
        w = rng.standard_normal((size, dim))
        v = np.where(w @ c >= 0.0, (w @ b) ** 2, 0.0)
        sums += float(np.sum(v))
        sq_sums += float(np.sum(v * v))
        done += size
    estimate = sums / trials
    target = float(np.dot(b, b)) / 2.0
    stderr = math.sqrt(max(sq_sums / trials - estimate ** 2, 0.0) / trials)
    return ProbeReport(
        name="gaussian-indicator",
        scalars={"estimate": estimate, "target": target, "deviation": estimate - target, "stderr": stderr},
        meta={"dim": dim, "trials": trials, "seed": seed, "mode": mode, "tol": tol},
        checks={"within_tol": abs(estimate - target) <= tol},
    )


# ══════════════════════════════════════════════════════════════════════════════
# RADEMACHER COMPLEXITY
# ══════════════════════════════════════════════════════════════════════════════

def _sign_draws(n: int, K: int, seed: int, probe_id: int, exact: bool) -> np.ndarray:
    if exact:
        if n > MAX_ENUMERATION_N:
            raise PreconditionError(f"exact sign enumeration capped at n={MAX_ENUMERATION_N}, got n={n}")
        codes = np.arange(1 << n)[:, None]
        return ((codes >> np.arange(n)) & 1) * 2.0 - 1.0
    if K < 1:
        raise PreconditionError(f"need K >= 1 sign draws, got {K}")
    return philox_stream(seed, STREAM_PROBE, probe_id).integers(0, 2, size=(K, n)) * 2.0 - 1.0


def linearized_suprema(gram: np.ndarray, B: float, signs: np.ndarray) -> np.ndarray:
    """(B/n)·‖Σᵢ εᵢ ∂f(x_i)‖_F = (B/n)·√(εᵀKε) for every sign row."""
    n = gram.shape[0]
    quad = np.einsum("ki,ij,kj->k", signs, gram, signs)
    return (B / n) * np.sqrt(np.maximum(quad, 0.0))


def rademacher_linearized(init: NetworkParams, data: LabeledDataset, B: float, K: int = 1000,
                          seed: int = 0, exact: bool = False) -> ProbeReport:
    """Rademacher complexity of {⟨∂f_{W(0)}, ΔW⟩ : ‖ΔW‖_F ≤ B} in closed form per sign draw."""
    if B < 0:
        raise PreconditionError(f"ball radius must be >= 0, got {B}")
    gram = gradient_gram(init, data.inputs)
    signs = _sign_draws(data.n, K, seed, _ID_RADEMACHER, exact)
    value = accurate_mean(linearized_suprema(gram, B, signs))
    shape = B * init.L ** 2 * math.sqrt(math.log(init.m) / data.n)
    return ProbeReport(
        name="rademacher-linearized",
        scalars={"estimate": value, "bound_shape": shape, "ratio_to_shape": value / shape if shape > 0 else 0.0,
                 "B": B},
        meta=_meta(init, n=data.n, K=len(signs), seed=seed, exact=exact),
    )


def rademacher_iterates(trajectory: Trajectory, data: LabeledDataset, K: int = 1000, seed: int = 0,
                        exact: bool = False) -> ProbeReport:
    """Lower estimate over the realized iterates: E_ε max_t (1/n) Σᵢ εᵢ f_{W(t)}(x_i).

    With |S̃| = n the worst-case complexity over size-n subsets is the plain one.
    """
    if not trajectory.snapshots:
        raise PreconditionError("rademacher_iterates needs a nonempty trajectory")
    outputs = np.stack([forward_batch(s.load(), data.inputs) for s in trajectory.snapshots])
    signs = _sign_draws(data.n, K, seed, _ID_ITERATES, exact)
    per_draw = np.max(signs @ outputs.T, axis=1) / data.n
    value = accurate_mean(per_draw)
    return ProbeReport(
        name="rademacher-iterates",
        scalars={"estimate": value, "snapshots": float(len(trajectory.snapshots))},
        meta={"n": data.n, "K": len(signs), "seed": seed, "exact": exact,
              "note": "worst-case over size-n subsets equals the plain complexity on S"},
    )


# ══════════════════════════════════════════════════════════════════════════════
# GENERALIZATION BOUND
# ══════════════════════════════════════════════════════════════════════════════

def eval_F(eta: float, T: int, population_risk: float, G: float, delta: float, n: int, distance_sq: float) -> float:
    """3ηT(2𝓛(W̄) + 7G log(2/δ)/(6n)) + ‖W(0) − W̄‖²."""
    return 3.0 * eta * T * (2.0 * population_risk + 7.0 * G * math.log(2.0 / delta) / (6.0 * n)) + distance_sq


def g_prime(G: float, L: int, m: int, F_value: float, C: float = 1.0) -> float:
    """Sup-loss over the trajectory class: 2G + C·L⁴·log m·F(W̄)."""
    return 2.0 * G + C * L ** 4 * math.log(m) * F_value


def smooth_loss_bound(train_risk: float, rademacher: float, G_prime: float, n: int, delta: float) -> float:
    """Right side of the smooth-loss Rademacher bound with C-slack 1 and explicit log n factors."""
    log_n = math.log(n) if n > 1 else 0.0
    conf = G_prime * math.log(2.0 / delta) / n
    return (math.sqrt(max(train_risk, 0.0)) * (0.5 * log_n ** 1.5 * rademacher + math.sqrt(conf))
            + 0.25 * log_n ** 3 * rademacher ** 2 + conf)


def eval_generalization_bound(rademacher: float, train_risk: float, G_prime: float, n: int,
                              delta: float = DEFAULT_DELTA, F_value: float | None = None,
                              measured_gap: float | None = None) -> ProbeReport:
    bound = smooth_loss_bound(train_risk, rademacher, G_prime, n, delta)
    scalars = {"bound": bound, "rademacher": rademacher, "train_risk": train_risk, "G_prime": G_prime}
    checks = {}
    if F_value is not None:
        scalars["F"] = F_value
    if measured_gap is not None:
        scalars["measured_gap"] = measured_gap
        checks["gap_le_bound"] = measured_gap <= bound
    return ProbeReport(name="generalization-bound", scalars=scalars,
                       meta={"n": n, "delta": delta, "C": 1.0, "log_factors": "(log n)^{3/2}, (log n)^3"},
                       checks=checks)


def bound_check(trajectory: Trajectory, reference: ReferenceModel, init: NetworkParams, data: LabeledDataset,
                population: LabeledDataset, eta: float, delta: float = DEFAULT_DELTA, C: float = 1.0,
                K: int = 200, seed: int = 0) -> ProbeReport:
    """Measured |𝓛 − 𝓛_S| at every snapshot against the evaluated smooth-loss bound."""
    T = int(trajectory.steps[-1])
    ref_pop = population_metrics(reference.params, population)
    dist_sq = reference.shift_norm ** 2
    F_value = eval_F(eta, max(T, 1), ref_pop.logistic_loss, ref_pop.sup_loss, delta, data.n, dist_sq)
    G_prime = g_prime(ref_pop.sup_loss, init.L, init.m, F_value, C)
    # the class is the F-ball around W̄, contained in the ball of radius √F + ‖W̄ − W(0)‖ around W(0)
    B = math.sqrt(F_value) + reference.shift_norm
    rademacher = rademacher_linearized(init, data, B, K=K, seed=seed).scalars["estimate"]

    steps, gaps, bounds = [], [], []
    loss_by_step = dict(zip(trajectory.steps, trajectory.train_loss))
    for snap in trajectory.snapshots:
        pop = population_metrics(snap.load(), population)
        train_risk = loss_by_step[snap.step]
        steps.append(float(snap.step))
        gaps.append(abs(pop.logistic_loss - train_risk))
        bounds.append(smooth_loss_bound(train_risk, rademacher, G_prime, data.n, delta))
    F_S = eval_F_S(reference.params, init, data, eta, max(T, 1)).value
    return ProbeReport(
        name="bound-check",
        scalars={"F": F_value, "G": ref_pop.sup_loss, "G_prime": G_prime, "rademacher": rademacher,
                 "B": B, "max_gap": max(gaps), "min_bound": min(bounds),
                 "optimization_error": F_S / (eta * max(T, 1)),
                 "mean_train_loss": float(np.mean(trajectory.train_loss[:-1] or trajectory.train_loss))},
        series={"gap": Series(x=steps, y=gaps), "bound": Series(x=steps, y=bounds)},
        meta=_meta(init, n=data.n, T=T, eta=eta, delta=delta, C=C,
                   rademacher_estimate="linearized closed form at B = sqrt(F) + |W_ref - W(0)|"),
        checks={"gap_le_bound": all(g <= b for g, b in zip(gaps, bounds))},
    )


# ══════════════════════════════════════════════════════════════════════════════
# SWEEPS
# ══════════════════════════════════════════════════════════════════════════════

SWEEP_KINDS = ("flip", "drift", "semi-smooth", "grad-drift")


def _perturb(init: NetworkParams, mode: str, R: float, X: np.ndarray, seed: int, stream: int) -> NetworkParams:
    if mode == "targeted":
        return init.shifted(targeted_perturbation(init, R, X[0]))
    return init.shifted(random_perturbation(init, R, seed, stream=stream))


def _sweep_cell(kind: str, m: int, rep: int, sweep: ScalingSweep, seed: int) -> float:
    init = init_symmetric(NetworkConfig(L=sweep.L, m=m, d=sweep.d, seed=seed + rep))
    X = sphere_sample(sweep.d, sweep.n, seed, stream=_ID_SWEEP)
    perturbed = _perturb(init, sweep.perturbation_for(kind), sweep.R, X, seed + rep, _ID_SWEEP * 1000 + 1)
    if kind == "flip":
        return float(flip_counts(init, perturbed, X).max())
    if kind == "drift":
        return float(hidden_drifts(init, perturbed, X)[0].max())
    if kind == "grad-drift":
        return float(gradient_drifts(init, perturbed, X)[0].max())
    if kind == "semi-smooth":
        other = init.shifted(random_perturbation(init, sweep.R, seed + rep, stream=_ID_SWEEP * 1000 + 2))
        return float(np.median(np.abs(semi_smooth_residuals(perturbed, other, X))))
    raise ConfigError(f"unknown sweep kind '{kind}' (known: {', '.join(SWEEP_KINDS)})")


def _sweep_checks(kind: str, widths: np.ndarray, medians: np.ndarray, fit: Fit | None) -> dict:
    if kind == "flip":
        return {"exponent_in_bracket": fit is not None and 0.5 <= fit.exponent <= 0.85}
    if kind == "drift":
        # per-doubling ratio between consecutive widths
        ratios = (medians[1:] / medians[:-1]) ** (math.log(2) / np.log(widths[1:] / widths[:-1]))
        lo, hi = 1 / (1.5 * math.sqrt(2)), 1.5 / math.sqrt(2)
        return {"doubling_ratio": bool(np.all((ratios >= lo) & (ratios <= hi)))}
    return {"strictly_decreasing": bool(np.all(np.diff(medians) < 0))}


def width_sweep(kind: str, sweep: ScalingSweep, seed: int = 0, workers: int = 1) -> ProbeReport:
    """Median over repeats of a perturbation measurement at each width, with a log-log fit in m."""
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind '{kind}' (known: {', '.join(SWEEP_KINDS)})")
    cells = [(m, rep) for m in sweep.widths for rep in range(sweep.repeats)]
    values = {}
    logger.info(f"[SWEEP] {kind}: {len(cells)} cells over widths {sweep.widths} with {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(_sweep_cell, kind, m, rep, sweep, seed): (m, rep) for m, rep in cells}
            for future in tqdm(as_completed(futures), total=len(futures), desc=kind, leave=False):
                values[futures[future]] = future.result()
    else:
        for m, rep in tqdm(cells, desc=kind, leave=False):
            values[(m, rep)] = _sweep_cell(kind, m, rep, sweep, seed)

    widths = np.array(sweep.widths, dtype=np.float64)
    medians = np.array([np.median([values[(m, r)] for r in range(sweep.repeats)]) for m in sweep.widths])
    fit = fit_power_law(widths, medians)
    if fit is not None and fit.flagged:
        logger.warning(f"[SWEEP] {kind} fit has r2={fit.r2:.3f} < {FIT_R2_FLAG}; exponent not trusted")
    checks = _sweep_checks(kind, widths, medians, fit)
    if fit is not None and fit.flagged:
        checks = {f"{k}_flagged_fit": v for k, v in checks.items()}
    return ProbeReport(
        name=f"{kind}-sweep",
        scalars={"exponent": fit.exponent if fit else float("nan"), "r2": fit.r2 if fit else float("nan")},
        series={"median": Series(x=list(widths), y=[float(v) for v in medians])},
        fit=fit,
        meta={"L": sweep.L, "d": sweep.d, "n": sweep.n, "R": sweep.R, "repeats": sweep.repeats,
              "widths": list(sweep.widths), "seed": seed, "loglog": True,
              "perturbation": sweep.perturbation_for(kind)},
        checks=checks,
    )


def margin_trend(dims, m: int = 128, L: int = 1, seed: int = 0, n: int | None = None) -> ProbeReport:
    """1/γ against d on 2-XOR; the full support is used unless a sample size n is given."""
    dims = sorted({int(d) for d in dims})
    if len(dims) < 2:
        raise ConfigError(f"a margin trend needs at least 2 distinct dimensions, got {dims}")
    inv_gamma = []
    for d in dims:
        init = init_symmetric(NetworkConfig(L=L, m=m, d=d, seed=seed))
        spec = XorSpec(d=d, seed=seed)
        data = xor_population(spec) if n is None else xor_sample(spec, n)
        cert = solve_margin(tangent_features(init, data))
        inv_gamma.append(1.0 / cert.gamma if cert.gamma > 0 else float("inf"))
        logger.info(f"[MARGIN] d={d} gamma={cert.gamma:.4g}")
    fit = fit_power_law(dims, [v if math.isfinite(v) else 0.0 for v in inv_gamma])
    return ProbeReport(
        name="margin-trend",
        scalars={"exponent": fit.exponent if fit else float("nan")},
        series={"inverse_gamma": Series(x=[float(d) for d in dims], y=inv_gamma)},
        fit=fit,
        meta={"m": m, "L": L, "seed": seed, "n": n if n is not None else "population", "loglog": True},
        checks={"exponent_in_bracket": fit is not None and 0.7 <= fit.exponent <= 1.4},
    )


# ══════════════════════════════════════════════════════════════════════════════
# CATALOG (CLI dispatch)
# ══════════════════════════════════════════════════════════════════════════════

def _arg(args: dict, key: str, default, cast=float):
    return cast(args[key]) if key in args else default


def _probe_setup(args: dict, seed: int, m: int = 256, L: int = 2, d: int = 5, n: int = 16):
    cfg = NetworkConfig(L=_arg(args, "L", L, int), m=_arg(args, "m", m, int), d=_arg(args, "d", d, int), seed=seed)
    init = init_symmetric(cfg)
    data = sphere_dataset(cfg.d, _arg(args, "n", n, int), seed)
    return init, data


def _perturbation_probe(fn: Callable, kind: str):
    def run(args: dict, seed: int, workers: int = 1) -> ProbeReport:
        if "widths" in args:
            widths = tuple(int(w) for w in str(args["widths"]).split(","))
            sweep = ScalingSweep(widths=widths, repeats=_arg(args, "repeats", 10, int), L=_arg(args, "L", 2, int),
                                 d=_arg(args, "d", 5, int), n=_arg(args, "n", 16, int), R=_arg(args, "R", 1.0),
                                 perturbation=_arg(args, "perturbation", None, str))
            return width_sweep(kind, sweep, seed, workers)
        init, data = _probe_setup(args, seed)
        R = _arg(args, "R", 1.0)
        mode = resolve_perturbation(kind, _arg(args, "perturbation", None, str))
        perturbed = _perturb(init, mode, R, data.inputs, seed, _ID_SWEEP * 1000 + 1)
        if kind == "semi-smooth":
            other = init.shifted(random_perturbation(init, R, seed, stream=_ID_SWEEP * 1000 + 2))
            return fn(perturbed, other, data, init=init)
        return fn(init, perturbed, data)
    return run


def _run_lipschitz(args, seed, workers=1):
    init, _ = _probe_setup(args, seed, m=1024, L=4)
    return lipschitz_probe(init, _arg(args, "R", 2.0), _arg(args, "n_sphere", 200, int), _arg(args, "K", 5, int), seed)


def _run_init_norm(args, seed, workers=1):
    init, data = _probe_setup(args, seed, m=1024, L=4, n=64)
    return init_norm_probe(init, data.inputs, c0=_arg(args, "c0", DEFAULT_C0),
                           product_samples=_arg(args, "product_samples", 4, int))


def _run_indicator(args, seed, workers=1):
    return gaussian_indicator_check(_arg(args, "dim", 5, int), _arg(args, "trials", 1_000_000, int), seed,
                                    mode=_arg(args, "mode", "random", str))


def _run_rademacher(args, seed, workers=1):
    init, data = _probe_setup(args, seed, m=64, n=8)
    return rademacher_linearized(init, data, _arg(args, "B", 1.0), _arg(args, "K", 1000, int), seed,
                                 exact=_arg(args, "exact", "false", str).lower() in ("1", "true", "yes"))


def _run_margin_trend(args, seed, workers=1):
    dims = [int(d) for d in str(args.get("dims", "4,5,6,7,8,9,10")).split(",")]
    n = _arg(args, "n", None, int)
    return margin_trend(dims, m=_arg(args, "m", 128, int), L=_arg(args, "L", 1, int), seed=seed, n=n)


PROBE_CATALOG = {
    "flip": _perturbation_probe(flip_probe, "flip"),
    "drift": _perturbation_probe(drift_probe, "drift"),
    "semi-smooth": _perturbation_probe(semi_smooth_probe, "semi-smooth"),
    "grad-drift": _perturbation_probe(grad_drift_probe, "grad-drift"),
    "lipschitz": _run_lipschitz,
    "init-norm": _run_init_norm,
    "gaussian-indicator": _run_indicator,
    "rademacher-linearized": _run_rademacher,
    "margin-trend": _run_margin_trend,
}


def run_probe(name: str, args: dict, seed: int = 0, workers: int = 1) -> ProbeReport:
    if name not in PROBE_CATALOG:
        raise ConfigError(f"unknown probe '{name}'; catalog: {', '.join(sorted(PROBE_CATALOG))}")
    report = PROBE_CATALOG[name](args, seed, workers)
    report.meta.setdefault("seed", seed)
    for line in report.check_lines():
        logger.info(f"[PROBE] {line}")
    return report

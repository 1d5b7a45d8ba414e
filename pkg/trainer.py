from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from scipy.special import expit

from checkpoint import load_checkpoint, save_checkpoint, write_csv
from errors import ConfigError, DivergenceError, NumericalError, PreconditionError
from network import (
    GradientSet,
    NetworkParams,
    accurate_mean,
    backprop_deltas,
    frobenius_distance,
    trace_batch,
)

if TYPE_CHECKING:
    from datasets import LabeledDataset

logger = logging.getLogger("ntk-trainer")

DIVERGENCE_THRESHOLD = 1e6
IN_MEMORY_SNAPSHOT_MAX_WIDTH = 1024
TRAJECTORY_COLUMNS = ["step", "train_loss", "dist_from_init", "dist_from_ref", "grad_norm"]


# ── Logistic loss ─────────────────────────────────────────────────────────────

def logistic_loss(z):
    """ℓ(z) = log(1 + e^{-z}) as softplus(-z); stays positive up to z ≈ 700."""
    return np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def logistic_loss_grad(z):
    """ℓ′(z) = -1/(1 + e^z), in (-1, 0)."""
    return -expit(-np.asarray(z, dtype=np.float64))


# ══════════════════════════════════════════════════════════════════════════════
# TYPES
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TrainConfig:
    eta: float
    T: int
    snapshot_every: int = 1
    step_size_guard: bool = True
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigError(f"step size eta must be positive, got {self.eta}")
        if self.T < 0:
            raise ConfigError(f"steps T must be >= 0, got {self.T}")
        if self.snapshot_every < 1:
            raise ConfigError(f"snapshot_every must be >= 1, got {self.snapshot_every}")


@dataclass
class Snapshot:
    step: int
    params: NetworkParams | None = None
    path: Path | None = None

    def load(self) -> NetworkParams:
        if self.params is not None:
            return self.params
        params, _ = load_checkpoint(self.path)
        return params


@dataclass
class Trajectory:
    """Per-step series for every step 0..T, plus snapshots every ``snapshot_every`` steps."""

    steps: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    dist_from_init: list = field(default_factory=list)
    dist_from_ref: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    eta: float = 0.0

    def record(self, step: int, loss: float, d_init: float, d_ref: float | None, g_norm: float):
        if self.steps and step <= self.steps[-1]:
            raise PreconditionError(f"trajectory steps must increase, got {step} after {self.steps[-1]}")
        self.steps.append(step)
        self.train_loss.append(loss)
        self.dist_from_init.append(d_init)
        self.dist_from_ref.append(d_ref)
        self.grad_norm.append(g_norm)

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    @property
    def has_reference(self) -> bool:
        return bool(self.dist_from_ref) and self.dist_from_ref[0] is not None

    def rows(self):
        return zip(self.steps, self.train_loss, self.dist_from_init, self.dist_from_ref, self.grad_norm)

    def to_csv(self, path) -> Path:
        return write_csv(path, TRAJECTORY_COLUMNS, self.rows())


class EffortValue(NamedTuple):
    value: float
    risk: float
    distance_sq: float
    at_least_one: bool


# ══════════════════════════════════════════════════════════════════════════════
# RISK AND GRADIENT
# ══════════════════════════════════════════════════════════════════════════════

def _check_data(params: NetworkParams, data: LabeledDataset):
    if data.n == 0:
        raise PreconditionError("empirical risk of an empty dataset")
    if data.d != params.d:
        raise PreconditionError(f"dataset dimension {data.d} does not match network input dim {params.d}")


def empirical_risk(params: NetworkParams, data: LabeledDataset) -> tuple:
    """Returns (𝓛_S(W), margins y_i f_W(x_i))."""
    _check_data(params, data)
    outputs, _ = trace_batch(params, data.inputs)
    margins = data.labels * outputs
    return accurate_mean(logistic_loss(margins)), margins


def _risk_and_gradient(params: NetworkParams, data: LabeledDataset) -> tuple:
    _check_data(params, data)
    outputs, trace = trace_batch(params, data.inputs)
    margins = data.labels * outputs
    coeffs = data.labels * logistic_loss_grad(margins) / data.n
    deltas = backprop_deltas(params, trace, coeffs)
    grad = GradientSet(tuple(deltas[l].T @ trace.h[l] for l in range(params.L)))
    return accurate_mean(logistic_loss(margins)), margins, grad


def risk_gradient(params: NetworkParams, data: LabeledDataset) -> GradientSet:
    """(1/n) Σ_i y_i ℓ′(y_i f_W(x_i)) ∂f_W(x_i)/∂Wˡ, reduced over samples by one product per layer."""
    return _risk_and_gradient(params, data)[2]


def _descend(params: NetworkParams, grad: GradientSet, eta: float) -> NetworkParams:
    if not grad.is_finite():
        raise NumericalError("risk gradient has non-finite entries")
    return NetworkParams(tuple(w - eta * g for w, g in zip(params.weights, grad.matrices)), params.a)


def gd_step(params: NetworkParams, data: LabeledDataset, eta: float) -> NetworkParams:
    if not eta > 0:
        raise PreconditionError(f"step size must be positive, got {eta}")
    return _descend(params, risk_gradient(params, data), eta)


# ══════════════════════════════════════════════════════════════════════════════
# TRAINING LOOP
# ══════════════════════════════════════════════════════════════════════════════

def step_size_limits(L: int, ftilde: float | None = None) -> dict:
    """Step sizes under which iterates provably stay near a reference: min{4/(5L), 1/(20 L F̃_S)}."""
    depth_limit = 4.0 / (5.0 * L)
    reference_limit = 1.0 / (20.0 * L * ftilde) if ftilde else None
    limit = depth_limit if reference_limit is None else min(depth_limit, reference_limit)
    return {"depth_limit": depth_limit, "reference_limit": reference_limit, "limit": limit}


def _guard(params: NetworkParams, cfg: TrainConfig, reference: NetworkParams | None, data: LabeledDataset):
    ftilde = eval_Ftilde_S(reference, data) if reference is not None else None
    limits = step_size_limits(params.L, ftilde)
    if cfg.eta > limits["depth_limit"]:
        logger.warning(f"[GUARD] eta={cfg.eta} exceeds 4/(5L)={limits['depth_limit']:.4g}; "
                       f"the trajectory-radius guarantee needs eta <= min{{4/(5L), 1/(20 L F~_S)}}")
    if limits["reference_limit"] is not None and cfg.eta > limits["reference_limit"]:
        logger.warning(f"[GUARD] eta={cfg.eta} exceeds 1/(20 L F~_S(ref))={limits['reference_limit']:.4g}")
    return limits


def _snapshot(params: NetworkParams, step: int, cfg: TrainConfig, seed: int) -> Snapshot:
    if cfg.checkpoint_dir and params.m > IN_MEMORY_SNAPSHOT_MAX_WIDTH:
        path = save_checkpoint(Path(cfg.checkpoint_dir) / f"step_{step:06d}.ckpt", params, seed, step)
        return Snapshot(step=step, path=path)
    return Snapshot(step=step, params=params)


def train(params0: NetworkParams, data: LabeledDataset, cfg: TrainConfig,
          reference: NetworkParams | None = None, seed: int = 0) -> Trajectory:
    """Full-batch GD for T steps. Series are recorded at every step, snapshots every ``snapshot_every``."""
    if cfg.step_size_guard:
        _guard(params0, cfg, reference, data)
    traj = Trajectory(eta=cfg.eta)
    params = params0
    started = time.time()
    for k in range(cfg.T + 1):
        risk, _, grad = _risk_and_gradient(params, data)
        if not math.isfinite(risk) or risk > DIVERGENCE_THRESHOLD:
            logger.error(f"[TRAIN] diverged at step {k}: loss={risk}")
            raise DivergenceError(f"training loss {risk} at step {k} exceeds {DIVERGENCE_THRESHOLD:g}", partial=traj)
        d_ref = frobenius_distance(params, reference) if reference is not None else None
        traj.record(k, risk, frobenius_distance(params, params0), d_ref, grad.norm())
        if k % cfg.snapshot_every == 0 or k == cfg.T:
            traj.snapshots.append(_snapshot(params, k, cfg, seed))
        if k == cfg.T:
            break
        try:
            params = _descend(params, grad, cfg.eta)
        except NumericalError as e:
            raise DivergenceError(f"step {k}: {e}", partial=traj) from e
    logger.info(f"[TRAIN] {cfg.T} steps in {time.time() - started:.1f}s, "
                f"loss {traj.train_loss[0]:.4f} -> {traj.train_loss[-1]:.4f}")
    return traj


# ══════════════════════════════════════════════════════════════════════════════
# REFERENCE FUNCTIONALS
# ══════════════════════════════════════════════════════════════════════════════

def effort_functional(eta: float, T: int, risk: float, distance_sq: float) -> float:
    """3ηT·risk + ‖W(0) − W̄‖²."""
    return 3.0 * eta * T * risk + distance_sq


def eval_F_S(reference: NetworkParams, init: NetworkParams, data: LabeledDataset, eta: float, T: int) -> EffortValue:
    risk, _ = empirical_risk(reference, data)
    dist_sq = frobenius_distance(init, reference) ** 2
    value = effort_functional(eta, T, risk, dist_sq)
    if value < 1.0:
        logger.debug(f"[TRAIN] F_S(ref)={value:.4g} is below the usual normalization F_S >= 1")
    return EffortValue(value, risk, dist_sq, value >= 1.0)


def eval_Ftilde_S(reference: NetworkParams, data: LabeledDataset) -> float:
    """(1/n) Σ |ℓ′(y_i f_W̄(x_i))|."""
    _, margins = empirical_risk(reference, data)
    return accurate_mean(np.abs(logistic_loss_grad(margins)))

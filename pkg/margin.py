"""Tangent features at initialization, the hard NTK margin, and the reference model.

The margin is computed through its dual: the minimum-norm point p of the
convex hull of the features φ_i = y_i ∂f_{W(0)}(x_i)/∂W. Then γ = ‖p‖ and
W_* = p/‖p‖. Every per-sample gradient is rank one per layer (δ hᵀ), so
features are stored as factor pairs and all inner products are taken
blockwise without ever flattening a feature.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from datasets import LabeledDataset
from errors import NumericalError, PreconditionError
from network import GradientSet, NetworkParams, accurate_sum, backprop_deltas, forward_batch, trace_batch

logger = logging.getLogger("ntk-margin")

MARGIN_TOL = 1e-8
MARGIN_MAX_ITERS = 100_000
_REFRESH_EVERY = 100


# ══════════════════════════════════════════════════════════════════════════════
# FEATURES
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TangentFeature:
    """One feature as {layer: (u, v)} meaning the block u vᵀ; absent layers are zero."""

    factors: dict
    shapes: tuple

    def dense(self, layer: int) -> np.ndarray:
        if layer not in self.factors:
            return np.zeros(self.shapes[layer - 1])
        u, v = self.factors[layer]
        return np.outer(u, v)

    def to_gradient_set(self) -> GradientSet:
        return GradientSet(tuple(self.dense(l) for l in range(1, len(self.shapes) + 1)))

    def inner(self, other: "TangentFeature") -> float:
        total = []
        for l, (u, v) in self.factors.items():
            if l in other.factors:
                u2, v2 = other.factors[l]
                total.append(float(np.dot(u, u2)) * float(np.dot(v, v2)))
        return accurate_sum(total) if total else 0.0

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def scaled(self, c: float) -> "TangentFeature":
        return TangentFeature({l: (c * u, v) for l, (u, v) in self.factors.items()}, self.shapes)

    @classmethod
    def from_vector(cls, vec) -> "TangentFeature":
        """A flat toy feature, viewed as a single-layer block with one column."""
        vec = np.asarray(vec, dtype=np.float64)
        return cls({1: (vec, np.ones(1))}, ((vec.size, 1),))


def tangent_features(init: NetworkParams, data: LabeledDataset) -> list:
    """φ_i = y_i ∂f_{W(0)}(x_i)/∂W for every training sample."""
    _, trace = trace_batch(init, data.inputs)
    deltas = backprop_deltas(init, trace, data.labels)
    shapes = tuple(w.shape for w in init.weights)
    for l in range(init.L - 1):
        if np.any(deltas[l] != 0.0):
            raise PreconditionError(f"tangent features at layer {l + 1} are nonzero: init is not symmetric")
    last = init.L - 1
    return [
        TangentFeature({init.L: (deltas[last][i].copy(), trace.h[last][i].copy())}, shapes)
        for i in range(data.n)
    ]


def feature_gram(features: list) -> np.ndarray:
    """K_ij = ⟨φ_i, φ_j⟩, built layer by layer from the factor Gram matrices."""
    n = len(features)
    layers = sorted({l for f in features for l in f.factors})
    K = np.zeros((n, n))
    for l in layers:
        rows = [i for i, f in enumerate(features) if l in f.factors]
        U = np.stack([features[i].factors[l][0] for i in rows])
        V = np.stack([features[i].factors[l][1] for i in rows])
        K[np.ix_(rows, rows)] += (U @ U.T) * (V @ V.T)
    return (K + K.T) / 2.0


def combine(features: list, weights) -> GradientSet:
    """Σ_i w_i φ_i as dense per-layer matrices."""
    weights = np.asarray(weights, dtype=np.float64)
    shapes = features[0].shapes
    mats = []
    for l in range(1, len(shapes) + 1):
        rows = [i for i, f in enumerate(features) if l in f.factors and weights[i] != 0.0]
        if not rows:
            mats.append(np.zeros(shapes[l - 1]))
            continue
        U = np.stack([features[i].factors[l][0] * weights[i] for i in rows])
        V = np.stack([features[i].factors[l][1] for i in rows])
        mats.append(U.T @ V)
    return GradientSet(tuple(mats))


# ══════════════════════════════════════════════════════════════════════════════
# MIN-NORM POINT
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class MarginCertificate:
    gamma: float
    W_star: GradientSet
    dual_weights: np.ndarray
    dual_gap: float
    iterations: int
    converged: bool
    min_margin: float = 0.0     # min_i ⟨W_*, φ_i⟩, equal to gamma - dual_gap
    notes: list = field(default_factory=list)

    @property
    def separable(self) -> bool:
        return self.gamma > 0.0

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "dual_gap": self.dual_gap,
            "min_margin": self.min_margin,
            "iterations": self.iterations,
            "converged": self.converged,
            "separable": self.separable,
            "dual_weights": [float(w) for w in self.dual_weights],
            "notes": list(self.notes),
        }


def _zero_threshold(K: np.ndarray, tol: float) -> float:
    # below this ‖p‖ is rounding noise in λᵀKλ
    noise = math.sqrt(K.shape[0] * np.finfo(np.float64).eps * max(float(np.max(np.diag(K))), 1.0))
    return max(tol, noise)


def solve_margin(features: list, tol: float = MARGIN_TOL, max_iters: int = MARGIN_MAX_ITERS) -> MarginCertificate:
    """Away-step Frank–Wolfe for min_{λ ∈ Δ} ‖Σ λ_i φ_i‖², exact line search on the quadratic."""
    if not features:
        raise PreconditionError("solve_margin needs at least one feature")
    K = feature_gram(features)
    if not np.all(np.isfinite(K)):
        raise NumericalError("feature Gram matrix has non-finite entries")
    n = K.shape[0]
    zero_at = _zero_threshold(K, tol)

    start = int(np.argmin(np.diag(K)))
    lam = np.zeros(n)
    lam[start] = 1.0
    Klam = K[:, start].copy()
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if it % _REFRESH_EVERY == 0:
            Klam = K @ lam
        q = float(lam @ Klam)
        s = int(np.argmin(Klam))
        fw_gap = 2.0 * (q - Klam[s])
        if math.sqrt(max(q, 0.0)) <= zero_at:
            converged = True
            break
        # fw_gap / (2‖p‖) is exactly the reported dual gap ‖p‖ − min_i ⟨p, φ_i⟩/‖p‖
        if Klam[s] > 0.0 and fw_gap <= 2.0 * tol * math.sqrt(q):
            Klam = K @ lam
            q = float(lam @ Klam)
            s = int(np.argmin(Klam))
            if Klam[s] > 0.0 and q - Klam[s] <= tol * math.sqrt(q):
                converged = True
                break
            fw_gap = 2.0 * (q - Klam[s])
        active = np.flatnonzero(lam > 0.0)
        v = int(active[np.argmax(Klam[active])])
        away_gap = 2.0 * (Klam[v] - q)
        if fw_gap >= away_gap:
            Kd = K[:, s] - Klam
            slope, curv, max_step = Klam[s] - q, K[s, s] - 2.0 * Klam[s] + q, 1.0
            toward = True
        else:
            if lam[v] >= 1.0:
                break
            Kd = Klam - K[:, v]
            slope, curv, max_step = q - Klam[v], q - 2.0 * Klam[v] + K[v, v], lam[v] / (1.0 - lam[v])
            toward = False
        step = max_step if curv <= 0.0 else min(max(-slope / curv, 0.0), max_step)
        if step == 0.0:
            break
        if toward:
            lam *= 1.0 - step
            lam[s] += step
        else:
            lam *= 1.0 + step
            lam[v] -= step
            if step == max_step:
                lam[v] = 0.0
        np.maximum(lam, 0.0, out=lam)
        Klam += step * Kd

    lam /= lam.sum()
    Klam = K @ lam
    q = max(float(lam @ Klam), 0.0)
    p_norm = math.sqrt(q)
    if p_norm <= zero_at:
        shapes = features[0].shapes
        logger.info(f"[MARGIN] not separable at tol={tol:g} (|p|={p_norm:.3e}) after {it} iterations")
        return MarginCertificate(0.0, GradientSet(tuple(np.zeros(s) for s in shapes)), lam, 0.0, it, converged,
                                 notes=["margin certified on the training sample only",
                                        f"hull reaches within {p_norm:.3e} of the origin"])
    W_star = combine(features, lam / p_norm)
    min_margin = float(np.min(Klam)) / p_norm
    dual_gap = max(p_norm - min_margin, 0.0)
    if not converged:
        logger.warning(f"[MARGIN] hit max_iters={max_iters}; dual gap {dual_gap:.3e}")
    logger.info(f"[MARGIN] gamma={p_norm:.6g} dual_gap={dual_gap:.3e} iterations={it}")
    return MarginCertificate(p_norm, W_star, lam, dual_gap, it, converged, min_margin,
                             notes=["margin certified on the training sample only"])


# ══════════════════════════════════════════════════════════════════════════════
# REFERENCE MODEL
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class ReferenceModel:
    params: NetworkParams
    scale: float           # 2 log T / γ
    shift_norm: float      # measured ‖W̄ − W(0)‖_F
    margins: np.ndarray | None = None


def build_reference(init: NetworkParams, cert: MarginCertificate, T: float,
                    data: LabeledDataset | None = None) -> ReferenceModel:
    """W̄ = W(0) + (2 log T / γ)·W_*."""
    if not cert.separable:
        raise PreconditionError("margin is zero: no reference model exists")
    if T < 2:
        raise PreconditionError(f"reference model needs T >= 2, got T={T}")
    scale = 2.0 * math.log(T) / cert.gamma
    ref = init.shifted(cert.W_star, scale)
    shift = ref.minus(init).norm()
    margins = data.labels * forward_batch(ref, data.inputs) if data is not None else None
    if margins is not None:
        logger.info(f"[MARGIN] reference shift={shift:.4g} min margin={float(np.min(margins)):.4g} (log T={math.log(T):.4g})")
    return ReferenceModel(ref, scale, shift, margins)

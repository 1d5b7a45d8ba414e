import logging
import math
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, ConvergenceError, PreconditionError, ShapeError

logger = logging.getLogger("ntk-network")

UNIT_NORM_TOL = 1e-12
POWER_MAX_ITERS = 10_000
POWER_TOL = 1e-8

MASK_64 = 0xFFFFFFFFFFFFFFFF

# ── Random streams ────────────────────────────────────────────────────────────
# Every random draw in the lab comes from a Philox generator keyed by the run
# seed. The 256-bit counter is split as [purpose | a | b | block]: the upper
# three words name the stream, the low word is the block counter inside it.
# A stream therefore never depends on how many other streams were consumed,
# which keeps init identical whatever the worker layout.
STREAM_INIT_WEIGHTS = 1     # a = layer, b = row
STREAM_INIT_SIGNS   = 2
STREAM_DATA         = 3     # a = generator id
STREAM_PROBE        = 4     # a = probe id, b = repeat / cell
STREAM_POWER        = 5     # start vectors for power iteration


def philox_stream(seed: int, purpose: int, a: int = 0, b: int = 0) -> np.random.Generator:
    counter = ((purpose & MASK_64) << 192) | ((a & MASK_64) << 128) | ((b & MASK_64) << 64)
    return np.random.Generator(np.random.Philox(key=seed & MASK_64, counter=counter))


def accurate_sum(values) -> float:
    """Sum a short sequence of float64 values with extended precision."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
        return float(np.sum(arr.astype(np.longdouble)))
    return math.fsum(arr.tolist())


def accurate_mean(values) -> float:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
        return float(np.sum(arr.astype(np.longdouble)) / arr.size)
    return math.fsum(arr.tolist()) / arr.size


# ══════════════════════════════════════════════════════════════════════════════
# TYPES
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class NetworkConfig:
    L: int
    m: int
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError(f"depth L must be >= 1, got {self.L}")
        if self.d < 1:
            raise ConfigError(f"input dimension d must be >= 1, got {self.d}")
        if self.m < 2 or self.m % 2:
            raise ConfigError(f"width m must be a positive even integer, got {self.m}")
        if not 0 <= self.seed <= MASK_64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GradientSet:
    """Per-layer matrices with the shapes of a network's weights.

    Holds gradients of f or of the empirical risk, and also weight-space
    directions (perturbations, W_*) since they live in the same space.
    """

    matrices: tuple

    def __post_init__(self):
        object.__setattr__(self, "matrices", tuple(np.asarray(g, dtype=np.float64) for g in self.matrices))

    @property
    def L(self) -> int:
        return len(self.matrices)

    @property
    def shapes(self) -> tuple:
        return tuple(g.shape for g in self.matrices)

    def layer_norms(self) -> np.ndarray:
        return np.array([math.sqrt(float(np.vdot(g, g))) for g in self.matrices])

    def norm(self) -> float:
        return math.sqrt(accurate_sum([float(np.vdot(g, g)) for g in self.matrices]))

    def inner(self, other: "GradientSet") -> float:
        _check_shapes(self.shapes, other.shapes)
        return accurate_sum([float(np.vdot(g, h)) for g, h in zip(self.matrices, other.matrices)])

    def scaled(self, c: float) -> "GradientSet":
        return GradientSet(tuple(c * g for g in self.matrices))

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(g))) for g in self.matrices)


@dataclass(frozen=True)
class NetworkParams:
    """Weights W¹..Wᴸ plus the fixed output signs a. Immutable once built."""

    weights: tuple
    a: np.ndarray
    _halves: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        weights = tuple(_frozen(w) for w in self.weights)
        a = _frozen(self.a)
        if not weights:
            raise ShapeError("a network needs at least one weight layer")
        m = weights[0].shape[0]
        if m % 2 or a.shape != (m,):
            raise ShapeError(f"output signs must have even length m={m}, got shape {a.shape}")
        for l, w in enumerate(weights[1:], start=2):
            if w.shape != (m, m):
                raise ShapeError(f"W{l} must be {m}x{m}, got {w.shape}")
        half = m // 2
        if not np.array_equal(a[half:], -a[:half]) or not np.all(np.abs(a) == 1.0):
            raise ShapeError("output signs must be ±1 with a[r + m/2] = -a[r]")
        if not all(bool(np.all(np.isfinite(w))) for w in weights):
            raise ShapeError("weights contain non-finite entries")
        last = weights[-1]
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "a", a)
        # output layer evaluated as two equal-shape halves so that paired rows
        # (r, r + m/2) go through identical arithmetic
        object.__setattr__(self, "_halves", (np.ascontiguousarray(last[:half]), np.ascontiguousarray(last[half:])))

    @property
    def L(self) -> int:
        return len(self.weights)

    @property
    def m(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    @property
    def scale(self) -> float:
        return math.sqrt(2.0 / self.m)

    def shifted(self, direction: GradientSet, step: float = 1.0) -> "NetworkParams":
        """W + step * direction, layer by layer; a is unchanged."""
        _check_shapes(tuple(w.shape for w in self.weights), direction.shapes)
        return NetworkParams(tuple(w + step * g for w, g in zip(self.weights, direction.matrices)), self.a)

    def minus(self, other: "NetworkParams") -> GradientSet:
        _check_shapes(tuple(w.shape for w in self.weights), tuple(w.shape for w in other.weights))
        return GradientSet(tuple(w - v for w, v in zip(self.weights, other.weights)))

    def is_symmetric(self) -> bool:
        top, bottom = self._halves
        return bool(np.array_equal(top, bottom))


@dataclass(frozen=True)
class ActivationTrace:
    """Hidden outputs h⁰..hᴸ and sign patterns Σ¹..Σᴸ, one row per input."""

    h: tuple
    sigma: tuple

    @property
    def batch_size(self) -> int:
        return self.h[0].shape[0]

    @property
    def L(self) -> int:
        return len(self.sigma)


def layer_shapes(cfg: NetworkConfig) -> tuple:
    return ((cfg.m, cfg.d),) + ((cfg.m, cfg.m),) * (cfg.L - 1)


def _check_shapes(left: tuple, right: tuple):
    if tuple(left) != tuple(right):
        raise ShapeError(f"shape mismatch: {left} vs {right}")


# ══════════════════════════════════════════════════════════════════════════════
# INITIALIZATION
# ══════════════════════════════════════════════════════════════════════════════

def init_symmetric(cfg: NetworkConfig) -> NetworkParams:
    """Symmetric Gaussian init: last-layer rows duplicated, output signs antisymmetric."""
    if cfg.m % 2:
        raise ConfigError(f"symmetric initialization needs an even width, got m={cfg.m}")
    half = cfg.m // 2
    weights = []
    for l, (rows, cols) in enumerate(layer_shapes(cfg), start=1):
        w = np.empty((rows, cols))
        drawn = half if l == cfg.L else rows
        for r in range(drawn):
            w[r] = philox_stream(cfg.seed, STREAM_INIT_WEIGHTS, l, r).standard_normal(cols)
        if l == cfg.L:
            w[half:] = w[:half]
        weights.append(w)
    signs = philox_stream(cfg.seed, STREAM_INIT_SIGNS).integers(0, 2, size=half) * 2.0 - 1.0
    params = NetworkParams(tuple(weights), np.concatenate([signs, -signs]))
    logger.info(f"[INIT] symmetric init L={cfg.L} m={cfg.m} d={cfg.d} seed={cfg.seed}")
    return params


def random_perturbation(params: NetworkParams, radius: float, seed: int, stream: int = 0) -> GradientSet:
    """Per-layer Gaussian direction scaled to Frobenius norm ``radius`` in every layer."""
    mats = []
    for l, w in enumerate(params.weights, start=1):
        g = philox_stream(seed, STREAM_PROBE, stream, l).standard_normal(w.shape)
        norm = math.sqrt(float(np.vdot(g, g)))
        mats.append(g * (radius / norm) if norm > 0 else g)
    return GradientSet(tuple(mats))


def targeted_perturbation(params: NetworkParams, radius: float, x, overshoot: float = 0.01) -> GradientSet:
    """Per-layer direction of Frobenius norm <= ``radius`` that flips as many signs at ``x`` as it can.

    Layers are handled bottom-up on the already perturbed lower layers. A unit whose sign
    has changed is free; the others are flipped cheapest-first, unit r moving its row along
    h/‖h‖ by (1 + overshoot)·|pre_r|/‖h‖ until the layer budget is spent.
    """
    if radius < 0:
        raise PreconditionError(f"radius must be >= 0, got {radius}")
    x = _as_batch(params, x, strict=True)
    if x.shape[0] != 1:
        raise ShapeError(f"targeted_perturbation takes one input, got {x.shape[0]}")
    _, base = trace_batch(params, x)
    h = x[0]
    mats = []
    for l, w in enumerate(params.weights, start=1):
        pre = w @ h
        h_sq = float(h @ h)
        delta = np.zeros(w.shape)
        if h_sq > 0.0:
            pending = np.flatnonzero(((pre >= 0.0) == base.sigma[l - 1][0]) & (pre != 0.0))
            cost = (1.0 + overshoot) * np.abs(pre[pending]) / math.sqrt(h_sq)
            order = np.argsort(cost, kind="stable")
            rows = pending[order[np.cumsum(cost[order] ** 2) <= radius ** 2]]
            delta[rows] = -(1.0 + overshoot) * np.outer(pre[rows], h) / h_sq
        mats.append(delta)
        moved = (w + delta) @ h
        h = params.scale * np.where(moved >= 0.0, moved, 0.0)
    return GradientSet(tuple(mats))


# ══════════════════════════════════════════════════════════════════════════════
# FORWARD
# ══════════════════════════════════════════════════════════════════════════════

def _as_batch(params: NetworkParams, X, strict: bool) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ShapeError(f"inputs must have {params.d} columns, got shape {X.shape}")
    # relaxed mode tolerates off-sphere inputs, never non-finite ones
    if not np.all(np.isfinite(X)):
        raise PreconditionError("inputs contain non-finite entries")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
    if np.any(bad):
        msg = f"{int(bad.sum())} input(s) off the unit sphere (max |‖x‖-1| = {np.max(np.abs(norms - 1.0)):.3e})"
        if strict:
            raise PreconditionError(msg)
        logger.debug(f"[FORWARD] {msg}; continuing in relaxed mode")
    return X


def _preactivation(params: NetworkParams, l: int, h_prev: np.ndarray) -> np.ndarray:
    if l < params.L:
        return h_prev @ params.weights[l - 1].T
    top, bottom = params._halves
    return np.concatenate([h_prev @ top.T, h_prev @ bottom.T], axis=1)


def _activate(params: NetworkParams, pre: np.ndarray) -> tuple:
    active = pre >= 0.0
    return params.scale * np.where(active, pre, 0.0), active


def _output(params: NetworkParams, h_last: np.ndarray) -> np.ndarray:
    half = params.m // 2
    paired = h_last[:, :half] * params.a[:half] + h_last[:, half:] * params.a[half:]
    return paired.sum(axis=1)


def trace_batch(params: NetworkParams, X, strict: bool = True) -> tuple:
    """Outputs f_W(x_i) and the activation trace for a batch of inputs."""
    X = _as_batch(params, X, strict)
    hs, sigmas = [X], []
    for l in range(1, params.L + 1):
        h, active = _activate(params, _preactivation(params, l, hs[-1]))
        hs.append(h)
        sigmas.append(active)
    return _output(params, hs[-1]), ActivationTrace(tuple(hs), tuple(sigmas))


def forward_batch(params: NetworkParams, X, strict: bool = True) -> np.ndarray:
    out, _ = trace_batch(params, X, strict)
    return out


def forward(params: NetworkParams, x, strict: bool = True) -> float:
    return float(forward_batch(params, x, strict)[0])


def forward_with_trace(params: NetworkParams, x, strict: bool = True) -> tuple:
    out, trace = trace_batch(params, x, strict)
    return float(out[0]), trace


def reconstruct_layer(params: NetworkParams, trace: ActivationTrace, l: int) -> np.ndarray:
    """Recompute hˡ = √(2/m)·Σˡ·Wˡ·hˡ⁻¹ from the stored trace, in the forward pass's order."""
    pre = _preactivation(params, l, trace.h[l - 1])
    return params.scale * np.where(trace.sigma[l - 1], pre, 0.0)


# ══════════════════════════════════════════════════════════════════════════════
# GRADIENTS
# ══════════════════════════════════════════════════════════════════════════════

def _check_trace(params: NetworkParams, trace: ActivationTrace):
    if trace.L != params.L or trace.h[0].shape[1] != params.d:
        raise ShapeError(f"trace with {trace.L} layers / input dim {trace.h[0].shape[1]} "
                         f"does not match params L={params.L} d={params.d}")
    for l in range(1, params.L + 1):
        if trace.h[l].shape[1] != params.m or trace.sigma[l - 1].shape[1] != params.m:
            raise ShapeError(f"trace layer {l} has width {trace.h[l].shape[1]}, expected {params.m}")


def backprop_deltas(params: NetworkParams, trace: ActivationTrace, coeffs=None) -> list:
    """δˡ_i = c_i · ∂f(x_i)/∂(pre-activation of layer l), so ∂f/∂Wˡ = Σ_i δˡ_i (hˡ⁻¹_i)ᵀ."""
    _check_trace(params, trace)
    n = trace.batch_size
    c = np.ones(n) if coeffs is None else np.asarray(coeffs, dtype=np.float64)
    half = params.m // 2
    deltas = [None] * params.L
    delta = (params.scale * trace.sigma[-1]) * (c[:, None] * params.a[None, :])
    deltas[-1] = delta
    for l in range(params.L - 1, 0, -1):
        if l + 1 == params.L:
            top, bottom = params._halves
            back = (np.ascontiguousarray(delta[:, :half]) @ top
                    + np.ascontiguousarray(delta[:, half:]) @ bottom)
        else:
            back = delta @ params.weights[l]
        delta = (params.scale * trace.sigma[l - 1]) * back
        deltas[l - 1] = delta
    return deltas


def batch_layer_gradients(params: NetworkParams, trace: ActivationTrace, coeffs=None) -> GradientSet:
    """Σ_i c_i ∂f_W(x_i)/∂Wˡ for every layer, reduced by one matrix product per layer."""
    deltas = backprop_deltas(params, trace, coeffs)
    return GradientSet(tuple(deltas[l].T @ trace.h[l] for l in range(params.L)))


def layer_gradients(params: NetworkParams, x, trace: ActivationTrace) -> GradientSet:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if trace.batch_size != 1 or trace.h[0].shape != x.shape or not np.array_equal(trace.h[0], x):
        raise ShapeError("trace was not produced from this input")
    return batch_layer_gradients(params, trace)


def per_sample_gradient_norms(params: NetworkParams, trace: ActivationTrace) -> np.ndarray:
    """‖∂f(x_i)/∂Wˡ‖_F for every (i, l); the gradient is rank one so this is ‖δ‖·‖h‖."""
    deltas = backprop_deltas(params, trace)
    return np.stack([np.linalg.norm(deltas[l], axis=1) * np.linalg.norm(trace.h[l], axis=1)
                     for l in range(params.L)], axis=1)


def gradient_gram(params: NetworkParams, X, strict: bool = True) -> np.ndarray:
    """K_ij = ⟨∂f(x_i)/∂W, ∂f(x_j)/∂W⟩ summed over layers, never forming the gradients."""
    _, trace = trace_batch(params, X, strict)
    deltas = backprop_deltas(params, trace)
    gram = np.zeros((trace.batch_size, trace.batch_size))
    for l in range(params.L):
        gram += (deltas[l] @ deltas[l].T) * (trace.h[l] @ trace.h[l].T)
    return gram


def directional_derivative(params: NetworkParams, X, direction: GradientSet, strict: bool = True) -> np.ndarray:
    """⟨∂f_W(x_i)/∂W, D⟩ for every input."""
    _check_shapes(tuple(w.shape for w in params.weights), direction.shapes)
    _, trace = trace_batch(params, X, strict)
    deltas = backprop_deltas(params, trace)
    total = np.zeros(trace.batch_size)
    for l in range(params.L):
        total += np.einsum("ij,ij->i", deltas[l], trace.h[l] @ direction.matrices[l].T)
    return total


def linearized_output(init: NetworkParams, params: NetworkParams, X, strict: bool = True) -> np.ndarray:
    """f_{W(0)}(x) + ⟨∂f_{W(0)}(x), W − W(0)⟩, the tangent model at initialization."""
    return forward_batch(init, X, strict) + directional_derivative(init, X, params.minus(init), strict)


# ══════════════════════════════════════════════════════════════════════════════
# NORMS
# ══════════════════════════════════════════════════════════════════════════════

def _power_iteration(apply, apply_t, n_cols: int, tol: float, max_iters: int, seed: int) -> float:
    """Largest singular value of an implicit operator.

    Stops once (σ, u, v) is a singular triplet to within tol, i.e.
    ‖Mᵀu − σv‖ ≤ tol·σ with σ = ‖Mv‖ and u = Mv/σ. The Rayleigh-quotient
    error is then of order tol²·σ / (relative spectral gap).
    """
    if tol <= 0:
        raise PreconditionError(f"tolerance must be positive, got {tol}")
    v = philox_stream(seed, STREAM_POWER, n_cols).standard_normal(n_cols)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for it in range(1, max_iters + 1):
        w = apply(v)
        sigma = float(np.linalg.norm(w))
        if sigma == 0.0:
            return 0.0
        z = apply_t(w / sigma)
        # ⟨z, v⟩ = σ, so ‖z‖ >= σ > 0
        estimate = float(np.linalg.norm(z))
        if np.linalg.norm(z - sigma * v) <= tol * sigma:
            return estimate
        v = z / estimate
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations",
                           best_estimate=estimate, iterations=max_iters)


def spectral_norm(M, tol: float = POWER_TOL, max_iters: int = POWER_MAX_ITERS, seed: int = 0) -> float:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError(f"spectral_norm needs a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise PreconditionError("matrix has non-finite entries")
    if M.size == 0:
        return 0.0
    return _power_iteration(lambda v: M @ v, lambda w: M.T @ w, M.shape[1], tol, max_iters, seed)


def product_operator_norm(params: NetworkParams, trace: ActivationTrace, a_idx: int, b_idx: int,
                          sample: int = 0, tol: float = POWER_TOL, max_iters: int = POWER_MAX_ITERS,
                          seed: int = 0) -> float:
    """‖Hᵃ_b(x)‖₂ for Hᵃ_b = √(2/m)ΣᵇWᵇ ⋯ √(2/m)ΣᵃWᵃ, applied implicitly."""
    if not 2 <= a_idx <= b_idx <= params.L:
        raise PreconditionError(f"need 2 <= a <= b <= L={params.L}, got a={a_idx}, b={b_idx}")
    _check_trace(params, trace)
    masks = [params.scale * trace.sigma[l - 1][sample].astype(np.float64) for l in range(1, params.L + 1)]

    def apply(v):
        for l in range(a_idx, b_idx + 1):
            v = masks[l - 1] * (params.weights[l - 1] @ v)
        return v

    def apply_t(v):
        for l in range(b_idx, a_idx - 1, -1):
            v = params.weights[l - 1].T @ (masks[l - 1] * v)
        return v

    return _power_iteration(apply, apply_t, params.m, tol, max_iters, seed)


def layer_distances(A: NetworkParams, B: NetworkParams) -> np.ndarray:
    return A.minus(B).layer_norms()


def frobenius_distance(A: NetworkParams, B: NetworkParams) -> float:
    return A.minus(B).norm()


def in_ball(params: NetworkParams, center: NetworkParams, radius: float) -> bool:
    """Membership in 𝓑_R(center): every layer within Frobenius distance R."""
    return bool(np.all(layer_distances(params, center) <= radius))

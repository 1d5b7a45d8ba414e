import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from errors import ConfigError, NumericalError, PreconditionError
from network import STREAM_DATA, UNIT_NORM_TOL, NetworkParams, accurate_sum, forward_batch, philox_stream
from trainer import logistic_loss

logger = logging.getLogger("ntk-data")

XOR_MAX_POPULATION_DIM = 22
POPULATION_CHUNK = 1 << 16

# generator ids inside STREAM_DATA
_GEN_XOR = 1
_GEN_SPHERE = 2


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    provenance: str = "custom"
    seed: int = 0

    def __post_init__(self):
        X = np.array(self.inputs, dtype=np.float64, order="C")
        y = np.array(self.labels, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise PreconditionError(f"inputs {X.shape} and labels {y.shape} do not line up")
        if X.shape[0] == 0:
            raise PreconditionError("dataset is empty")
        if not np.all(np.isfinite(X)):
            raise PreconditionError("inputs contain non-finite entries")
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise PreconditionError("every input must lie on the unit sphere")
        if not np.all(np.abs(y) == 1.0):
            raise PreconditionError("labels must be ±1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def take(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.inputs[idx], self.labels[idx], f"{self.provenance}[subset]", self.seed)

    def with_flipped_copy(self, i: int) -> "LabeledDataset":
        """Appends sample i again with its label negated (a non-separable set)."""
        X = np.vstack([self.inputs, self.inputs[i:i + 1]])
        y = np.concatenate([self.labels, -self.labels[i:i + 1]])
        return LabeledDataset(X, y, f"{self.provenance}+flip{i}", self.seed)


@dataclass(frozen=True)
class XorSpec:
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.d < 3:
            raise ConfigError(f"2-XOR needs d >= 3, got d={self.d}")


# ── Noisy 2-XOR ───────────────────────────────────────────────────────────────
# First-two-coordinate blocks (x1, x2, y) in units of 1/√(d-1).
_XOR_BLOCKS = np.array([
    [1.0, 0.0, 1.0],
    [0.0, 1.0, -1.0],
    [-1.0, 0.0, 1.0],
    [0.0, -1.0, -1.0],
])


def xor_label(x) -> int:
    """+1 when the signal sits on the first coordinate, -1 when it sits on the second."""
    x = np.asarray(x)
    if x[0] != 0.0 and x[1] == 0.0:
        return 1
    if x[1] != 0.0 and x[0] == 0.0:
        return -1
    raise PreconditionError("not a 2-XOR point: exactly one of x1, x2 must be nonzero")


def xor_sample(spec: XorSpec, n: int) -> LabeledDataset:
    if n < 1:
        raise ConfigError(f"sample size must be >= 1, got n={n}")
    rng = philox_stream(spec.seed, STREAM_DATA, _GEN_XOR)
    unit = 1.0 / math.sqrt(spec.d - 1)
    blocks = _XOR_BLOCKS[rng.integers(0, 4, size=n)]
    noise = rng.integers(0, 2, size=(n, spec.d - 2)) * 2.0 - 1.0
    X = np.hstack([blocks[:, :2], noise]) * unit
    ds = LabeledDataset(X, blocks[:, 2], "xor", spec.seed)
    logger.debug(f"[DATA] xor_sample d={spec.d} n={n} seed={spec.seed}")
    return ds


def xor_population(spec: XorSpec) -> LabeledDataset:
    """All 4·2^(d-2) support points, each of implicit weight 1/2^d."""
    if spec.d > XOR_MAX_POPULATION_DIM:
        raise ConfigError(f"population enumeration capped at d={XOR_MAX_POPULATION_DIM}, got d={spec.d}")
    free = spec.d - 2
    codes = np.arange(1 << free)[:, None]
    noise = ((codes >> np.arange(free)) & 1) * 2.0 - 1.0
    parts = []
    for x1, x2, y in _XOR_BLOCKS:
        head = np.broadcast_to([x1, x2], (noise.shape[0], 2))
        parts.append((np.hstack([head, noise]), np.full(noise.shape[0], y)))
    X = np.vstack([p[0] for p in parts]) * (1.0 / math.sqrt(spec.d - 1))
    y = np.concatenate([p[1] for p in parts])
    return LabeledDataset(X, y, "xor-population", spec.seed)


class PopulationMetrics(NamedTuple):
    zero_one_error: float
    logistic_loss: float
    sup_loss: float       # G = max over the support of ℓ(y f(x))


def population_metrics(params: NetworkParams, population: LabeledDataset) -> PopulationMetrics:
    """Uniform averages over the support; f = 0 counts as half an error."""
    errors, losses, worst = [], [], 0.0
    for start in range(0, population.n, POPULATION_CHUNK):
        X = population.inputs[start:start + POPULATION_CHUNK]
        margins = population.labels[start:start + POPULATION_CHUNK] * forward_batch(params, X)
        errors.append(float(np.sum(np.where(margins < 0.0, 1.0, np.where(margins == 0.0, 0.5, 0.0)))))
        chunk_loss = logistic_loss(margins)
        losses.append(accurate_sum(chunk_loss))
        worst = max(worst, float(np.max(chunk_loss)))
    return PopulationMetrics(accurate_sum(errors) / population.n, accurate_sum(losses) / population.n, worst)


# ── Sphere sampling ───────────────────────────────────────────────────────────

def sphere_sample(d: int, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """n i.i.d. uniform points on S^{d-1}; a shorter draw is a prefix of a longer one."""
    if d < 1:
        raise ConfigError(f"sphere dimension must be >= 1, got d={d}")
    G = philox_stream(seed, STREAM_DATA, _GEN_SPHERE, stream).standard_normal((n, d))
    norms = np.linalg.norm(G, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericalError("drew an exactly-zero Gaussian vector")
    return G / norms


def sphere_dataset(d: int, n: int, seed: int, stream: int = 0) -> LabeledDataset:
    """Sphere points with labels from the sign of the first coordinate; probe inputs only."""
    X = sphere_sample(d, n, seed, stream)
    y = np.where(X[:, 0] >= 0.0, 1.0, -1.0)
    return LabeledDataset(X, y, "sphere", seed)


def make_dataset(kind: str, d: int, n: int, seed: int) -> LabeledDataset:
    if kind == "xor":
        return xor_sample(XorSpec(d=d, seed=seed), n)
    if kind == "sphere":
        return sphere_dataset(d, n, seed)
    raise ConfigError(f"unknown dataset kind '{kind}' (known: xor, sphere)")

"""Synthetic data for the HPS model.

Randomness comes from ``numpy.random.PCG64`` streams keyed by
``SeedSequence(seed, spawn_key=(stream, index))``:

* stream 0: the shared subspace ``B*``
* stream 1: the task weights ``W*``
* stream 2, index ``t``: features and noise of task ``t``

Each task's data therefore depends only on ``(seed, t)`` and can be drawn in
any order or in parallel.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .model import FactoredCoefficients, GroundTruth, MultiTaskDataset, Subspace

_SUBSPACE_STREAM = 0
_WEIGHT_STREAM = 1
_TASK_STREAM = 2

FEATURE_DISTRIBUTIONS = ("gaussian", "rademacher")


def stream(seed, *key):
    """Independent generator for ``(seed, key)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class DgpConfig:
    d: int
    s: int
    T: int
    m: object  # int, or a per-task sequence of ints
    sigma: float = 1.0
    seed: int = 0
    features: str = "gaussian"

    def __post_init__(self):
        if not 1 <= self.s <= self.d:
            raise ArgumentError(f"need 1 <= s <= d, got s={self.s}, d={self.d}")
        if self.T < 1:
            raise ArgumentError(f"need T >= 1, got {self.T}")
        sizes = self.sample_sizes()
        if sizes.size != self.T or np.any(sizes < 1):
            raise ArgumentError("m must be >= 1 (per task) with one entry per task")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ArgumentError(f"sigma must be finite and >= 0, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ArgumentError("seed must be a 64-bit unsigned integer")
        if self.features not in FEATURE_DISTRIBUTIONS:
            raise ArgumentError(f"features must be one of {FEATURE_DISTRIBUTIONS}")

    def sample_sizes(self):
        if np.ndim(self.m) == 0:
            return np.full(self.T, int(self.m), dtype=np.int64)
        return np.asarray(self.m, dtype=np.int64)


def random_subspace(d, s, rng):
    """Span of the first ``s`` columns of the Q factor of a ``d x d`` Gaussian matrix."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Subspace(np.ascontiguousarray(Q[:, :s].T))


def generate_ground_truth(cfg):
    """Draw ``(W*, B*)``: B* from a QR factor, W* with i.i.d. N(0, 1) entries."""
    B = random_subspace(cfg.d, cfg.s, stream(cfg.seed, _SUBSPACE_STREAM))
    W = stream(cfg.seed, _WEIGHT_STREAM).standard_normal((cfg.T, cfg.s))
    return GroundTruth(FactoredCoefficients(W, B), noise_sd=cfg.sigma)


def _features(rng, shape, kind):
    if kind == "gaussian":
        return rng.standard_normal(shape)
    return rng.choice(np.array([-1.0, 1.0]), size=shape)


def generate_dataset(gt, cfg):
    """Draw ``X_t`` with i.i.d. unit-variance entries and ``y_t = X_t theta_t* + N(0, sigma^2)``."""
    theta = gt.theta
    if theta.shape != (cfg.T, cfg.d):
        raise ArgumentError(f"ground truth has shape {theta.shape}, config wants ({cfg.T}, {cfg.d})")
    sizes = cfg.sample_sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    X = np.empty((offsets[-1], cfg.d))
    y = np.empty(offsets[-1])
    for t in range(cfg.T):
        rng = stream(cfg.seed, _TASK_STREAM, t)
        lo, hi = offsets[t], offsets[t + 1]
        X[lo:hi] = _features(rng, (hi - lo, cfg.d), cfg.features)
        noise = rng.standard_normal(hi - lo)
        y[lo:hi] = X[lo:hi] @ theta[t] + gt.noise_sd * noise
    return MultiTaskDataset(X, y, offsets)


def generate(cfg):
    """Ground truth and dataset in one call."""
    gt = generate_ground_truth(cfg)
    return gt, generate_dataset(gt, cfg)


def task_diversity(gt):
    """Smallest eigenvalue of ``W*^T W* / T``."""
    W = gt.weights
    return float(max(np.linalg.eigvalsh(W.T @ W / W.shape[0])[0], 0.0))

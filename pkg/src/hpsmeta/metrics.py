"""Error metrics and numerically checkable guarantees for HPS estimators."""

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, DegeneracyError
from .model import Subspace, apply_operator
from .synthetic import random_subspace, stream, task_diversity

# Tolerance used when comparing a measured sine distance with its upper bound.
BOUND_SLACK = 1e-8


def dist1(theta_hat, gt):
    """Normalized squared Frobenius error ``||Theta_hat - Theta*||_F^2 / T``."""
    theta_star = gt.theta if hasattr(gt, "theta") else np.asarray(gt)
    th = np.asarray(theta_hat, dtype=np.float64)
    if th.shape != theta_star.shape:
        raise ArgumentError(f"shape mismatch: {th.shape} vs {theta_star.shape}")
    diff = th - theta_star
    return float(np.sum(diff * diff) / th.shape[0])


def _basis(b):
    return b.basis if isinstance(b, Subspace) else np.asarray(b, dtype=np.float64)


def sine_angle(b1, b2):
    """Sine of the largest principal angle between two row spans.

    Computed as the spectral norm of ``B1 - (B1 B2^T) B2``, i.e. of
    ``B1 (I - B2^T B2)`` without forming the ``d x d`` projector.  Symmetric
    when both subspaces have the same rank.
    """
    B1, B2 = _basis(b1), _basis(b2)
    if B1.shape[1] != B2.shape[1]:
        raise ArgumentError(f"ambient dimensions differ: {B1.shape[1]} vs {B2.shape[1]}")
    if B1.shape[0] != B2.shape[0]:
        warnings.warn("sine_angle between subspaces of different rank is not symmetric", stacklevel=2)
    R = B1 - (B1 @ B2.T) @ B2
    return float(min(np.linalg.norm(R, 2), 1.0))


def dist2(b_hat, gt):
    """Sine-angle distance between an estimated subspace and the true one."""
    return sine_angle(b_hat, gt.subspace)


def rip_constant_bound(r, m, a, eps):
    """High-probability upper bound on the rank-``r`` restricted isometry constant
    of the task-wise design operator scaled by ``1/sqrt(m)``:

        sqrt( (8 (a + 1) r - 4) / (3 m) * log(2 r / eps) )
    """
    if a <= 0 or not 0 < eps < 1 or m < 1 or r < 1:
        raise ArgumentError("need a > 0, 0 < eps < 1, m >= 1, r >= 1")
    return math.sqrt((8.0 * (a + 1.0) * r - 4.0) / (3.0 * m) * math.log(2.0 * r / eps))


class ContractionRate(NamedTuple):
    factor: float
    contracts: bool


def contraction_factor(gamma, delta3s):
    """Per-iteration error contraction ``2 sqrt(2) (1 - gamma + gamma * delta3s)`` of Meta-SP."""
    if not 0 <= gamma <= 1:
        raise ArgumentError(f"gamma must lie in [0, 1], got {gamma}")
    if not 0 <= delta3s < 1:
        raise ArgumentError(f"delta3s must lie in [0, 1), got {delta3s}")
    f = 2.0 * math.sqrt(2.0) * (1.0 - gamma + gamma * delta3s)
    return ContractionRate(f, f < 1.0)


def min_certified_step(delta3s):
    """Smallest step size covered by the convergence guarantee, ``(1 - 1/(2 sqrt 2)) / (1 - delta3s)``.

    Steps in ``(min_certified_step(delta3s), 1]`` are certified; the interval is
    empty when the result is >= 1.
    """
    if not 0 <= delta3s < 1:
        raise ArgumentError(f"delta3s must lie in [0, 1), got {delta3s}")
    return (1.0 - 1.0 / (2.0 * math.sqrt(2.0))) / (1.0 - delta3s)


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def subspace_error_bound(b_k, gt, theta_k, diversity=None):
    """Compare ``sin(B_k, B*)`` with ``||Theta* - Theta_k||_F / sqrt(lambda_s T)``.

    ``lambda_s`` is the task diversity of ``gt`` (pass ``diversity`` to reuse a
    precomputed value).
    """
    lam = task_diversity(gt) if diversity is None else diversity
    if lam <= 0:
        raise DegeneracyError("task diversity is zero; the bound is undefined")
    th = np.asarray(theta_k, dtype=np.float64)
    if th.shape != gt.theta.shape:
        raise ArgumentError(f"shape mismatch: {th.shape} vs {gt.theta.shape}")
    lhs = sine_angle(b_k, gt.subspace)
    rhs = float(np.linalg.norm(gt.theta - th) / math.sqrt(lam * th.shape[0]))
    return BoundCheck(lhs, rhs, lhs <= rhs + BOUND_SLACK)


@dataclass(frozen=True)
class RipEstimate:
    rank_probed: int
    samples: int
    ratios: np.ndarray
    theory_bound: float

    @property
    def min_ratio(self):
        return float(self.ratios.min())

    @property
    def max_ratio(self):
        return float(self.ratios.max())

    @property
    def delta_hat(self):
        return max(1.0 - self.min_ratio, self.max_ratio - 1.0)

    def coverage(self, beta=None):
        """Fraction of probes whose ratio lies within ``[1 - beta, 1 + beta]``."""
        beta = self.theory_bound if beta is None else beta
        return float(np.mean(np.abs(self.ratios - 1.0) <= beta))


def rip_probe(dataset, r, samples, seed=0, a=10.0, eps=0.1):
    """Monte-Carlo probe of the restricted isometry of ``Theta -> A(Theta)/sqrt(m)``.

    Each probe draws a random rank-``r`` ``Theta = V B`` (``B`` a random
    row-orthonormal ``r x d`` basis, ``V`` Gaussian) and records
    ``sum_t ||X_t theta_t||^2 / m_t  /  ||Theta||_F^2``.  ``theory_bound`` is
    :func:`rip_constant_bound` at ``m = min_t m_t``.
    """
    T, d = dataset.task_count, dataset.dim
    if not 1 <= r <= min(T, d):
        raise ArgumentError(f"need 1 <= r <= min(T, d) = {min(T, d)}, got {r}")
    if samples < 1:
        raise ArgumentError("need at least one sample")
    sizes = dataset.sizes.astype(np.float64)
    owner = np.repeat(np.arange(T), dataset.sizes)
    rng = stream(seed, 7)
    ratios = np.empty(samples)
    for i in range(samples):
        B = random_subspace(d, r, rng).basis
        V = rng.standard_normal((T, r))
        theta = V @ B
        pred = apply_operator(dataset, theta)
        num = np.sum(pred * pred / sizes[owner])
        ratios[i] = num / np.sum(theta * theta)
    bound = rip_constant_bound(r, int(sizes.min()), a, eps)
    return RipEstimate(r, samples, ratios, bound)

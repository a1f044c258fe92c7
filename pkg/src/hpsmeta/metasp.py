"""Meta Subspace Pursuit: iterative hard thresholding for the shared-subspace model.

Each iteration takes one gradient step per task,

    theta_t <- theta_t + gamma / m_t * X_t^T (y_t - X_t theta_t),

projects the stacked ``(T, d)`` coefficient matrix onto rank ``s`` by
truncating its SVD, and reads the shared representation off the top ``s``
right singular vectors.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ArgumentError, DivergenceError
from .linalg import truncated_svd
from .model import GroundTruth, Subspace, TaskData, check_coefficients
from .trace import FitResult, Tracer

log = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-10


@dataclass(frozen=True)
class MetaSpConfig:
    rank: int
    step_size: float = 0.25
    max_iters: int = 200
    rel_tol: float = DEFAULT_REL_TOL
    trace_against: Optional[GroundTruth] = None

    def __post_init__(self):
        if self.rank < 1:
            raise ArgumentError(f"rank must be >= 1, got {self.rank}")
        if not self.step_size > 0 or not np.isfinite(self.step_size):
            raise ArgumentError(f"step_size must be a positive finite number, got {self.step_size}")
        if self.max_iters < 0:
            raise ArgumentError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.rel_tol < 0:
            raise ArgumentError(f"rel_tol must be >= 0, got {self.rel_tol}")

    @property
    def within_theory(self):
        """Convergence guarantees only cover step sizes up to 1."""
        return self.step_size <= 1.0


def gd_step(task, theta_t, gamma):
    """One gradient step on a single task, scaled by ``gamma / m``."""
    if not isinstance(task, TaskData):
        task = TaskData(*task)
    th = np.asarray(theta_t, dtype=np.float64).reshape(-1)
    X, y = task.design, task.response
    if th.size != X.shape[1]:
        raise ArgumentError(f"theta has {th.size} entries, design has {X.shape[1]} columns")
    return th + (gamma / X.shape[0]) * (X.T @ (y - X @ th))


def hard_threshold(theta_hat, s):
    """Best rank-``s`` approximation of ``theta_hat`` and the span of its top right singular vectors.

    A zero input gives a zero output and the canonical frame flagged as
    degenerate.
    """
    svd = truncated_svd(theta_hat, s)
    if svd.singular_values[0] == 0.0:
        T, d = np.shape(theta_hat)
        return np.zeros((T, d)), Subspace.canonical(s, d)
    basis = np.ascontiguousarray(svd.right.T)
    return svd.reconstruct(), Subspace(basis)


def fit(dataset, cfg, callback=None, theta0=None):
    """Run Meta-SP from ``theta0`` (zero by default).

    Stops after ``cfg.max_iters`` iterations or once the relative Frobenius
    change of the iterate drops below ``cfg.rel_tol``.  ``callback(k, theta,
    subspace)`` is invoked after every iteration.

    Returns
    -------
    FitResult
        Final coefficients, subspace and per-iteration trace.

    Raises
    ------
    DivergenceError
        If an iterate becomes non-finite.
    """
    T, d = dataset.task_count, dataset.dim
    s = cfg.rank
    if s > min(T, d):
        raise ArgumentError(f"rank {s} exceeds min(T, d) = {min(T, d)}")
    if not cfg.within_theory:
        log.info("step size %.3g > 1 is outside the range covered by the convergence theory", cfg.step_size)

    theta = np.zeros((T, d)) if theta0 is None else check_coefficients(dataset, theta0).copy()
    subspace = Subspace.canonical(s, d)
    tracer = Tracer(dataset, cfg.trace_against)
    for k in range(1, cfg.max_iters + 1):
        theta_hat = _kernels.gradient_step(dataset.X, dataset.y, dataset.offsets, theta, float(cfg.step_size))
        if not np.all(np.isfinite(theta_hat)):
            raise DivergenceError(f"Meta-SP diverged at iteration {k}", k, theta, subspace.basis)
        new_theta, new_subspace = hard_threshold(theta_hat, s)
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(f"Meta-SP diverged at iteration {k}", k, theta, subspace.basis)
        subspace = new_subspace
        change = np.linalg.norm(new_theta - theta) / max(np.linalg.norm(theta), 1e-30)
        theta = np.ascontiguousarray(new_theta)
        tracer.record(k, theta, subspace)
        if callback is not None:
            callback(k, theta, subspace)
        if change < cfg.rel_tol:
            break
    return FitResult(theta, subspace, tracer.rows)

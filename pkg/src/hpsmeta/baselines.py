"""Competing estimators for the shared subspace.

All iterative solvers return the same :class:`~hpsmeta.trace.FitResult` as
:func:`hpsmeta.metasp.fit`.  Objectives are scaled per task: a task with
``m_t`` samples contributes ``||y_t - X_t theta_t||^2 / (2 m_t)``, matching the
``gamma / m`` scaling of the Meta-SP gradient step, so step sizes carry over
between methods.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ArgumentError, DivergenceError
from .linalg import orthonormalize_rows, pseudo_inverse, solve_psd_batch, truncated_svd
from .model import GroundTruth, Subspace, check_coefficients
from .synthetic import stream
from .trace import FitResult, Tracer

log = logging.getLogger(__name__)

METHODS = ("MoM", "AltMin", "AltMinGD", "BM", "NUC")
# Reserved so externally produced traces can be merged into comparison tables.
EXTERNAL_METHODS = ("ANIL", "MoM2")

_DEFAULT_STEPS = {"AltMinGD": 1.0, "BM": 0.1}
_ROWS_PER_CHUNK = 4096


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    rank: int
    step_size: Optional[float] = None
    max_iters: int = 100
    reg_coeff: Optional[float] = None
    noise_sd: Optional[float] = None
    seed: int = 0
    rel_tol: float = 0.0
    init_basis: Optional[np.ndarray] = None
    trace_against: Optional[GroundTruth] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ArgumentError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.rank < 1:
            raise ArgumentError(f"rank must be >= 1, got {self.rank}")
        if self.max_iters < 0:
            raise ArgumentError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.step_size is not None and (self.step_size < 0 or not np.isfinite(self.step_size)):
            raise ArgumentError(f"step_size must be finite and >= 0, got {self.step_size}")

    @property
    def step(self):
        return _DEFAULT_STEPS.get(self.method, 1.0) if self.step_size is None else float(self.step_size)


def _check_rank(dataset, s):
    if s > min(dataset.task_count, dataset.dim):
        raise ArgumentError(f"rank {s} exceeds min(T, d) = {min(dataset.task_count, dataset.dim)}")


def _random_basis(cfg, d):
    """Row-orthonormalized standard normal draw, or ``cfg.init_basis`` if given."""
    if cfg.init_basis is not None:
        return orthonormalize_rows(cfg.init_basis)
    return orthonormalize_rows(stream(cfg.seed, 11).standard_normal((cfg.rank, d)))


def task_weights(dataset, basis):
    """Per-task least squares ``w_t = ((X_t B^T)^T X_t B^T)^+ (X_t B^T)^T y_t``.

    Returns ``(W, singular)``; ``singular`` counts tasks whose projected
    system was rank deficient and fell back to the pseudo-inverse.
    """
    G, q = _kernels.projected_gram(dataset.X, dataset.y, dataset.offsets, np.ascontiguousarray(basis))
    W, singular = solve_psd_batch(G, q)
    return W, int(singular.sum())


# --------------------------------------------------------------------------
# method of moments


def moment_matrix(dataset):
    """``(1/N) sum_{t,j} y_{t,j}^2 x_{t,j} x_{t,j}^T``, exactly symmetric."""
    X, y = dataset.X, dataset.y
    M = (X * (y * y)[:, None]).T @ X / X.shape[0]
    return 0.5 * (M + M.T)


def mom_fit(dataset, s):
    """Subspace spanned by the top-``s`` eigenvectors of the moment matrix."""
    if not 1 <= s <= dataset.dim:
        raise ArgumentError(f"need 1 <= s <= d = {dataset.dim}, got {s}")
    M = moment_matrix(dataset)
    lam, V = np.linalg.eigh(M)
    if lam[-1] <= 0.0:
        return Subspace.canonical(s, dataset.dim)
    return Subspace(np.ascontiguousarray(V[:, ::-1][:, :s].T))


def mom_solve(dataset, cfg):
    """MoM subspace plus per-task least-squares weights, as a one-step FitResult."""
    _check_rank(dataset, cfg.rank)
    sub = mom_fit(dataset, cfg.rank)
    W, _ = task_weights(dataset, sub.basis)
    theta = W @ sub.basis
    tracer = Tracer(dataset, cfg.trace_against)
    tracer.record(1, theta, sub)
    return FitResult(theta, sub, tracer.rows)


# --------------------------------------------------------------------------
# alternating minimization


def _basis_normal_equations(dataset, W):
    """Normal equations of ``min_B sum_t ||y_t - X_t B^T w_t||^2`` in ``vec(B)`` (row-major).

    The design row of sample ``j`` of task ``t`` is ``kron(w_t, x_j)``.
    """
    T, s = W.shape
    d = dataset.dim
    owner = np.repeat(np.arange(T), dataset.sizes)
    A = np.zeros((s * d, s * d))
    b = np.zeros(s * d)
    N = dataset.total_samples
    for lo in range(0, N, _ROWS_PER_CHUNK):
        hi = min(lo + _ROWS_PER_CHUNK, N)
        Z = (W[owner[lo:hi]][:, :, None] * dataset.X[lo:hi, None, :]).reshape(hi - lo, s * d)
        A += Z.T @ Z
        b += Z.T @ dataset.y[lo:hi]
    return A, b


def _solve_spd(A, b):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return pseudo_inverse(A) @ b, True
    z = np.linalg.solve(L, b)
    x = np.linalg.solve(L.T, z)
    if not np.all(np.isfinite(x)):
        return pseudo_inverse(A) @ b, True
    return x, False


def _orthonormal_span(B):
    """Orthonormal rows spanning ``B``; canonical frame if ``B`` is rank deficient."""
    try:
        return Subspace(orthonormalize_rows(B))
    except (ArithmeticError, ArgumentError):
        return Subspace.canonical(B.shape[0], B.shape[1])


def altmin_fit(dataset, cfg):
    """Alternating minimization.

    Each iteration solves the per-task least squares for ``W`` given ``B`` and
    then the joint ``d*s``-dimensional least squares for ``B`` given ``W``.
    The recorded iterate is ``W @ B`` before ``B`` is re-orthonormalized, so
    the objective is nonincreasing.
    """
    _check_rank(dataset, cfg.rank)
    B = _random_basis(cfg, dataset.dim)
    tracer = Tracer(dataset, cfg.trace_against)
    degenerate = False
    theta = np.zeros((dataset.task_count, dataset.dim))
    sub = Subspace(B)
    for k in range(1, cfg.max_iters + 1):
        W, n_singular = task_weights(dataset, sub.basis)
        A, b = _basis_normal_equations(dataset, W)
        vec_b, fallback = _solve_spd(A, b)
        degenerate |= fallback or n_singular > 0
        B_ls = vec_b.reshape(cfg.rank, dataset.dim)
        new_theta = W @ B_ls
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(f"AltMin produced a non-finite iterate at iteration {k}", k, theta, sub.basis)
        change = np.linalg.norm(new_theta - theta) / max(np.linalg.norm(theta), 1e-30)
        theta = new_theta
        sub = _orthonormal_span(B_ls)
        tracer.record(k, theta, sub)
        if change < cfg.rel_tol:
            break
    if degenerate:
        log.info("AltMin fell back to the pseudo-inverse for a singular inner system")
        sub = Subspace(sub.basis, degenerate=True)
    return FitResult(theta, sub, tracer.rows)


def altmingd_fit(dataset, cfg):
    """Alternating minimization with a single gradient step on ``B``.

    ``W`` is solved exactly per task; ``B`` then moves along
    ``(1/T) sum_t w_t (X_t^T r_t / m_t)^T`` scaled by the step size and is
    re-orthonormalized.
    """
    _check_rank(dataset, cfg.rank)
    T, d = dataset.task_count, dataset.dim
    sub = Subspace(_random_basis(cfg, d))
    tracer = Tracer(dataset, cfg.trace_against)
    counts = dataset.sizes.astype(np.float64)
    theta = np.zeros((T, d))
    degenerate = False
    for k in range(1, cfg.max_iters + 1):
        W, n_singular = task_weights(dataset, sub.basis)
        degenerate |= n_singular > 0
        theta_fit = W @ sub.basis
        r = dataset.y - _kernels.predict(dataset.X, dataset.offsets, theta_fit)
        C = _kernels.correlate(dataset.X, r, dataset.offsets) / counts[:, None]
        B = sub.basis + (cfg.step / T) * (W.T @ C)
        if not np.all(np.isfinite(B)):
            raise DivergenceError(f"AltMinGD diverged at iteration {k}", k, theta, sub.basis)
        sub = _orthonormal_span(B)
        W, _ = task_weights(dataset, sub.basis)
        new_theta = W @ sub.basis
        change = np.linalg.norm(new_theta - theta) / max(np.linalg.norm(theta), 1e-30)
        theta = new_theta
        tracer.record(k, theta, sub)
        if change < cfg.rel_tol:
            break
    if degenerate:
        sub = Subspace(sub.basis, degenerate=True)
    return FitResult(theta, sub, tracer.rows)


# --------------------------------------------------------------------------
# Burer-Monteiro factorization


def bm_fit(dataset, cfg, init=None):
    """Gradient descent on the factored objective ``sum_t ||y_t - X_t B^T w_t||^2 / (2 m_t T)``.

    Starts from standard normal ``W`` and ``B`` (``B`` scaled by ``1/sqrt(d)`` so
    its rows have unit expected norm) unless ``init=(W, B)`` is given.  The
    ``W`` block is stepped per task (gradient times ``T``), which keeps both
    blocks on the same curvature scale.
    """
    _check_rank(dataset, cfg.rank)
    T, d = dataset.task_count, dataset.dim
    s = cfg.rank
    if init is None:
        rng = stream(cfg.seed, 13)
        W = rng.standard_normal((T, s))
        B = rng.standard_normal((s, d)) / np.sqrt(d)
    else:
        W, B = (np.array(a, dtype=np.float64) for a in init)
    counts = dataset.sizes.astype(np.float64)
    tracer = Tracer(dataset, cfg.trace_against)
    gamma = cfg.step
    theta = W @ B
    for k in range(1, cfg.max_iters + 1):
        r = dataset.y - _kernels.predict(dataset.X, dataset.offsets, np.ascontiguousarray(theta))
        C = _kernels.correlate(dataset.X, r, dataset.offsets) / counts[:, None]
        W, B = W + gamma * (C @ B.T), B + (gamma / T) * (W.T @ C)
        new_theta = W @ B
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(f"BM diverged at iteration {k}", k, theta, _orthonormal_span(B).basis)
        change = np.linalg.norm(new_theta - theta) / max(np.linalg.norm(theta), 1e-30)
        theta = new_theta
        tracer.record(k, theta, None if cfg.trace_against is None else _orthonormal_span(B))
        if change < cfg.rel_tol:
            break
    return FitResult(theta, _orthonormal_span(B), tracer.rows)


# --------------------------------------------------------------------------
# nuclear norm regularization


def default_reg_coeff(sigma, T, d, m):
    """``(sigma / T) * sqrt((T + d^2 / m) / (m T))``."""
    return sigma / T * np.sqrt((T + d * d / m) / (m * T))


def soft_threshold_singular_values(M, tau):
    """Prox of ``tau * ||.||_*``: shrink every singular value by ``tau``."""
    U, sv, Vt = np.linalg.svd(M, full_matrices=False)
    shrunk = np.maximum(sv - tau, 0.0)
    return (U * shrunk) @ Vt, shrunk


def smoothness_constant(dataset):
    """Lipschitz constant of the gradient of ``L(Theta) / (2N)``: ``max_t ||X_t||_2^2 / N``."""
    top = max(np.linalg.norm(dataset.X[lo:hi], 2) ** 2 for lo, hi in zip(dataset.offsets[:-1], dataset.offsets[1:]))
    return top / dataset.total_samples


def nuc_fit(dataset, cfg, theta0=None):
    """Proximal gradient for ``L(Theta) / (2N) + lambda * ||Theta||_*``.

    ``lambda`` is ``cfg.reg_coeff`` or, if unset, :func:`default_reg_coeff`
    with ``cfg.noise_sd`` and ``m = min_t m_t``.  The step is the inverse
    smoothness constant; each iteration shrinks singular values by
    ``lambda * step``.
    """
    _check_rank(dataset, cfg.rank)
    T, d = dataset.task_count, dataset.dim
    lam = cfg.reg_coeff
    if lam is None:
        if cfg.noise_sd is None or cfg.noise_sd <= 0:
            raise ArgumentError("NUC needs reg_coeff > 0 or noise_sd > 0 to derive it")
        lam = default_reg_coeff(cfg.noise_sd, T, d, int(dataset.sizes.min()))
    if not lam > 0:
        raise ArgumentError(f"reg_coeff must be > 0, got {lam}")
    step = 1.0 / smoothness_constant(dataset)
    N = dataset.total_samples
    theta = np.zeros((T, d)) if theta0 is None else check_coefficients(dataset, theta0).copy()
    tracer = Tracer(dataset, cfg.trace_against)
    sub = Subspace.canonical(cfg.rank, d)
    for k in range(1, cfg.max_iters + 1):
        r = dataset.y - _kernels.predict(dataset.X, dataset.offsets, theta)
        grad = -_kernels.correlate(dataset.X, r, dataset.offsets) / N
        new_theta, _ = soft_threshold_singular_values(theta - step * grad, lam * step)
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(f"NUC diverged at iteration {k}", k, theta, sub.basis)
        change = np.linalg.norm(new_theta - theta) / max(np.linalg.norm(theta), 1e-30)
        theta = np.ascontiguousarray(new_theta)
        sub = _top_right_span(theta, cfg.rank)
        tracer.record(k, theta, sub)
        if change < cfg.rel_tol:
            break
    return FitResult(theta, sub, tracer.rows)


def _top_right_span(theta, s):
    svd = truncated_svd(theta, s)
    if svd.singular_values[0] == 0.0:
        return Subspace.canonical(s, theta.shape[1])
    return Subspace(np.ascontiguousarray(svd.right.T))


_SOLVERS = {
    "MoM": mom_solve,
    "AltMin": altmin_fit,
    "AltMinGD": altmingd_fit,
    "BM": bm_fit,
    "NUC": nuc_fit,
}


def solve(dataset, cfg):
    """Dispatch on ``cfg.method``."""
    return _SOLVERS[cfg.method](dataset, cfg)

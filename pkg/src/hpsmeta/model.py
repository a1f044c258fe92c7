"""Data types of the hard-parameter-sharing multi-task linear model.

Task ``t`` observes ``y_t = X_t theta_t + noise`` with every ``theta_t`` in a
shared ``s``-dimensional row space: ``Theta = W @ B`` where ``B`` is ``s x d``
with orthonormal rows.  Coefficient matrices ``Theta`` are plain ``(T, d)``
arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ArgumentError
from .linalg import as_matrix, row_orthonormality_residual

SUBSPACE_ATOL = 1e-8


@dataclass(frozen=True)
class TaskData:
    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        X = as_matrix(self.design, "design")
        y = np.asarray(self.response, dtype=np.float64).reshape(-1)
        if y.size != X.shape[0]:
            raise ArgumentError(f"response length {y.size} != design rows {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ArgumentError("response has non-finite entries")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)

    @property
    def size(self):
        return self.design.shape[0]


@dataclass(frozen=True)
class MultiTaskDataset:
    """``T`` regression tasks sharing the feature dimension ``d``.

    Rows of all tasks are stacked into ``X`` (``N x d``) and ``y``; task ``t``
    owns rows ``offsets[t]:offsets[t+1]``.  Sample sizes may differ by task.
    Use :meth:`from_tasks` to build one from per-task arrays.
    """

    X: np.ndarray
    y: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(as_matrix(self.X, "X"))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64).reshape(-1))
        offsets = np.ascontiguousarray(np.asarray(self.offsets, dtype=np.int64).reshape(-1))
        if y.size != X.shape[0]:
            raise ArgumentError(f"y has {y.size} entries but X has {X.shape[0]} rows")
        if not np.all(np.isfinite(y)):
            raise ArgumentError("y has non-finite entries")
        if offsets.size < 2 or offsets[0] != 0 or offsets[-1] != X.shape[0]:
            raise ArgumentError("offsets must start at 0, end at N and describe at least one task")
        if np.any(np.diff(offsets) < 1):
            raise ArgumentError("every task needs at least one sample")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_tasks(cls, tasks):
        tasks = [t if isinstance(t, TaskData) else TaskData(*t) for t in tasks]
        if not tasks:
            raise ArgumentError("need at least one task")
        d = tasks[0].design.shape[1]
        if any(t.design.shape[1] != d for t in tasks):
            raise ArgumentError("all tasks must share the feature dimension")
        offsets = np.concatenate([[0], np.cumsum([t.size for t in tasks])])
        return cls(
            np.vstack([t.design for t in tasks]),
            np.concatenate([t.response for t in tasks]),
            offsets,
        )

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def task_count(self):
        return self.offsets.size - 1

    @property
    def sizes(self):
        return np.diff(self.offsets)

    @property
    def total_samples(self):
        return self.X.shape[0]

    def task(self, t):
        lo, hi = self.offsets[t], self.offsets[t + 1]
        return TaskData(self.X[lo:hi], self.y[lo:hi])

    @property
    def tasks(self):
        return [self.task(t) for t in range(self.task_count)]

    def responses(self):
        """Per-task response vectors as a list."""
        return np.split(self.y, self.offsets[1:-1])

    def subset(self, indices):
        """Dataset restricted to the tasks in ``indices`` (in that order)."""
        return MultiTaskDataset.from_tasks([self.task(int(t)) for t in indices])


@dataclass(frozen=True)
class Subspace:
    """Row-orthonormal ``s x d`` basis of a shared representation.

    ``degenerate`` marks a basis that was chosen arbitrarily because the
    matrix it came from carried no directional information (e.g. was zero).
    """

    basis: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        B = as_matrix(self.basis, "basis")
        if B.shape[0] > B.shape[1]:
            raise ArgumentError(f"subspace rank {B.shape[0]} exceeds ambient dimension {B.shape[1]}")
        res = row_orthonormality_residual(B)
        if res > SUBSPACE_ATOL:
            raise ArgumentError(f"basis rows are not orthonormal (residual {res:.3g})")
        object.__setattr__(self, "basis", B)

    @property
    def rank(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    @classmethod
    def canonical(cls, s, d, degenerate=True):
        """First ``s`` rows of the ``d x d`` identity."""
        return cls(np.eye(s, d), degenerate=degenerate)

    def projector(self):
        return self.basis.T @ self.basis


@dataclass(frozen=True)
class FactoredCoefficients:
    weights: np.ndarray
    subspace: Subspace

    def __post_init__(self):
        W = as_matrix(self.weights, "weights")
        if W.shape[1] != self.subspace.rank:
            raise ArgumentError(f"weights have {W.shape[1]} columns, subspace rank is {self.subspace.rank}")
        object.__setattr__(self, "weights", W)


@dataclass(frozen=True)
class GroundTruth:
    factored: FactoredCoefficients
    noise_sd: float = 0.0
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sd = float(self.noise_sd)
        if not np.isfinite(sd) or sd < 0:
            raise ArgumentError(f"noise_sd must be finite and >= 0, got {self.noise_sd!r}")
        object.__setattr__(self, "noise_sd", sd)
        object.__setattr__(self, "theta", compose(self.factored))

    @property
    def weights(self):
        return self.factored.weights

    @property
    def subspace(self):
        return self.factored.subspace

    @property
    def basis(self):
        return self.factored.subspace.basis


def check_coefficients(dataset, theta):
    """Validate a ``(T, d)`` coefficient matrix against ``dataset``."""
    th = as_matrix(theta, "theta")
    if th.shape != (dataset.task_count, dataset.dim):
        raise ArgumentError(
            f"theta has shape {th.shape}, dataset needs ({dataset.task_count}, {dataset.dim})"
        )
    return np.ascontiguousarray(th)


def apply_operator(dataset, theta):
    """Stacked predictions ``[X_1 theta_1; ...; X_T theta_T]`` (length ``N``)."""
    th = check_coefficients(dataset, theta)
    return _kernels.predict(dataset.X, dataset.offsets, th)


def loss(dataset, theta):
    """Squared residual norm ``sum_t ||y_t - X_t theta_t||^2``."""
    r = dataset.y - apply_operator(dataset, theta)
    return float(r @ r)


def compose(factored):
    """``Theta = W @ B``."""
    return factored.weights @ factored.subspace.basis

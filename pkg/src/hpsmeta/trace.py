"""Per-iteration records shared by all iterative solvers."""

import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import metrics
from .model import loss as objective


@dataclass(frozen=True)
class IterationTrace:
    iter: int
    loss: float
    dist1: Optional[float]
    dist2: Optional[float]
    elapsed: float


class FitResult(NamedTuple):
    """``(theta, subspace, trace)`` returned by every solver."""

    theta: np.ndarray
    subspace: object
    trace: list

    @property
    def iterations(self):
        return len(self.trace)


class Tracer:
    """Builds :class:`IterationTrace` rows; Dist1/Dist2 only when a ground truth is given."""

    def __init__(self, dataset, truth=None):
        self.dataset = dataset
        self.truth = truth
        self.rows = []
        self._start = time.perf_counter()

    def record(self, k, theta, subspace):
        d1 = d2 = None
        if self.truth is not None:
            d1 = metrics.dist1(theta, self.truth)
            d2 = metrics.dist2(subspace, self.truth)
        row = IterationTrace(k, objective(self.dataset, theta), d1, d2, time.perf_counter() - self._start)
        self.rows.append(row)
        return row

"""Few-shot adaptation to new tasks and the meta-train / test evaluation protocol.

A learned subspace ``B`` is evaluated by fitting only the ``s`` weights of a
new task, ``w = ((X B^T)^T X B^T)^+ (X B^T)^T y``, and predicting with
``theta = B^T w``.  :func:`run_protocol` splits tasks into meta tasks (used to
learn ``B``) and test tasks, splits the samples of every task into training
and held-out points, and reports the mean relative error (MRE) per stage.

Raw tables are read by :func:`load_table` / :func:`preprocess`; the
transform of each column is declared in a YAML sidecar (see
:class:`PreprocessSpec`).
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
import yaml

from . import solvers
from .errors import ArgumentError, DataError, DegeneracyError
from .linalg import pseudo_inverse, solve_psd_batch
from .model import MultiTaskDataset, Subspace, TaskData
from .synthetic import random_subspace, stream

log = logging.getLogger(__name__)

STAGES = ("meta-test", "test-train", "test-test")
RANDOM_B = "Random-B"
LSQ_PINV = "Lsq-Pinv"
MRE_FLOOR = 1e-12


@dataclass(frozen=True)
class SplitProtocol:
    train_points_per_task: int
    meta_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.meta_fraction < 1:
            raise ArgumentError(f"meta_fraction must lie in (0, 1), got {self.meta_fraction}")
        if self.train_points_per_task < 1:
            raise ArgumentError("train_points_per_task must be >= 1")


@dataclass(frozen=True)
class StageReport:
    stage: str
    per_task_mre: np.ndarray
    m_mre: float = field(init=False)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ArgumentError(f"unknown stage {self.stage!r}")
        values = np.asarray(self.per_task_mre, dtype=np.float64)
        object.__setattr__(self, "per_task_mre", values)
        object.__setattr__(self, "m_mre", float(values.mean()))


class Adapted(NamedTuple):
    w: np.ndarray
    theta: np.ndarray
    singular: bool


def adapt_task(b, task):
    """Least-squares weights of ``task`` in the span of ``b`` and the implied coefficients."""
    B = b.basis if isinstance(b, Subspace) else np.asarray(b, dtype=np.float64)
    if not isinstance(task, TaskData):
        task = TaskData(*task)
    if task.design.shape[1] != B.shape[1]:
        raise ArgumentError(f"task has {task.design.shape[1]} features, subspace dimension is {B.shape[1]}")
    Z = task.design @ B.T
    w, singular = solve_psd_batch((Z.T @ Z)[None], (Z.T @ task.response)[None])
    w = w[0]
    return Adapted(w, B.T @ w, bool(singular[0]))


def lsq_pinv(task):
    """Pseudo-inverse least squares ``(X^T X)^+ X^T y`` (minimum-norm when underdetermined)."""
    if not isinstance(task, TaskData):
        task = TaskData(*task)
    return pseudo_inverse(task.design) @ task.response


def random_b(d, s, seed):
    """Random row-orthonormal ``s x d`` basis, drawn like the synthetic ground truth."""
    if not 1 <= s <= d:
        raise ArgumentError(f"need 1 <= s <= d, got s={s}, d={d}")
    return random_subspace(d, s, stream(seed, 17))


def mre(predictions, truth):
    """Mean of ``|pred_i - truth_i| / |truth_i|`` over points with ``|truth_i| > 1e-12``."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.size != t.size or p.size < 1:
        raise ArgumentError(f"need equal nonzero lengths, got {p.size} and {t.size}")
    ok = np.abs(t) > MRE_FLOOR
    if not ok.any():
        raise DegeneracyError("every truth value is numerically zero")
    if not ok.all():
        warnings.warn(f"mre skipped {int((~ok).sum())} points with zero truth", stacklevel=2)
    return float(np.mean(np.abs(p[ok] - t[ok]) / np.abs(t[ok])))


# --------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class _Split:
    meta: list
    test: list
    train_rows: dict
    test_rows: dict
    dropped: int


def split_tasks(dataset, split):
    """Assign tasks to meta/test and draw training points, deterministically from ``split.seed``.

    Tasks with no more than ``train_points_per_task`` samples cannot keep a
    held-out point and are dropped.
    """
    m = split.train_points_per_task
    keep = [t for t in range(dataset.task_count) if dataset.sizes[t] > m]
    dropped = dataset.task_count - len(keep)
    if dropped:
        log.warning("dropped %d tasks with <= %d samples", dropped, m)
    if len(keep) < 2:
        raise DataError("need at least two tasks with held-out points")
    order = stream(split.seed, 19).permutation(len(keep))
    n_meta = min(max(int(round(split.meta_fraction * len(keep))), 1), len(keep) - 1)
    meta = sorted(keep[i] for i in order[:n_meta])
    test = sorted(keep[i] for i in order[n_meta:])
    train_rows, test_rows = {}, {}
    for t in keep:
        perm = stream(split.seed, 23, t).permutation(int(dataset.sizes[t]))
        train_rows[t] = np.sort(perm[:m])
        test_rows[t] = np.sort(perm[m:])
    return _Split(meta, test, train_rows, test_rows, dropped)


def _rows(dataset, t, idx):
    task = dataset.task(t)
    return TaskData(task.design[idx], task.response[idx])


def _stage_mre(pairs, delog):
    out = []
    for pred, truth in pairs:
        if delog:
            pred, truth = np.exp(pred), np.exp(truth)
        out.append(mre(pred, truth))
    return out


def run_protocol(dataset, split, method, s, params=None, method_seed=0, delog=False):
    """Run the meta-train / meta-test / test-train / test-test evaluation.

    Parameters
    ----------
    dataset : MultiTaskDataset
    split : SplitProtocol
    method : str or callable
        A solver name from :data:`hpsmeta.solvers.METHODS`, ``"Random-B"``,
        ``"Lsq-Pinv"``, or a callable ``f(dataset, s) -> (theta, subspace)``.
    s : int
        Subspace dimension.
    params : dict, optional
        Hyperparameters for a named solver.
    delog : bool
        Compute MRE on ``exp`` of predictions and responses (for log-scale
        responses).

    Returns
    -------
    list of StageReport
        ``meta-test``, ``test-train``, ``test-test`` in that order.
        ``Random-B`` and ``Lsq-Pinv`` never see meta tasks, so their list has
        no ``meta-test`` entry.
    """
    sp = split_tasks(dataset, split)
    reports = []

    if method in (RANDOM_B, LSQ_PINV):
        basis = random_b(dataset.dim, s, method_seed) if method == RANDOM_B else None
    else:
        meta_train = MultiTaskDataset.from_tasks([_rows(dataset, t, sp.train_rows[t]) for t in sp.meta])
        if callable(method):
            theta, sub = method(meta_train, s)
        else:
            res = solvers.fit(method, meta_train, s, params, seed=method_seed)
            theta, sub = res.theta, res.subspace
        basis = sub
        pairs = []
        for i, t in enumerate(sp.meta):
            held = _rows(dataset, t, sp.test_rows[t])
            pairs.append((held.design @ theta[i], held.response))
        reports.append(StageReport("meta-test", _stage_mre(pairs, delog)))

    train_pairs, test_pairs = [], []
    for t in sp.test:
        train = _rows(dataset, t, sp.train_rows[t])
        held = _rows(dataset, t, sp.test_rows[t])
        theta_t = lsq_pinv(train) if basis is None else adapt_task(basis, train).theta
        train_pairs.append((train.design @ theta_t, train.response))
        test_pairs.append((held.design @ theta_t, held.response))
    reports.append(StageReport("test-train", _stage_mre(train_pairs, delog)))
    reports.append(StageReport("test-test", _stage_mre(test_pairs, delog)))
    return reports


# --------------------------------------------------------------------------
# raw tables

TRANSFORMS = ("minmax_global", "fold_standardize", "log_standardize_per_task", "log_only", "passthrough")
_LOG_TRANSFORMS = ("log_standardize_per_task", "log_only")


@dataclass(frozen=True)
class ColumnTransform:
    kind: str
    scope: str = "global"
    center: float = 183.0

    def __post_init__(self):
        if self.kind not in TRANSFORMS:
            raise DataError(f"unknown transform {self.kind!r}; expected one of {TRANSFORMS}")
        if self.scope not in ("global", "per_task"):
            raise DataError(f"scope must be 'global' or 'per_task', got {self.scope!r}")


@dataclass(frozen=True)
class PreprocessSpec:
    """Column transforms for a raw multi-task table.

    YAML sidecar layout::

        task_column: task_id
        response: pm25
        response_transform: log_only
        intercept: true
        columns:
          lon: minmax_global
          date: {transform: fold_standardize, center: 183}
          co_00: log_standardize_per_task

    Feature columns enter the design in the listed order, followed by the
    intercept column of ones.
    """

    response: str
    columns: dict
    task_column: str = "task_id"
    response_transform: str = "log_only"
    intercept: bool = True

    @classmethod
    def from_dict(cls, raw):
        try:
            cols = {}
            for name, value in dict(raw["columns"]).items():
                if isinstance(value, str):
                    cols[str(name)] = ColumnTransform(value, _default_scope(value))
                else:
                    kind = value["transform"]
                    cols[str(name)] = ColumnTransform(
                        kind, value.get("scope", _default_scope(kind)), float(value.get("center", 183.0))
                    )
            rt = raw.get("response_transform", "log_only")
            if rt not in ("log_only", "passthrough"):
                raise DataError("response_transform must be 'log_only' or 'passthrough'")
            return cls(
                response=str(raw["response"]),
                columns=cols,
                task_column=str(raw.get("task_column", "task_id")),
                response_transform=rt,
                intercept=bool(raw.get("intercept", True)),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed preprocessing spec: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise DataError(f"cannot read preprocessing spec {path}: {exc}") from exc
        return cls.from_dict(raw)


def _default_scope(kind):
    return "per_task" if kind == "log_standardize_per_task" else "global"


def load_table(path):
    """Read a ``task_id,<features...>,<response>`` CSV into a DataFrame."""
    try:
        return pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read table {path}: {exc}") from exc


class Preprocessed(NamedTuple):
    dataset: MultiTaskDataset
    task_ids: list
    rows_rejected: int
    tasks_dropped: int


def _standardize(values, groups, name):
    out = np.empty_like(values)
    for idx in groups:
        v = values[idx]
        sd = v.std()
        if not sd > 0:
            raise DegeneracyError(f"column {name!r} has zero variance and cannot be standardized")
        out[idx] = (v - v.mean()) / sd
    return out


def preprocess(table, spec):
    """Apply the column transforms of ``spec`` and group rows into tasks.

    Rows with a nonpositive value in a log-transformed column are rejected;
    tasks left empty are dropped.  Returns a :class:`Preprocessed` record.
    """
    needed = [spec.task_column, *spec.columns, spec.response]
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise DataError(f"table lacks columns {missing}")
    df = table[needed].copy()
    try:
        numeric = df[[*spec.columns, spec.response]].astype(np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"non-numeric value in a feature or response column: {exc}") from exc
    if not np.all(np.isfinite(numeric.to_numpy())):
        raise DataError("feature and response columns must be finite")
    df[numeric.columns] = numeric

    log_cols = [c for c, tr in spec.columns.items() if tr.kind in _LOG_TRANSFORMS]
    if spec.response_transform == "log_only":
        log_cols.append(spec.response)
    bad = (df[log_cols] <= 0).any(axis=1) if log_cols else pd.Series(False, index=df.index)
    rejected = int(bad.sum())
    df = df.loc[~bad]

    task_ids = list(pd.unique(table[spec.task_column]))
    present = set(df[spec.task_column])
    dropped = sum(1 for t in task_ids if t not in present)
    task_ids = [t for t in task_ids if t in present]
    if not task_ids:
        raise DataError("no rows left after rejecting nonpositive log-column values")
    order = {t: i for i, t in enumerate(task_ids)}
    df = df.assign(_order=df[spec.task_column].map(order)).sort_values("_order", kind="stable")
    task_index = df["_order"].to_numpy()
    per_task = [np.flatnonzero(task_index == i) for i in range(len(task_ids))]
    everything = [np.arange(len(df))]

    features = []
    for name, tr in spec.columns.items():
        x = df[name].to_numpy(dtype=np.float64)
        groups = per_task if tr.scope == "per_task" else everything
        if tr.kind == "minmax_global":
            lo, hi = x.min(), x.max()
            if not hi > lo:
                raise DegeneracyError(f"column {name!r} is constant; min-max scaling undefined")
            x = 2.0 * (x - lo) / (hi - lo) - 1.0
        elif tr.kind == "fold_standardize":
            x = _standardize(np.abs(x - tr.center), groups, name)
        elif tr.kind == "log_standardize_per_task":
            x = _standardize(np.log(x), groups, name)
        elif tr.kind == "log_only":
            x = np.log(x)
        features.append(x)
    if spec.intercept:
        features.append(np.ones(len(df)))
    if not features:
        raise DataError("no feature columns declared")
    X = np.column_stack(features)
    y = df[spec.response].to_numpy(dtype=np.float64)
    if spec.response_transform == "log_only":
        y = np.log(y)
    sizes = np.array([idx.size for idx in per_task])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return Preprocessed(MultiTaskDataset(X, y, offsets), task_ids, rejected, dropped)


def export_table(dataset, path, feature_prefix="x", response="y"):
    """Write ``dataset`` as a raw table (``task_id,x0..x{d-1},y``) for round-trip tests."""
    cols = [f"{feature_prefix}{k}" for k in range(dataset.dim)]
    df = pd.DataFrame(dataset.X, columns=cols)
    df.insert(0, "task_id", np.repeat(np.arange(dataset.task_count), dataset.sizes))
    df[response] = dataset.y
    df.to_csv(path, index=False, float_format="%.17g")
    return path

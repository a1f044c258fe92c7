"""Seeded experiment runner: parameter sweeps, minimal-data search, traces.

Every trial draws a fresh ground truth and dataset from a seed derived by
hashing ``(seed_base, "data", axis, value, trial)``; solver initialization
uses ``(seed_base, method, axis, value, trial)``.  Methods therefore see the
same data, and adding a method never changes another method's numbers.

Output CSVs are written with ``repr`` floats and sorted rows so identical
configurations give identical bytes.  ``wall_seconds`` is only filled when
``record_timing`` is on, since wall-clock time is not reproducible.
"""

import csv
import hashlib
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from . import metrics, solvers, synthetic
from .errors import ConfigError, DivergenceError
from .model import Subspace

log = logging.getLogger(__name__)

AXES = ("T", "m", "sigma")
RESULT_HEADER = ("method", "d", "s", "m", "T", "sigma", "trial_seed", "dist1", "dist2",
                 "iterations", "wall_seconds", "status")
SUMMARY_HEADER = ("method", "d", "s", "m", "T", "sigma", "trials", "dist1", "dist2",
                  "iterations", "wall_seconds", "diverged", "degenerate")
TRACE_HEADER = ("method", "iter", "loss", "dist1", "dist2", "elapsed_seconds")

NOT_FOUND = None


def derive_seed(*parts):
    """64-bit seed from a BLAKE2b hash of the ``repr`` of ``parts``."""
    text = "\x1f".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def fmt_value(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    axis: str
    values: tuple
    fixed: dict
    methods: dict
    trials: int = 5
    seed_base: int = 0
    output_dir: Optional[str] = None
    record_timing: bool = False
    name: str = "experiment"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep values must be nonempty")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for m in self.methods:
            if m not in solvers.METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {solvers.METHODS}")
        need = {"d", "s", "m", "T", "sigma"} - {self.axis} - set(self.fixed)
        if need:
            raise ConfigError(f"fixed settings lack {sorted(need)}")

    def setting(self, value):
        """``(d, s, m, T, sigma)`` for one axis value."""
        p = dict(self.fixed)
        p[self.axis] = value
        return int(p["d"]), int(p["s"]), int(p["m"]), int(p["T"]), float(p["sigma"])


def parse_methods(raw):
    if isinstance(raw, list):
        out = {}
        for item in raw:
            if isinstance(item, str):
                out[item] = {}
            else:
                out.update({k: dict(v or {}) for k, v in item.items()})
        return out
    if isinstance(raw, dict):
        return {k: dict(v or {}) for k, v in raw.items()}
    raise ConfigError("methods must be a list or a mapping")


def load_yaml(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return raw


def experiment_from_dict(raw):
    try:
        sweep = raw["sweep"]
        return ExperimentConfig(
            axis=str(sweep["axis"]),
            values=tuple(sweep["values"]),
            fixed=dict(raw.get("fixed", {})),
            methods=parse_methods(raw["methods"]),
            trials=int(raw.get("trials", 5)),
            seed_base=int(raw.get("seed_base", 0)),
            output_dir=raw.get("output_dir"),
            record_timing=bool(raw.get("record_timing", False)),
            name=str(raw.get("name", "experiment")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed sweep config: {exc!r}") from exc


# --------------------------------------------------------------------------
# single trials


@dataclass(frozen=True)
class ResultRow:
    method: str
    d: int
    s: int
    m: int
    T: int
    sigma: float
    trial_seed: int
    dist1: float
    dist2: float
    iterations: int
    wall_seconds: Optional[float]
    status: str

    def cells(self):
        return [fmt_value(getattr(self, k)) for k in RESULT_HEADER]


def data_seed(seed_base, axis, value, trial):
    return derive_seed(seed_base, "data", axis, value, trial)


def method_seed(seed_base, method, axis, value, trial):
    return derive_seed(seed_base, method, axis, value, trial)


def run_trial(method, params, d, s, m, T, sigma, dseed, mseed, record_timing=False):
    """Generate one dataset, fit ``method`` and score it."""
    cfg = synthetic.DgpConfig(d=d, s=s, T=T, m=m, sigma=sigma, seed=dseed)
    gt, ds = synthetic.generate(cfg)
    start = time.perf_counter()
    try:
        res = solvers.fit(method, ds, s, params, seed=mseed, noise_sd=sigma)
        theta, sub, iters = res.theta, res.subspace, res.iterations
        status = "degenerate" if sub.degenerate else "ok"
    except DivergenceError as exc:
        theta = exc.theta if exc.theta is not None else np.zeros((T, d))
        sub = Subspace(exc.basis) if exc.basis is not None else Subspace.canonical(s, d)
        iters = exc.iteration - 1
        status = "diverged"
    wall = time.perf_counter() - start
    with np.errstate(over="ignore", invalid="ignore"):
        d1 = metrics.dist1(theta, gt)
    return ResultRow(method, d, s, m, T, sigma, dseed, d1, metrics.dist2(sub, gt), iters,
                     wall if record_timing else None, status)


def _run_job(job):
    return job[0], run_trial(*job[1:])


def _jobs(cfg):
    for mi, (method, params) in enumerate(cfg.methods.items()):
        for vi, value in enumerate(cfg.values):
            d, s, m, T, sigma = cfg.setting(value)
            for trial in range(cfg.trials):
                key = (mi, vi, trial)
                yield (key, method, params, d, s, m, T, sigma,
                       data_seed(cfg.seed_base, cfg.axis, value, trial),
                       method_seed(cfg.seed_base, method, cfg.axis, value, trial),
                       cfg.record_timing)


def _execute(jobs, threads):
    jobs = list(jobs)
    if threads <= 1 or len(jobs) <= 1:
        out = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_run_job, jobs))
    out.sort(key=lambda kv: kv[0])
    return [row for _, row in out]


# --------------------------------------------------------------------------
# sweeps


def summarize(rows):
    """Mean over trials for every ``(method, setting)`` group, in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.d, r.s, r.m, r.T, r.sigma), []).append(r)
    out = []
    for (method, d, s, m, T, sigma), rs in groups.items():
        walls = [r.wall_seconds for r in rs]
        out.append({
            "method": method, "d": d, "s": s, "m": m, "T": T, "sigma": sigma,
            "trials": len(rs),
            "dist1": float(np.mean([r.dist1 for r in rs])),
            "dist2": float(np.mean([r.dist2 for r in rs])),
            "iterations": float(np.mean([r.iterations for r in rs])),
            "wall_seconds": None if any(w is None for w in walls) else float(np.mean(walls)),
            "diverged": sum(r.status == "diverged" for r in rs),
            "degenerate": sum(r.status == "degenerate" for r in rs),
        })
    return out


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_results(rows, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "results.csv"), RESULT_HEADER, [r.cells() for r in rows])
    summary = summarize(rows)
    write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_HEADER,
               [[fmt_value(s[k]) for k in SUMMARY_HEADER] for s in summary])
    return summary


def run_sweep(cfg, threads=1, out_dir=None):
    """Run every ``axis value x method x trial`` and write ``results.csv`` / ``summary.csv``.

    Diverging solvers are recorded with ``status=diverged`` (metrics of the
    last finite iterate); the sweep itself never aborts on them.
    """
    rows = _execute(_jobs(cfg), threads)
    out_dir = out_dir or cfg.output_dir
    if out_dir:
        write_results(rows, out_dir)
    return rows


# --------------------------------------------------------------------------
# minimal number of tasks


def default_granularity(T):
    """Rounding step for reported task counts: tens below 1000, hundreds from 1000 on."""
    return 100 if T >= 1000 else 10


@dataclass
class MinTasksSearch:
    """Smallest ``T`` (at a given granularity) whose mean Dist2 over trials meets ``target``.

    Doubling from ``start`` until the target is met, then bisection on the
    bracketing interval.  ``probes`` keeps every evaluated ``(T, mean_dist2)``.
    """

    method: str
    m: int
    d: int
    s: int
    sigma: float
    params: dict = field(default_factory=dict)
    target: float = 0.1
    granularity: Optional[int] = None
    trials: int = 5
    seed_base: int = 0
    start: int = 100
    ceiling: int = 100_000
    threads: int = 1
    probes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.target < 1 + 1e-12:
            raise ConfigError(f"target must lie in (0, 1], got {self.target}")
        if self.granularity not in (None, 10, 100):
            raise ConfigError("granularity must be 10 or 100")

    def mean_dist2(self, T):
        if T not in self.probes:
            jobs = [((T, k), self.method, self.params, self.d, self.s, self.m, T, self.sigma,
                     data_seed(self.seed_base, "T", T, k),
                     method_seed(self.seed_base, self.method, "T", T, k), False)
                    for k in range(self.trials)]
            rows = _execute(jobs, self.threads)
            self.probes[T] = float(np.mean([r.dist2 for r in rows]))
            log.info("%s m=%d T=%d mean dist2=%.4f", self.method, self.m, T, self.probes[T])
        return self.probes[T]

    def achieves(self, T):
        return self.mean_dist2(T) <= self.target

    def run(self):
        T = max(self.start, self.s)
        lo = None
        while not self.achieves(T):
            lo = T
            T *= 2
            if T > self.ceiling:
                return NOT_FOUND
        hi = T
        if lo is None:
            return hi
        g = self.granularity or default_granularity(hi)
        while hi - lo > g:
            mid = lo + max(g, int(round((hi - lo) / 2 / g)) * g)
            if mid >= hi:
                break
            if self.achieves(mid):
                hi = mid
            else:
                lo = mid
        return hi


def min_tasks_search(method, m, fixed, target=0.1, granularity=None, **kw):
    """Convenience wrapper around :class:`MinTasksSearch`; returns ``NOT_FOUND`` above the ceiling."""
    search = MinTasksSearch(method, m, int(fixed["d"]), int(fixed["s"]), float(fixed["sigma"]),
                            target=target, granularity=granularity, **kw)
    return search.run()


# --------------------------------------------------------------------------
# traces


def trace_run(method, params, gt, dataset, seed=0):
    """Fit with Dist1/Dist2 tracing; returns CSV-ready rows in ``TRACE_HEADER`` order."""
    res = solvers.fit(method, dataset, gt.subspace.rank, params, seed=seed, truth=gt,
                      noise_sd=gt.noise_sd)
    return [[method, str(t.iter), fmt_value(t.loss), fmt_value(t.dist1), fmt_value(t.dist2), fmt_value(t.elapsed)]
            for t in res.trace]


def write_trace(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_csv(path, TRACE_HEADER, rows)


def with_seed(cfg, seed):
    return replace(cfg, seed_base=int(seed))

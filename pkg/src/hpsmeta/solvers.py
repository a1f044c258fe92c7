"""Name-based access to every estimator, used by the harness and the adaptation protocol."""

from . import baselines, metasp
from .errors import ConfigError

METASP = "Meta-SP"
METHODS = (METASP,) + baselines.METHODS

_METASP_KEYS = {"step_size", "max_iters", "rel_tol"}
_BASELINE_KEYS = {"step_size", "max_iters", "rel_tol", "reg_coeff"}


def fit(method, dataset, rank, params=None, seed=0, truth=None, noise_sd=None):
    """Fit ``method`` with hyperparameters ``params`` (a dict) and return a FitResult.

    ``seed`` drives random initialization (ignored by Meta-SP, which starts
    at zero).  ``truth`` enables Dist1/Dist2 in the trace; ``noise_sd`` feeds
    NUC's default regularization coefficient.
    """
    params = dict(params or {})
    if method == METASP:
        _check_keys(method, params, _METASP_KEYS)
        cfg = metasp.MetaSpConfig(rank=rank, trace_against=truth, **params)
        return metasp.fit(dataset, cfg)
    if method not in baselines.METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    _check_keys(method, params, _BASELINE_KEYS)
    cfg = baselines.BaselineConfig(
        method, rank=rank, seed=seed, noise_sd=noise_sd, trace_against=truth, **params
    )
    return baselines.solve(dataset, cfg)


def _check_keys(method, params, allowed):
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"{method} does not accept parameters {sorted(extra)}")

"""Per-task inner loops over the stacked design.

Every dataset is stored as one ``(N, d)`` design ``X``, one response ``y`` of
length ``N`` and an ``offsets`` array of length ``T + 1``; task ``t`` owns rows
``offsets[t]:offsets[t + 1]``.  The kernels below walk that ragged layout.

Two implementations exist for each kernel: a numba ``@njit`` loop and a pure
numpy version.  The numba path is used when numba imports and the environment
variable ``HPSMETA_BACKEND`` is not set to ``numpy``.  Both must agree to
rounding error; ``tests/test_kernels.py`` checks that.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _requested_backend():
    name = os.environ.get("HPSMETA_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"HPSMETA_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and numba is None:
        return "numpy"
    return name


BACKEND = _requested_backend()


# --------------------------------------------------------------------------
# numpy implementations


def _equal_sizes(offsets):
    counts = np.diff(offsets)
    return counts[0] if np.all(counts == counts[0]) else None


def np_predict(X, offsets, theta):
    """Stacked predictions ``x_{t,j} . theta_t`` for every row."""
    T, d = theta.shape
    m = _equal_sizes(offsets)
    if m is not None:
        return np.einsum("tmd,td->tm", X.reshape(T, m, d), theta).reshape(-1)
    owner = np.repeat(np.arange(T), np.diff(offsets))
    return np.einsum("nd,nd->n", X, theta[owner])


def np_correlate(X, r, offsets):
    """Per-task ``X_t^T r_t`` as a ``(T, d)`` array."""
    T = offsets.size - 1
    d = X.shape[1]
    m = _equal_sizes(offsets)
    if m is not None:
        return np.einsum("tmd,tm->td", X.reshape(T, m, d), r.reshape(T, m))
    return np.add.reduceat(X * r[:, None], offsets[:-1], axis=0)


def np_gradient_step(X, y, offsets, theta, gamma):
    """``theta_t + gamma / m_t * X_t^T (y_t - X_t theta_t)`` for every task."""
    r = y - np_predict(X, offsets, theta)
    counts = np.diff(offsets).astype(np.float64)
    return theta + (gamma / counts)[:, None] * np_correlate(X, r, offsets)


def np_projected_gram(X, y, offsets, basis):
    """Per-task normal equations of the projected design ``Z_t = X_t B^T``.

    Returns ``G`` with ``G[t] = Z_t^T Z_t`` (shape ``(T, s, s)``) and ``q`` with
    ``q[t] = Z_t^T y_t`` (shape ``(T, s)``).
    """
    Z = X @ basis.T
    T = offsets.size - 1
    s = basis.shape[0]
    m = _equal_sizes(offsets)
    if m is not None:
        Zt = Z.reshape(T, m, s)
        return np.einsum("tma,tmb->tab", Zt, Zt), np.einsum("tma,tm->ta", Zt, y.reshape(T, m))
    G = np.add.reduceat(Z[:, :, None] * Z[:, None, :], offsets[:-1], axis=0)
    q = np.add.reduceat(Z * y[:, None], offsets[:-1], axis=0)
    return G, q


# --------------------------------------------------------------------------
# numba implementations

if numba is not None:

    @numba.njit(cache=True)
    def nb_predict(X, offsets, theta):
        T, d = theta.shape
        out = np.empty(X.shape[0])
        for t in range(T):
            for j in range(offsets[t], offsets[t + 1]):
                acc = 0.0
                for k in range(d):
                    acc += X[j, k] * theta[t, k]
                out[j] = acc
        return out

    @numba.njit(cache=True)
    def nb_correlate(X, r, offsets):
        T = offsets.size - 1
        d = X.shape[1]
        out = np.zeros((T, d))
        for t in range(T):
            for j in range(offsets[t], offsets[t + 1]):
                rj = r[j]
                for k in range(d):
                    out[t, k] += X[j, k] * rj
        return out

    @numba.njit(cache=True)
    def nb_gradient_step(X, y, offsets, theta, gamma):
        T, d = theta.shape
        out = theta.copy()
        for t in range(T):
            lo = offsets[t]
            hi = offsets[t + 1]
            scale = gamma / (hi - lo)
            for j in range(lo, hi):
                acc = 0.0
                for k in range(d):
                    acc += X[j, k] * theta[t, k]
                rj = scale * (y[j] - acc)
                for k in range(d):
                    out[t, k] += X[j, k] * rj
        return out

    @numba.njit(cache=True)
    def nb_projected_gram(X, y, offsets, basis):
        T = offsets.size - 1
        s, d = basis.shape
        G = np.zeros((T, s, s))
        q = np.zeros((T, s))
        z = np.empty(s)
        for t in range(T):
            for j in range(offsets[t], offsets[t + 1]):
                for a in range(s):
                    acc = 0.0
                    for k in range(d):
                        acc += X[j, k] * basis[a, k]
                    z[a] = acc
                yj = y[j]
                for a in range(s):
                    q[t, a] += z[a] * yj
                    for b in range(s):
                        G[t, a, b] += z[a] * z[b]
        return G, q

else:  # pragma: no cover
    nb_predict = nb_correlate = nb_gradient_step = nb_projected_gram = None


IMPLEMENTATIONS = {
    "numpy": {
        "predict": np_predict,
        "correlate": np_correlate,
        "gradient_step": np_gradient_step,
        "projected_gram": np_projected_gram,
    },
}
if numba is not None:
    IMPLEMENTATIONS["numba"] = {
        "predict": nb_predict,
        "correlate": nb_correlate,
        "gradient_step": nb_gradient_step,
        "projected_gram": nb_projected_gram,
    }

_active = IMPLEMENTATIONS[BACKEND]
predict = _active["predict"]
correlate = _active["correlate"]
gradient_step = _active["gradient_step"]
projected_gram = _active["projected_gram"]

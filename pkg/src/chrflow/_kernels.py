"""Compiled inner loops with pure-numpy twins.

Set ``CHRFLOW_DISABLE_NUMBA=1`` to force the numpy versions (useful for
debugging and for platforms without a working numba).  Both variants take the
same arguments and agree to rounding.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the backend switch
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def numba_enabled() -> bool:
    flag = os.environ.get("CHRFLOW_DISABLE_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag not in {"1", "true", "yes", "on"}


def np_pair_sum(values: np.ndarray, weights: np.ndarray, h: float, s: float) -> np.ndarray:
    """Sum over ordered pairs j != k of w_j w_k |v_j - v_k|^2 / |t_j - t_k|^(1+2s).

    ``values`` has shape (m, ncol); the sum is taken per column.  Uniform
    spacing ``h`` lets the loop run over lags instead of pairs.
    """
    m = values.shape[0]
    out = np.zeros(values.shape[1])
    p = 1.0 + 2.0 * s
    for lag in range(1, m):
        diff = values[lag:] - values[:-lag]
        ww = weights[lag:] * weights[:-lag]
        out += (2.0 / (lag * h) ** p) * (ww @ (diff * diff))
    return out


@njit(cache=True)
def nb_pair_sum(values, weights, h, s):
    m, ncol = values.shape
    out = np.zeros(ncol)
    p = 1.0 + 2.0 * s
    kern = np.empty(m)
    for lag in range(1, m):
        kern[lag] = 2.0 / (lag * h) ** p
    for j in range(m):
        for i in range(j + 1, m):
            a = kern[i - j] * weights[i] * weights[j]
            for col in range(ncol):
                d = values[i, col] - values[j, col]
                out[col] += a * d * d
    return out


def pair_sum(values: np.ndarray, weights: np.ndarray, h: float, s: float) -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if numba_enabled():
        return nb_pair_sum(v, w, float(h), float(s))
    return np_pair_sum(v, w, float(h), float(s))


def backend() -> str:
    return "numba" if numba_enabled() else "numpy"

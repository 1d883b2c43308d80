"""Hot inner loops, each with a numba kernel and a numpy twin.

The public names dispatch to the compiled kernel when numba is enabled
(see :mod:`girdershm._accel`). The ``np_*`` twins are always importable so
tests and ``benchmarks/bench_kernels.py`` can compare both paths.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, jit

__all__ = [
    "HAVE_NUMBA",
    "influence_ordinate",
    "moving_load_strain",
    "lag_matrix",
    "ar_predict",
    "np_moving_load_strain",
    "np_lag_matrix",
    "np_ar_predict",
]


def influence_ordinate(x_sensor: float, x_load: float, span: float) -> float:
    """Bending-moment influence ordinate of a unit load on a simple span."""
    if x_load < 0.0 or x_load > span:
        return 0.0
    if x_load <= x_sensor:
        return x_load * (span - x_sensor) / span
    return x_sensor * (span - x_load) / span


# ---------------------------------------------------------------- numpy twins


def np_moving_load_strain(
    positions: np.ndarray,
    weights: np.ndarray,
    x_sensor: float,
    span: float,
    win_lo: float,
    win_hi: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Superpose axle loads through the influence line.

    ``positions`` is (n_steps, n_axles) axle coordinates along the span.
    Returns the total response and the part contributed by axles inside
    ``[win_lo, win_hi]``.
    """
    pos = np.asarray(positions, dtype=np.float64)
    on = (pos >= 0.0) & (pos <= span)
    ordinate = np.where(
        pos <= x_sensor,
        pos * (span - x_sensor) / span,
        x_sensor * (span - pos) / span,
    )
    contrib = np.where(on, ordinate, 0.0) * weights[None, :]
    inside = (pos >= win_lo) & (pos <= win_hi)
    return contrib.sum(axis=1), np.where(inside, contrib, 0.0).sum(axis=1)


def np_lag_matrix(x: np.ndarray, m: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    return np.array(sliding_window_view(x[:-1], m))


def np_ar_predict(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = coef.shape[0]
    return sliding_window_view(x[:-1], m) @ coef


# ---------------------------------------------------------------- numba kernels


def _moving_load_loop(positions, weights, x_sensor, span, win_lo, win_hi):
    n_steps, n_axles = positions.shape
    total = np.zeros(n_steps)
    windowed = np.zeros(n_steps)
    for t in range(n_steps):
        acc = 0.0
        acc_w = 0.0
        for a in range(n_axles):
            p = positions[t, a]
            if p < 0.0 or p > span:
                continue
            if p <= x_sensor:
                v = p * (span - x_sensor) / span
            else:
                v = x_sensor * (span - p) / span
            v *= weights[a]
            acc += v
            if win_lo <= p <= win_hi:
                acc_w += v
        total[t] = acc
        windowed[t] = acc_w
    return total, windowed


def _lag_matrix_loop(x, m):
    rows = x.shape[0] - m
    out = np.empty((rows, m))
    for j in range(rows):
        for i in range(m):
            out[j, i] = x[j + i]
    return out


def _ar_predict_loop(x, coef):
    m = coef.shape[0]
    rows = x.shape[0] - m
    out = np.empty(rows)
    for j in range(rows):
        acc = 0.0
        for i in range(m):
            acc += x[j + i] * coef[i]
        out[j] = acc
    return out


_nb_moving_load = jit(_moving_load_loop)
_nb_lag_matrix = jit(_lag_matrix_loop)
_nb_ar_predict = jit(_ar_predict_loop)


def moving_load_strain(positions, weights, x_sensor, span, win_lo=np.inf, win_hi=-np.inf):
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if _nb_moving_load is None:
        return np_moving_load_strain(positions, weights, x_sensor, span, win_lo, win_hi)
    return _nb_moving_load(
        positions, weights, float(x_sensor), float(span), float(win_lo), float(win_hi)
    )


def lag_matrix(x: np.ndarray, m: int) -> np.ndarray:
    """Rows ``(x[j], ..., x[j+m-1])`` for ``j = 0 .. n-m-1``."""
    if _nb_lag_matrix is None:
        return np_lag_matrix(x, m)
    return _nb_lag_matrix(np.ascontiguousarray(x, dtype=np.float64), int(m))


def ar_predict(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """One-step AR prediction ``lag_matrix(x, m) @ coef`` without forming the matrix."""
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    if _nb_ar_predict is None:
        return np_ar_predict(x, coef)
    return _nb_ar_predict(np.ascontiguousarray(x, dtype=np.float64), coef)

"""Least-squares autoregressive models, residuals and BIC order selection."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .kernels import ar_predict, lag_matrix
from .signals import PassageMatrix

RANK_TOL = 1e-10
# residual energy below this fraction of the target energy is round-off
ZERO_FIT = 1e-20
DEFAULT_ORDERS = range(1, 151)


@dataclass(frozen=True)
class ArModel:
    """Frozen AR(m) predictor.

    ``coefficients`` follow the column order of the regression matrix, i.e.
    ``(a_m, ..., a_1)``: the first entry multiplies the oldest lag.
    """

    order: int
    coefficients: np.ndarray
    channel_id: str = ""
    trained_on: int = 1
    rank_deficient: bool = False

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64)
        if self.order < 1 or coef.shape != (self.order,):
            raise ValueError(f"order {self.order} does not match {coef.shape[0]} coefficients")
        if not np.all(np.isfinite(coef)):
            raise ValueError("non-finite AR coefficients")
        object.__setattr__(self, "coefficients", coef)

    @property
    def lag_coefficients(self) -> np.ndarray:
        """``(a_1, ..., a_m)``, lag-1 first."""
        return self.coefficients[::-1]

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "coefficients": self.coefficients.tolist(),
            "channel_id": self.channel_id,
            "trained_on": self.trained_on,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArModel":
        return cls(
            order=int(d["order"]),
            coefficients=np.asarray(d["coefficients"], dtype=np.float64),
            channel_id=d.get("channel_id", ""),
            trained_on=int(d.get("trained_on", 1)),
            rank_deficient=bool(d.get("rank_deficient", False)),
        )


@dataclass(frozen=True)
class ArFitResult:
    model: ArModel
    residuals: np.ndarray = field(repr=False)
    mse: float

    @property
    def rank_deficient(self) -> bool:
        return self.model.rank_deficient


@dataclass(frozen=True)
class BicCurve:
    orders: np.ndarray
    values: np.ndarray
    optimum: int
    degenerate: bool = False

    def to_csv(self, path=None) -> str:
        """CSV text with header ``order,bic``; also written to ``path`` when given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["order", "bic"])
        for m, v in zip(self.orders, self.values):
            w.writerow([int(m), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _signals(x) -> list[np.ndarray]:
    if isinstance(x, PassageMatrix):
        return [row for row in x.data]
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return [x]
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return list(x)
    return [np.asarray(s, dtype=np.float64) for s in x]


def build_regression(x, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Lagged regression system ``S = H w`` for an AR(m) model.

    Row ``j`` of ``H`` is ``(x_j, ..., x_{j+m-1})`` and ``S_j = x_{j+m}``.
    """
    x = np.asarray(x, dtype=np.float64)
    if m < 1:
        raise ValueError("AR order must be >= 1")
    if x.shape[0] <= m:
        raise ValueError(f"signal of length {x.shape[0]} too short for order {m}")
    return lag_matrix(x, m), x[m:].copy()


def _stacked_system(signals: Sequence[np.ndarray], m: int) -> tuple[np.ndarray, np.ndarray]:
    # rows never straddle two passages
    parts = [build_regression(s, m) for s in signals]
    if len(parts) == 1:
        return parts[0]
    return np.vstack([h for h, _ in parts]), np.concatenate([s for _, s in parts])


def _lstsq(H: np.ndarray, S: np.ndarray) -> tuple[np.ndarray, bool]:
    # QR with column pivoting; minimum-norm solution when rank deficient
    w, _, rank, _ = linalg.lstsq(H, S, cond=RANK_TOL, lapack_driver="gelsy", check_finite=False)
    return w, rank < H.shape[1]


def fit_ar(x, m: int, channel_id: str = "") -> ArFitResult:
    """Least-squares AR(m) fit.

    ``x`` is one signal or a collection of signals (e.g. the rows of a
    passage matrix); in the latter case the per-signal systems are stacked
    and the residuals concatenated in input order.
    """
    signals = _signals(x)
    if not signals:
        raise ValueError("no signals to fit")
    for s in signals:
        if s.shape[0] < 2 * m + 1:
            raise ValueError(f"signal of length {s.shape[0]} too short for order {m}")
    H, S = _stacked_system(signals, m)
    w, deficient = _lstsq(H, S)
    resid = S - H @ w
    model = ArModel(m, w, channel_id, len(signals), deficient)
    return ArFitResult(model, resid, float(np.mean(resid**2)))


def predict_residuals(x, model: ArModel) -> tuple[np.ndarray, np.ndarray]:
    """Apply a frozen model: returns ``(S - S_hat, S_hat)`` with ``S = x[m:]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] <= model.order:
        raise ValueError(f"signal of length {x.shape[0]} too short for order {model.order}")
    recon = ar_predict(x, model.coefficients)
    return x[model.order :] - recon, recon


def bic(residuals, m: int, n_effective: int | None = None) -> float:
    """Schwarz criterion ``n ln(mean residual^2) + m ln(n)``.

    Returns ``-inf`` for an exactly zero residual (noise-free fit).
    """
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty residual vector")
    n = int(n_effective) if n_effective is not None else r.size
    mse = float(np.mean(r**2))
    if mse == 0.0:
        return -math.inf
    return n * math.log(mse) + m * math.log(n)


def bic_curve(x, orders: Iterable[int] = DEFAULT_ORDERS) -> np.ndarray:
    """BIC of a single signal for every candidate order."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for m in orders:
        H, S = build_regression(x, m)
        w, _ = _lstsq(H, S)
        resid = S - H @ w
        if np.mean(resid**2) <= ZERO_FIT * np.mean(S**2):
            out.append(-math.inf)
        else:
            out.append(bic(resid, m))
    return np.asarray(out)


def _argmin_smallest(values: np.ndarray) -> int:
    # np.argmin already returns the first (smallest-order) minimiser
    return int(np.argmin(values))


def select_order(signals, orders: Iterable[int] = DEFAULT_ORDERS) -> BicCurve:
    """Average per-signal BIC curves and pick the order at the minimum.

    ``signals`` may be a passage matrix, a 2-D array, or a list of either
    (one per channel); every row contributes one curve.
    """
    orders = np.asarray(list(orders), dtype=int)
    if orders.size == 0:
        raise ValueError("empty order grid")
    if isinstance(signals, (PassageMatrix, np.ndarray)):
        signals = [signals]
    rows: list[np.ndarray] = []
    for item in signals:
        rows.extend(_signals(item))
    if not rows:
        raise ValueError("no signals for order selection")
    for r in rows:
        if r.shape[0] < 2 * orders.max() + 1:
            raise ValueError(f"signal of length {r.shape[0]} too short for order {orders.max()}")

    curves = np.vstack([bic_curve(r, orders) for r in rows])
    degenerate = bool(np.isneginf(curves).any())
    if degenerate:
        # noise-free fits: rank such orders first, then by finite mean
        finite = np.where(np.isneginf(curves), np.nan, curves)
        n_inf = np.isneginf(curves).sum(axis=0)
        mean = np.nanmean(np.where(np.isnan(finite), 0.0, finite), axis=0)
        key = np.lexsort((orders, mean, -n_inf))
        avg = np.where(n_inf > 0, -np.inf, curves.mean(axis=0))
        return BicCurve(orders, avg, int(orders[key[0]]), degenerate=True)
    avg = curves.mean(axis=0)
    return BicCurve(orders, avg, int(orders[_argmin_smallest(avg)]))

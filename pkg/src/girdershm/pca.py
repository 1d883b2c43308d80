"""Principal-component removal of operational variation across passages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import PassageMatrix

DEFAULT_THRESHOLD = 0.80
EIG_CLAMP = 1e-12


@dataclass(frozen=True)
class PcaBasis:
    """Baseline principal directions.

    ``components`` is ``n x r`` with orthonormal columns ordered by decreasing
    eigenvalue, where ``r`` is the numerical rank of the centred baseline
    matrix (at most ``k - 1``). ``eigenvalues`` holds the whole economy
    spectrum, zero past the rank. Only the first ``retained_p`` columns are
    removed from data.
    """

    components: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    retained_p: int
    column_means: np.ndarray = field(repr=False)
    source_k: int

    @property
    def n(self) -> int:
        return self.column_means.shape[0]

    @property
    def rank(self) -> int:
        return self.components.shape[1]

    @property
    def retained(self) -> np.ndarray:
        return self.components[:, : self.retained_p]

    def explained_fraction(self) -> float:
        total = self.eigenvalues.sum()
        if total == 0:
            return 0.0
        return float(self.eigenvalues[: self.retained_p].sum() / total)

    def with_retained(self, p: int) -> "PcaBasis":
        if not 0 <= p <= self.rank:
            raise ValueError(f"retained_p must lie in [0, {self.rank}], got {p}")
        return PcaBasis(self.components, self.eigenvalues, p, self.column_means, self.source_k)

    def to_dict(self, full: bool = False) -> dict:
        comps = self.components if full else self.retained
        return {
            "n": self.n,
            "source_k": self.source_k,
            "retained_p": self.retained_p,
            "eigenvalues": self.eigenvalues.tolist(),
            "column_means": self.column_means.tolist(),
            "components": comps.T.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaBasis":
        n = int(d["n"])
        comps = np.ascontiguousarray(np.asarray(d["components"], dtype=np.float64).reshape(-1, n).T)
        return cls(
            components=comps,
            eigenvalues=np.asarray(d["eigenvalues"], dtype=np.float64),
            retained_p=int(d["retained_p"]),
            column_means=np.asarray(d["column_means"], dtype=np.float64),
            source_k=int(d["source_k"]),
        )


def _as_array(X) -> np.ndarray:
    data = X.data if isinstance(X, PassageMatrix) else X
    return np.asarray(data, dtype=np.float64)


def select_p(eigenvalues, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Smallest count whose cumulative variance share reaches ``threshold``."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = lam.sum()
    if lam.size == 0 or total <= 0:
        return 0
    share = np.cumsum(lam) / total
    # round-off in the cumulative sum must not push an exact tie past the threshold
    hit = np.flatnonzero(share >= threshold * (1 - 1e-12))
    return int(hit[0]) + 1 if hit.size else lam.size


def fit_pca(X, threshold: float = DEFAULT_THRESHOLD) -> PcaBasis:
    """Economy SVD of the column-centred baseline matrix ``X`` (k x n)."""
    data = _as_array(X)
    if data.ndim != 2:
        raise ValueError("expected a k x n matrix")
    k, n = data.shape
    if k < 2:
        raise ValueError(f"need at least 2 passages to fit PCA, got {k}")
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite entries in baseline matrix")

    means = data.mean(axis=0)
    centred = data - means
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    eig = s**2 / (k - 1)
    eig[eig < EIG_CLAMP] = 0.0

    tol = s.max(initial=0.0) * max(k, n) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    rank = min(rank, k - 1)
    eig[rank:] = 0.0
    comps = np.ascontiguousarray(vt[:rank].T)
    p = select_p(eig, threshold)
    return PcaBasis(comps, eig, p, means, k)


def remove_components(X, basis: PcaBasis):
    """Centre by the baseline means and subtract the projection on the retained directions.

    The same (baseline) basis is used whether ``X`` holds baseline or test
    passages. Returns the same type as ``X``.
    """
    data = _as_array(X)
    squeeze = data.ndim == 1
    if squeeze:
        data = data[None, :]
    if data.shape[1] != basis.n:
        raise ValueError(f"signal length {data.shape[1]} does not match basis dimension {basis.n}")
    centred = data - basis.column_means
    t_hat = basis.retained
    resid = centred - (centred @ t_hat) @ t_hat.T
    if squeeze:
        resid = resid[0]
    if isinstance(X, PassageMatrix):
        return X.with_data(resid)
    return resid


def principal_part(X, basis: PcaBasis) -> np.ndarray:
    """Projection of the centred data on the retained directions."""
    centred = _as_array(X) - basis.column_means
    t_hat = basis.retained
    return (centred @ t_hat) @ t_hat.T

"""Fit ratios, damage features, Gaussian confidence boundaries and scoring.

A :class:`BaselineModel` is fitted per (channel, speed bin). Test passages
are projected with the frozen baseline PCA basis, run through the frozen
AR model, and their fit ratio compared with the baseline reference.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from .ar import ArModel, BicCurve, fit_ar, predict_residuals, select_order
from .pca import PcaBasis, fit_pca, remove_components
from .signals import (
    ChannelMeta,
    DamageSpec,
    PassageRecord,
    align_to_matrix,
    common_length,
    speed_bin,
    trigger_index,
)

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
SIGMA_FLOOR = 1e-9


class SpeedBinMismatch(ValueError):
    """Raised when passages are scored against a baseline of another speed bin."""


# ------------------------------------------------------------------ primitives


def fit_ratio(measured, reconstructed) -> float:
    """Normalised Euclidean distance ``||s - s_hat|| / ||s||``."""
    s = np.asarray(measured, dtype=np.float64)
    s_hat = np.asarray(reconstructed, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {s_hat.shape}")
    norm = np.linalg.norm(s)
    if norm == 0:
        raise ValueError("measured signal has zero norm")
    return float(np.linalg.norm(s - s_hat) / norm)


def damage_feature(fr2: float, fr1_ref: float) -> float:
    """Relative change of a fit ratio against the baseline reference, in percent."""
    if fr2 <= 0:
        raise ValueError("fr2 must be positive")
    return abs(fr2 - fr1_ref) / fr2 * 100.0


def gaussian_quantile(p: float, mu: float = 0.0, sigma: float = 1.0) -> float:
    """Inverse normal CDF with mean ``mu`` and standard deviation ``sigma``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(mu + sigma * ndtri(p))


@dataclass(frozen=True)
class CbThreshold:
    mu: float
    sigma: float
    alpha: float
    cb: float
    degenerate: bool = False

    @classmethod
    def from_features(cls, dfs, alpha: float = DEFAULT_ALPHA) -> "CbThreshold":
        dfs = np.asarray(dfs, dtype=np.float64)
        if dfs.size < 2:
            raise ValueError("need at least two baseline damage features")
        mu = float(dfs.mean())
        sigma = float(dfs.std(ddof=1))
        degenerate = False
        floor = SIGMA_FLOOR * max(1.0, abs(mu))
        if sigma < floor:
            sigma, degenerate = floor, True
        return cls(mu, sigma, alpha, gaussian_quantile(1.0 - alpha, mu, sigma), degenerate)


@dataclass(frozen=True)
class DfRecord:
    passage_id: str
    channel_id: str
    fr2: float
    fr1_ref: float
    df: float


# ------------------------------------------------------------------ baseline


@dataclass
class BaselineConfig:
    alpha: float = DEFAULT_ALPHA
    pca_threshold: float = 0.80
    ar_order: int | str = 20
    order_grid: Sequence[int] = range(1, 151)
    bic_max_signals: int = 8
    split_fraction: float = 0.7
    seed: int = 0
    bin_width: float | None = None
    align: str = "truncate"
    target_n: int | None = None
    ar_mode: str = "frozen"  # or "refit": per-passage AR fit, same order

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if not 0 < self.pca_threshold <= 1:
            raise ValueError("pca_threshold must lie in (0, 1]")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.ar_mode not in ("frozen", "refit"):
            raise ValueError(f"unknown ar_mode {self.ar_mode!r}")
        if isinstance(self.ar_order, str) and self.ar_order != "auto":
            self.ar_order = int(self.ar_order)


@dataclass(frozen=True)
class BaselineModel:
    channel_id: str
    speed_bin: str
    n: int
    pca: PcaBasis
    ar: ArModel
    fr1_ref: float
    threshold: CbThreshold
    fit_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]
    align: str = "truncate"
    ar_mode: str = "frozen"
    bic: BicCurve | None = field(default=None, compare=False)

    def to_dict(self, full_basis: bool = False) -> dict:
        return {
            "channel_id": self.channel_id,
            "speed_bin": self.speed_bin,
            "n": self.n,
            "align": self.align,
            "ar_mode": self.ar_mode,
            "pca": self.pca.to_dict(full=full_basis),
            "ar": self.ar.to_dict(),
            "fr1_ref": self.fr1_ref,
            "threshold": asdict(self.threshold),
            "manifest": {"fit": list(self.fit_ids), "validation": list(self.validation_ids)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        return cls(
            channel_id=d["channel_id"],
            speed_bin=str(d["speed_bin"]),
            n=int(d["n"]),
            pca=PcaBasis.from_dict(d["pca"]),
            ar=ArModel.from_dict(d["ar"]),
            fr1_ref=float(d["fr1_ref"]),
            threshold=CbThreshold(**d["threshold"]),
            fit_ids=tuple(d["manifest"]["fit"]),
            validation_ids=tuple(d["manifest"]["validation"]),
            align=d.get("align", "truncate"),
            ar_mode=d.get("ar_mode", "frozen"),
        )


def _passage_fr(x: np.ndarray, model: ArModel, mode: str) -> float:
    if mode == "refit":
        fitted = fit_ar(x, model.order).model
        resid, recon = predict_residuals(x, fitted)
    else:
        resid, recon = predict_residuals(x, model)
    return fit_ratio(x[model.order :], recon)


def _split(records: Sequence[PassageRecord], fraction: float, seed: int):
    k = len(records)
    order = np.random.default_rng(seed).permutation(k)
    n_fit = min(max(int(round(fraction * k)), 2), k - 2)
    fit = sorted(order[:n_fit])
    val = sorted(order[n_fit:])
    return [records[i] for i in fit], [records[i] for i in val]


def fit_baseline(records: Sequence[PassageRecord], config: BaselineConfig | None = None) -> BaselineModel:
    """Fit PCA, AR model, reference fit ratio and confidence boundary for one channel/bin."""
    config = config or BaselineConfig()
    records = list(records)
    if len(records) < 4:
        raise ValueError(f"need at least 4 baseline passages, got {len(records)}")
    if any(r.condition != "baseline" for r in records):
        raise ValueError("fit_baseline accepts baseline passages only")

    n = config.target_n or common_length(records)
    fit_recs, val_recs = _split(records, config.split_fraction, config.seed)
    X_fit = align_to_matrix(fit_recs, n, config.align, bin_width=config.bin_width)
    X_val = align_to_matrix(val_recs, n, config.align, bin_width=config.bin_width)

    pca = fit_pca(X_fit, config.pca_threshold)
    R_fit = remove_components(X_fit, pca).data
    R_val = remove_components(X_val, pca).data

    curve = None
    order = config.ar_order
    if order == "auto":
        stride = max(1, len(R_fit) // config.bic_max_signals)
        curve = select_order(R_fit[::stride][: config.bic_max_signals], config.order_grid)
        order = curve.optimum
    ar = fit_ar(R_fit, int(order), channel_id=X_fit.channel_id).model
    if ar.rank_deficient:
        logger.warning("%s/%s: rank-deficient AR regression", X_fit.channel_id, X_fit.speed_bin)

    fr1 = float(np.mean([_passage_fr(x, ar, config.ar_mode) for x in R_fit]))
    dfs = [damage_feature(_passage_fr(x, ar, config.ar_mode), fr1) for x in R_val]
    threshold = CbThreshold.from_features(dfs, config.alpha)
    if threshold.degenerate:
        logger.warning("%s/%s: validation damage features have zero spread",
                       X_fit.channel_id, X_fit.speed_bin)
    return BaselineModel(
        channel_id=X_fit.channel_id,
        speed_bin=X_fit.speed_bin,
        n=n,
        pca=pca,
        ar=ar,
        fr1_ref=fr1,
        threshold=threshold,
        fit_ids=X_fit.passage_ids,
        validation_ids=X_val.passage_ids,
        align=config.align,
        ar_mode=config.ar_mode,
        bic=curve,
    )


def group_records(
    records: Iterable[PassageRecord], bin_width: float | None = None
) -> dict[tuple[str, str], list[PassageRecord]]:
    groups: dict[tuple[str, str], list[PassageRecord]] = defaultdict(list)
    for r in records:
        groups[(r.channel_id, speed_bin(r.speed, bin_width))].append(r)
    return dict(sorted(groups.items()))


def fit_baselines(
    records: Iterable[PassageRecord], config: BaselineConfig | None = None
) -> dict[tuple[str, str], BaselineModel]:
    """One model per (channel, speed bin); speeds are never pooled."""
    config = config or BaselineConfig()
    groups = group_records((r for r in records if r.condition == "baseline"), config.bin_width)
    return {key: fit_baseline(recs, config) for key, recs in groups.items()}


# ------------------------------------------------------------------ scoring


@dataclass(frozen=True)
class PassageScore:
    passage_id: str
    channel_id: str
    speed_bin: str
    condition: str
    damage: DamageSpec | None
    fr2: float
    df: float
    cb: float
    outlier: bool


def _aligned(rec: PassageRecord, model: BaselineModel) -> np.ndarray:
    """Post-trigger window of ``model.n`` samples.

    A damaged passage peaks higher, so its trigger can fire a few samples
    later than any baseline trigger did. When the record is too short after
    the trigger, the window start is moved back so it still fits.
    """
    if model.align == "linear_resample":
        return align_to_matrix([rec], model.n, "linear_resample").data[0]
    if rec.n < model.n:
        raise ValueError(
            f"passage {rec.passage_id} has {rec.n} samples, model needs {model.n}"
        )
    start = min(trigger_index(rec.samples), rec.n - model.n)
    return rec.samples[start : start + model.n]


def score(
    records: Sequence[PassageRecord],
    model: BaselineModel,
    *,
    bin_width: float | None = None,
    allow_speed_mismatch: bool = False,
) -> list[PassageScore]:
    """Score test passages of one channel against its frozen baseline."""
    out = []
    thr = model.threshold.cb
    for rec in records:
        if rec.channel_id != model.channel_id:
            raise ValueError(f"passage {rec.passage_id} is channel {rec.channel_id}, "
                             f"model is {model.channel_id}")
        b = speed_bin(rec.speed, bin_width)
        if b != model.speed_bin and not allow_speed_mismatch:
            raise SpeedBinMismatch(
                f"passage {rec.passage_id} at speed bin {b} km/h cannot be scored against the "
                f"{model.speed_bin} km/h baseline: damage features are speed dependent, "
                f"fit one baseline per speed bin"
            )
        x = remove_components(_aligned(rec, model), model.pca)
        fr2 = _passage_fr(x, model.ar, model.ar_mode)
        df = damage_feature(fr2, model.fr1_ref)
        out.append(PassageScore(rec.passage_id, rec.channel_id, b, rec.condition,
                                rec.damage_spec, fr2, df, thr, df >= thr))
    return out


# ------------------------------------------------------------------ report


@dataclass
class DamageReport:
    scores: list[PassageScore]
    channels: dict[str, ChannelMeta] = field(default_factory=dict)

    @property
    def false_positive_rate(self) -> float | None:
        flags = [s.outlier for s in self.scores if s.condition == "baseline"]
        return float(np.mean(flags)) if flags else None

    @property
    def detection_rate(self) -> float | None:
        flags = [s.outlier for s in self.scores if s.condition == "damaged"]
        return float(np.mean(flags)) if flags else None

    @property
    def any_outlier(self) -> bool:
        return any(s.outlier for s in self.scores)

    def component_verdicts(self) -> dict[tuple[str, str], dict]:
        """Per (section, component): in how many passages was it detected.

        A component counts as detected in a passage when any channel whose
        ``component_affinity`` includes it, at that section, flags an
        outlier. Passages labelled with a damage spec are only counted under
        the damaged (section, component); unlabelled and baseline passages
        are counted under every pair their channels cover. ``detected`` is
        true when at least half of the counted passages detect it.
        """
        by_passage: dict[str, list[PassageScore]] = defaultdict(list)
        for s in self.scores:
            by_passage[s.passage_id].append(s)
        counts: dict[tuple[str, str], list[int]] = defaultdict(lambda: [0, 0])
        for pid in sorted(by_passage):
            hits: dict[tuple[str, str], bool] = {}
            for s in by_passage[pid]:
                meta = self.channels.get(s.channel_id)
                if meta is None:
                    continue
                for comp in meta.component_affinity:
                    key = (meta.section, comp)
                    hits[key] = hits.get(key, False) or s.outlier
            damage = by_passage[pid][0].damage
            if damage is not None:
                key = (damage.section, damage.component)
                hits = {key: hits.get(key, False)} if key in hits else {}
            for key, hit in hits.items():
                counts[key][0] += int(hit)
                counts[key][1] += 1
        return {
            key: {"flagged": f, "passages": n, "rate": f / n, "detected": f / n >= 0.5}
            for key, (f, n) in sorted(counts.items())
        }

    def to_dict(self) -> dict:
        def row(s: PassageScore) -> dict:
            d = asdict(s)
            d["damage"] = asdict(s.damage) if s.damage else None
            return d

        verdicts = [
            {"section": sec, "component": comp, **v}
            for (sec, comp), v in self.component_verdicts().items()
        ]
        return {
            "scores": [row(s) for s in self.scores],
            "components": verdicts,
            "false_positive_rate": self.false_positive_rate,
            "detection_rate": self.detection_rate,
            "channels": {k: asdict(v) for k, v in sorted(self.channels.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DamageReport":
        scores = []
        for s in d["scores"]:
            s = dict(s)
            s["damage"] = DamageSpec(**s["damage"]) if s.get("damage") else None
            scores.append(PassageScore(**s))
        channels = {
            k: ChannelMeta(**{**v, "component_affinity": tuple(v["component_affinity"])})
            for k, v in d.get("channels", {}).items()
        }
        return cls(scores, channels)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["passage_id", "channel_id", "fr2", "df", "cb", "outlier"])
        for s in self.scores:
            w.writerow([s.passage_id, s.channel_id, repr(s.fr2), repr(s.df), repr(s.cb),
                        int(s.outlier)])
        return buf.getvalue()

"""Damage detection for girder bridges from train-induced strain.

Pipeline: remove baseline principal components, fit an autoregressive
model, compare fit ratios against a Gaussian confidence boundary.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .ar import ArModel, BicCurve, bic, bic_curve, fit_ar, predict_residuals, select_order
from .detect import (
    BaselineConfig,
    BaselineModel,
    CbThreshold,
    DamageReport,
    PassageScore,
    SpeedBinMismatch,
    damage_feature,
    fit_baseline,
    fit_baselines,
    fit_ratio,
    gaussian_quantile,
    score,
)
from .pca import PcaBasis, fit_pca, remove_components, select_p
from .signals import (
    ChannelMeta,
    DamageSpec,
    PassageFormatError,
    PassageMatrix,
    PassageRecord,
    align_to_matrix,
    load_passages,
    speed_bin,
)
from .simulate import (
    ExperimentPlan,
    SurrogateParams,
    add_noise,
    crh380_train,
    default_girder,
    generate_experiment,
    influence_strain,
    synthesize_passage,
)

__all__ = [name for name in dir() if not name.startswith("_")]

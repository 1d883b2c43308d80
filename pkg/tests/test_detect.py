from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_record
from girdershm.detect import (
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
from girdershm.signals import DamageSpec, PassageRecord
from girdershm.simulate import ExperimentPlan, default_girder, iter_experiment

SMALL = ExperimentPlan(
    speeds=(360.0,), weight_classes=("W100", "W105"),
    irregularities=("uic_good", "irr_3", "irr_5", "uic_bad"), baseline_passages=4,
    damage_passages=4, sections=("L/4",), components=("bottom_plate",), deltas=(0.2,),
)


@pytest.fixture(scope="module")
def small():
    recs = [r for _, rs in iter_experiment(SMALL, channels=["L4-P3b"]) for r in rs]
    base = [r for r in recs if r.condition == "baseline"]
    dmg = [r for r in recs if r.condition == "damaged"]
    return base, dmg, fit_baseline(base, BaselineConfig(ar_order=8))


def test_fit_ratio_examples():
    s = np.array([3.0, 4.0])
    assert fit_ratio(s, s) == 0.0
    assert fit_ratio(s, np.zeros(2)) == 1.0
    assert fit_ratio(s, np.array([3.0, 0.0])) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        fit_ratio(np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        fit_ratio(s, np.zeros(3))


def test_damage_feature_examples():
    assert damage_feature(0.1, 0.1) == 0.0
    assert damage_feature(0.10, 0.05) == pytest.approx(50.0)
    assert damage_feature(0.05, 0.10) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        damage_feature(0.0, 0.1)


def test_quantile_examples():
    assert gaussian_quantile(0.5, 3, 2) == 3
    assert gaussian_quantile(0.99) == pytest.approx(2.3263478740, abs=1e-10)
    for bad in ((0.0, 0, 1), (1.0, 0, 1), (0.5, 0, 0), (0.5, 0, -1)):
        with pytest.raises(ValueError):
            gaussian_quantile(*bad)


def test_threshold_from_features():
    t = CbThreshold.from_features([1, 2, 3, 4], 0.01)
    assert t.mu == 2.5
    assert t.sigma == pytest.approx(1.2909944, rel=1e-6)
    assert t.cb == pytest.approx(5.503, abs=1e-3)
    assert not t.degenerate


def test_threshold_degenerate():
    t = CbThreshold.from_features([0.0, 0.0, 0.0])
    assert t.degenerate and t.mu == 0 and t.cb == pytest.approx(0, abs=1e-8)


@given(st.lists(st.floats(0, 100), min_size=3, max_size=20), st.floats(0.001, 0.4),
       st.floats(0.001, 0.4))
def test_threshold_monotone_in_alpha(dfs, a1, a2):
    lo, hi = sorted((a1, a2))
    assert CbThreshold.from_features(dfs, lo).cb >= CbThreshold.from_features(dfs, hi).cb


def test_too_few_passages():
    recs = [make_record(np.sin(np.arange(100) + i), f"p{i}") for i in range(3)]
    with pytest.raises(ValueError, match="at least 4"):
        fit_baseline(recs)


def test_config_validation():
    for kw in ({"alpha": 0.6}, {"pca_threshold": 0}, {"split_fraction": 1.0},
               {"ar_mode": "x"}):
        with pytest.raises(ValueError):
            BaselineConfig(**kw)


def test_split_disjoint(small):
    base, _, model = small
    assert not set(model.fit_ids) & set(model.validation_ids)
    assert len(model.fit_ids) + len(model.validation_ids) == len(base)


def test_fit_passages_below_cb(small):
    base, _, model = small
    fit = [r for r in base if r.passage_id in set(model.fit_ids)]
    dfs = [s.df for s in score(fit, model)]
    assert np.median(dfs) < model.threshold.cb


def test_damage_flagged(small):
    _, dmg, model = small
    assert np.mean([s.outlier for s in score(dmg, model)]) >= 0.75


def test_speed_guard(small):
    base, _, model = small
    moved = [replace(base[0], speed=330.0)]
    with pytest.raises(SpeedBinMismatch, match="per speed bin"):
        score(moved, model)
    assert len(score(moved, model, allow_speed_mismatch=True)) == 1


def test_channel_guard(small):
    base, _, model = small
    with pytest.raises(ValueError, match="channel"):
        score([replace(base[0], channel_id="L2-P3b")], model)


def test_outlier_rule_inclusive(small):
    base, _, model = small
    s = score(base[:1], model)[0]
    at = replace(model, threshold=replace(model.threshold, cb=s.df))
    assert score(base[:1], at)[0].outlier


def test_scale_invariance(small):
    base, dmg, model = small

    def scaled(recs, c):
        return [replace(r, samples=r.samples * c) for r in recs]

    c = 37.5
    m2 = fit_baseline(scaled(base, c), BaselineConfig(ar_order=8))
    a = score(dmg + base, model)
    b = score(scaled(dmg + base, c), m2)
    np.testing.assert_allclose([x.df for x in a], [x.df for x in b], rtol=1e-7)
    assert [x.outlier for x in a] == [x.outlier for x in b]


def test_model_json_round_trip(small):
    base, dmg, model = small
    back = BaselineModel.from_dict(json.loads(json.dumps(model.to_dict(full_basis=True))))
    assert [s.df for s in score(dmg, back)] == [s.df for s in score(dmg, model)]


def test_refit_mode(small):
    base, dmg, _ = small
    model = fit_baseline(base, BaselineConfig(ar_order=8, ar_mode="refit"))
    assert len(score(dmg, model)) == len(dmg)


def test_auto_order(small):
    base, _, _ = small
    model = fit_baseline(base, BaselineConfig(ar_order="auto", order_grid=range(1, 16),
                                              bic_max_signals=3))
    assert model.bic is not None and model.ar.order == model.bic.optimum


def test_determinism(small):
    base, dmg, _ = small
    a = fit_baseline(base, BaselineConfig(ar_order=8, seed=3))
    b = fit_baseline(base, BaselineConfig(ar_order=8, seed=3))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    ra = DamageReport(score(dmg, a)).to_csv()
    assert ra == DamageReport(score(dmg, b)).to_csv()


def test_fit_baselines_per_speed():
    plan = replace(SMALL, speeds=(330.0, 360.0), include_damage=False, baseline_passages=2)
    recs = [r for _, rs in iter_experiment(plan, channels=["L4-P3b"]) for r in rs]
    models = fit_baselines(recs, BaselineConfig(ar_order=4))
    assert sorted(models) == [("L4-P3b", "330"), ("L4-P3b", "360")]
    for (_, b), m in models.items():
        ids = set(m.fit_ids) | set(m.validation_ids)
        assert all(f"_{b}_" in pid for pid in ids)


def _score(pid, cid, outlier, damage=None):
    return PassageScore(pid, cid, "360", "damaged" if damage else "baseline", damage,
                        0.5, 10.0 if outlier else 1.0, 5.0, outlier)


def test_component_verdict_any_channel():
    chans = {c.channel_id: c for c in default_girder().channels}
    dmg = DamageSpec("L/4", "bottom_plate", 0.1)
    rep = DamageReport(
        [_score("a", "L4-P3b", False, dmg), _score("a", "L4-P12b", True, dmg),
         _score("b", "L4-P3b", True, dmg), _score("b", "L4-P12b", False, dmg)],
        {k: chans[k] for k in ("L4-P3b", "L4-P12b")},
    )
    v = rep.component_verdicts()
    assert list(v) == [("L/4", "bottom_plate")]
    assert v["L/4", "bottom_plate"]["flagged"] == 2 and v["L/4", "bottom_plate"]["detected"]
    assert rep.detection_rate == 0.5 and rep.false_positive_rate is None


def test_report_round_trip_and_csv():
    chans = {c.channel_id: c for c in default_girder().channels}
    rep = DamageReport([_score("a", "L4-P3b", True), _score("b", "L4-P3b", False)],
                       {"L4-P3b": chans["L4-P3b"]})
    back = DamageReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back.scores == rep.scores and back.channels == rep.channels
    lines = rep.to_csv().splitlines()
    assert lines[0] == "passage_id,channel_id,fr2,df,cb,outlier"
    assert lines[1].endswith(",1") and lines[2].endswith(",0")
    assert rep.false_positive_rate == 0.5
    verdicts = rep.component_verdicts()
    assert set(verdicts) == {("L/4", "bottom_plate"), ("L/4", "left_web")}

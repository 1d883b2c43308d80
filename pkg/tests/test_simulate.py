from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from girdershm.signals import ChannelMeta, DamageSpec, trigger_index
from girdershm.simulate import (
    CARRIAGES,
    Carriage,
    ExperimentPlan,
    GirderSpec,
    Irregularity,
    SurrogateParams,
    TrainSpec,
    add_noise,
    crh380_train,
    default_girder,
    generate_experiment,
    influence_strain,
    iter_experiment,
    load_plan,
    single_axle_train,
    synthesize_passage,
)


def midspan_girder():
    ch = ChannelMeta("mid", "L/2", "P3b", 16.0, ("bottom_plate",))
    return GirderSpec(32.0, (ch,), {"mid": {"bottom_plate": 1.0}}, {"mid": "up"})


def test_influence_examples():
    assert influence_strain(16, 16, 32) == 8.0
    assert influence_strain(10, 0, 32) == 0.0 and influence_strain(10, 32, 32) == 0.0
    assert influence_strain(10, -3, 32) == 0.0 and influence_strain(10, 40, 32) == 0.0
    with pytest.raises(ValueError):
        influence_strain(33, 5, 32)


@given(st.floats(0, 32), st.floats(-5, 37))
def test_influence_symmetry(xs, xl):
    assert influence_strain(xs, xl, 32) == pytest.approx(
        influence_strain(32 - xs, 32 - xl, 32), abs=1e-12)


def test_table1_axle_weights():
    for _, _, _, total, axle in CARRIAGES:
        assert axle == pytest.approx(total / 4, abs=0.06)
    train = crh380_train()
    assert train.carriages[0].axle_weights[0] == 143.6
    with pytest.raises(ValueError):
        Carriage("x", 1, (1, 1, 1, 1), (0, 2, 1, 3))
    with pytest.raises(ValueError):
        TrainSpec(train.carriages, 25, -1)


def test_unit_axle_peak():
    g = midspan_girder()
    rec = synthesize_passage(single_axle_train(36.0), g, excitation=False)[0]
    scale = g.strain_per_moment
    assert rec.samples.max() == pytest.approx(8.0 * scale, rel=1e-12)
    assert int(np.argmax(rec.samples)) == 1600  # axle at 16 m, 10 m/s, 1 kHz


def test_duration_at_360():
    rec = synthesize_passage(crh380_train(360), default_girder(), channels=["L2-P3b"])[0]
    assert rec.n == 2321
    assert rec.n / 1000 == pytest.approx((8 * 25 + 32) / 100, abs=2e-3)


def test_zero_delta_identity():
    g, t, irr = default_girder(), crh380_train(), Irregularity("irr_3", 0.01, 13)
    a = synthesize_passage(t, g, None, irr, noise_level=0.05, seed=4)
    b = synthesize_passage(t, g, DamageSpec("L/4", "bottom_plate", 0.0), irr,
                           noise_level=0.05, seed=4)
    for x, y in zip(a, b):
        assert x.samples.tobytes() == y.samples.tobytes()


def test_superposition():
    g = midspan_girder()
    offs = (0.0, 2.5, 5.0, 7.5)

    def run(w):
        t = TrainSpec((Carriage("c", sum(w), w, offs),), 10.0, 200.0)
        return synthesize_passage(t, g, excitation=False)[0].samples

    both = run((1.0, 0.7, 0.0, 0.0))
    np.testing.assert_allclose(both, run((1.0, 0, 0, 0)) + run((0, 0.7, 0, 0)), atol=1e-12)


def test_static_limit():
    g = default_girder()
    train = crh380_train(1.0)
    rec = synthesize_passage(train, g, channels=["L2-P3b"], excitation=False)[0]
    offs, w = train.axles()
    xs = 16.0
    oracle = max(
        sum(wi * influence_strain(xs, xs + o - oi, 32) for oi, wi in zip(offs, w))
        for o in offs
    )
    scale = g.strain_per_moment * g.tau("up", "L2-P3b") * 1.8
    assert rec.samples.max() == pytest.approx(scale * oracle, rel=1e-3)


def test_eccentricity_and_section_ordering():
    recs = {r.channel_id: r for r in synthesize_passage(crh380_train(), default_girder(),
                                                        excitation=False)}
    assert recs["L4-P3b"].samples.max() > recs["L4-P12b"].samples.max()
    assert recs["L2-P3b"].samples.max() > recs["L4-P3b"].samples.max()


def test_damage_is_local():
    g, t = default_girder(), crh380_train()
    base = {r.channel_id: r for r in synthesize_passage(t, g, excitation=False)}
    dmg = {r.channel_id: r for r in synthesize_passage(
        t, g, DamageSpec("L/4", "bottom_plate", 0.1), excitation=False)}
    assert dmg["L4-P3b"].samples.max() > base["L4-P3b"].samples.max()
    for cid in ("L2-P3b", "3L4-P3b", "L4-P3t"):
        np.testing.assert_array_equal(dmg[cid].samples, base[cid].samples)


def test_synthesis_errors():
    g = default_girder()
    with pytest.raises(ValueError, match="kappa"):
        synthesize_passage(crh380_train(), g, DamageSpec("L/4", "left_web", 0.5))
    with pytest.raises(ValueError):
        synthesize_passage(crh380_train(), g, sample_rate=0)
    with pytest.raises(KeyError):
        synthesize_passage(crh380_train(), g, channels=["nope"])


def test_seeded_determinism():
    args = (crh380_train(), default_girder(), None, Irregularity("uic_bad", 0.025, 18))
    a = synthesize_passage(*args, noise_level=0.05, seed=[1, 2])
    b = synthesize_passage(*args, noise_level=0.05, seed=[1, 2])
    c = synthesize_passage(*args, noise_level=0.05, seed=[1, 3])
    assert all(x.samples.tobytes() == y.samples.tobytes() for x, y in zip(a, b))
    assert a[0].samples.tobytes() != c[0].samples.tobytes()


def test_add_noise():
    b = np.linspace(-3, 5, 50)
    np.testing.assert_array_equal(add_noise(b, 0.0, seed=1), b)
    out = add_noise(np.full(100_000, 4.0), 0.05, seed=2) - 4.0
    assert np.std(out) == pytest.approx(0.2, rel=0.05)
    np.testing.assert_array_equal(add_noise(b, 0.05, seed=9), add_noise(b, 0.05, seed=9))
    with pytest.raises(ValueError):
        add_noise(b, -0.1)


def test_trigger_stable_under_weight():
    g = default_girder()
    light = synthesize_passage(crh380_train(weight_scale=0.95), g, excitation=False)[0]
    heavy = synthesize_passage(crh380_train(weight_scale=1.10), g, excitation=False)[0]
    assert trigger_index(light.samples) == trigger_index(heavy.samples)


# ------------------------------------------------------------------ experiments


def test_default_condition_counts():
    m = ExperimentPlan().manifest()
    assert m["counts"]["baseline_conditions"] == 96
    assert m["counts"]["damage_conditions"] == 216
    assert len({c["id"] for c in m["conditions"]}) == 312


def test_minimal_plan(tmp_path):
    plan = ExperimentPlan(speeds=(360.0,), weight_classes=("W100",),
                          irregularities=("uic_good",), baseline_passages=1,
                          include_damage=False, channels=("L4-P3b",))
    m = generate_experiment(plan, tmp_path)
    assert m["counts"]["baseline_conditions"] == 1 and m["counts"]["damage_conditions"] == 0
    assert (tmp_path / m["conditions"][0]["file"]).exists()
    assert json.loads((tmp_path / "manifest.json").read_text()) == m


def test_byte_identical(tmp_path):
    plan = ExperimentPlan(speeds=(330.0,), weight_classes=("W095",),
                          irregularities=("irr_2", "uic_bad"), baseline_passages=2,
                          damage_passages=1, sections=("L/2",), components=("left_web",),
                          deltas=(0.1,), channels=("L2-P3b", "L2-P12b"), seed=11)
    generate_experiment(plan, tmp_path / "a")
    generate_experiment(plan, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.*"))
    assert len(files) == 4
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_dry_run_writes_nothing(tmp_path):
    generate_experiment(ExperimentPlan(), tmp_path / "x", dry_run=True)
    assert not (tmp_path / "x").exists()


def test_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        generate_experiment(ExperimentPlan(baseline_passages=1), blocker / "sub")


def test_damage_passages_cycle_operational_conditions():
    plan = ExperimentPlan(speeds=(360.0,), sections=("L/4",), components=("top_plate",),
                          deltas=(0.05,), damage_passages=5, channels=("L4-P3t",))
    (_, recs), = list(iter_experiment(plan, ("damaged",)))
    combos = {(r.train_weight_class, r.irregularity_label) for r in recs}
    assert len(combos) == 5


@pytest.mark.parametrize("suffix", [".toml", ".json"])
def test_load_plan(tmp_path, suffix):
    p = tmp_path / f"plan{suffix}"
    if suffix == ".toml":
        p.write_text('[experiment]\nspeeds = [360]\nseed = 5\n\n[experiment.params]\nkappa = 2.0\n')
    else:
        p.write_text(json.dumps({"speeds": [360], "seed": 5, "params": {"kappa": 2.0}}))
    plan = load_plan(p)
    assert plan.speeds == (360.0,) and plan.seed == 5 and plan.params.kappa == 2.0


def test_plan_validation_messages():
    with pytest.raises(ValueError, match="weight_classes"):
        ExperimentPlan(weight_classes=("W200",))
    with pytest.raises(ValueError, match="deltas"):
        ExperimentPlan(deltas=(0.5,))
    with pytest.raises(ValueError, match="unknown fields"):
        ExperimentPlan.from_dict({"sped": [1]})


def test_plan_dict_round_trip():
    plan = replace(ExperimentPlan(), params=SurrogateParams(kappa=2.5), channels=("L4-P3b",))
    assert ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan

"""Surrogate train-passage strain simulator for a simply supported box girder.

This replaces a solid-element bridge model and a train-track-bridge
multibody model with influence-line superposition. Damage is represented
as a local amplification of the damaged component's share of the strain
while axles are near the damaged section, plus a small band-limited local
fluctuation. Every constant that is a modelling choice rather than a
measured value lives in :class:`SurrogateParams` and is written to the
dataset manifest.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .kernels import influence_ordinate, moving_load_strain
from .signals import (
    COMPONENTS,
    DEFAULT_SAMPLE_RATE,
    SECTIONS,
    ChannelMeta,
    DamageSpec,
    PassageRecord,
    write_passages_csv,
)

logger = logging.getLogger(__name__)

# (label, train mass kN, passengers, total weight kN, average axle weight kN)
CARRIAGES = (
    ("M1", 548.8, 33, 574.3, 143.6),
    ("T2", 599.8, 85, 666.4, 166.6),
    ("M3", 585.1, 85, 651.7, 162.9),
    ("T4", 541.0, 75, 599.8, 149.9),
    ("T5", 563.5, 63, 612.5, 153.1),
    ("M6", 599.8, 85, 666.4, 166.6),
    ("T7", 588.0, 85, 654.6, 163.7),
    ("M8", 536.1, 45, 571.3, 142.8),
)

WEIGHT_CLASSES = {"W095": 0.95, "W100": 1.00, "W105": 1.05, "W110": 1.10}

# (label, relative dynamic-load RMS, profile seed); the two ends stand in for
# low- and high-interference track spectra
IRREGULARITY_PRESETS = (
    ("uic_good", 0.005, 11),
    ("irr_2", 0.0075, 12),
    ("irr_3", 0.010, 13),
    ("irr_4", 0.0125, 14),
    ("irr_5", 0.015, 15),
    ("irr_6", 0.0175, 16),
    ("irr_7", 0.020, 17),
    ("uic_bad", 0.025, 18),
)

SECTION_FRACTION = {"L/4": 0.25, "L/2": 0.5, "3L/4": 0.75}
_SECTION_TAG = {"L/4": "L4", "L/2": "L2", "3L/4": "3L4"}


def influence_strain(x_sensor: float, x_load: float, span: float) -> float:
    """Unit-load bending-moment influence ordinate; zero for loads off the span."""
    if not 0.0 <= x_sensor <= span:
        raise ValueError(f"sensor at {x_sensor} m is off a {span} m span")
    return influence_ordinate(x_sensor, x_load, span)


# ------------------------------------------------------------------ specs


@dataclass(frozen=True)
class Carriage:
    label: str
    total_weight: float
    axle_weights: tuple[float, float, float, float]
    axle_offsets: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.axle_weights) != 4 or len(self.axle_offsets) != 4:
            raise ValueError("a carriage has exactly four axles")
        if any(b <= a for a, b in zip(self.axle_offsets, self.axle_offsets[1:])):
            raise ValueError("axle offsets must be strictly increasing")


@dataclass(frozen=True)
class TrainSpec:
    carriages: tuple[Carriage, ...]
    carriage_length: float
    speed: float
    lane: str = "up"

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.lane not in ("up", "down"):
            raise ValueError(f"lane must be 'up' or 'down', got {self.lane!r}")
        if not self.carriages:
            raise ValueError("train has no carriages")

    @property
    def length(self) -> float:
        return self.carriage_length * len(self.carriages)

    @property
    def speed_ms(self) -> float:
        return self.speed / 3.6

    def axles(self) -> tuple[np.ndarray, np.ndarray]:
        """Axle offsets behind the train front (m) and axle weights (kN)."""
        offs, wts = [], []
        for i, car in enumerate(self.carriages):
            offs.extend(i * self.carriage_length + o for o in car.axle_offsets)
            wts.extend(car.axle_weights)
        return np.asarray(offs), np.asarray(wts)

    def with_speed(self, speed: float) -> "TrainSpec":
        return replace(self, speed=speed)


def crh380_train(
    speed: float = 360.0,
    lane: str = "up",
    weight_scale: float = 1.0,
    carriage_length: float = 25.0,
    bogie_spacing: float = 17.375,
    axle_spacing: float = 2.5,
) -> TrainSpec:
    """Eight-carriage train with CRH380-class axle weights and geometry."""
    first = (carriage_length - bogie_spacing) / 2
    half = axle_spacing / 2
    offsets = (
        first - half,
        first + half,
        first + bogie_spacing - half,
        first + bogie_spacing + half,
    )
    cars = tuple(
        Carriage(label, total * weight_scale, (axle * weight_scale,) * 4, offsets)
        for label, _, _, total, axle in CARRIAGES
    )
    return TrainSpec(cars, carriage_length, speed, lane)


def single_axle_train(speed: float, weight: float = 1.0, lane: str = "up") -> TrainSpec:
    """A massless 'carriage' carrying one load; used for checks and tests."""
    tiny = 1e-6
    car = Carriage("unit", weight, (weight, 0.0, 0.0, 0.0), (0.0, tiny, 2 * tiny, 3 * tiny))
    return TrainSpec((car,), 0.0, speed, lane)


@dataclass(frozen=True)
class GirderSpec:
    span: float
    channels: tuple[ChannelMeta, ...]
    gains: dict = field(hash=False)  # channel_id -> {component: gain}
    sides: dict = field(hash=False)  # channel_id -> "up" | "down"
    tau_near: float = 1.0
    tau_far: float = 0.75
    strain_per_moment: float = 0.02  # microstrain per kN*m of bending moment

    def __post_init__(self):
        ids = [c.channel_id for c in self.channels]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate channel ids")
        for c in self.channels:
            if not 0 <= c.longitudinal_coord <= self.span:
                raise ValueError(f"channel {c.channel_id} lies off the span")
            g = self.gains.get(c.channel_id, {})
            if g and abs(max(g.values()) - 1.0) > 1e-12:
                raise ValueError(f"gains of {c.channel_id} must peak at 1")
        if not self.tau_near > self.tau_far > 0:
            raise ValueError("need tau_near > tau_far > 0")

    def channel(self, channel_id: str) -> ChannelMeta:
        for c in self.channels:
            if c.channel_id == channel_id:
                return c
        raise KeyError(channel_id)

    def tau(self, lane: str, channel_id: str) -> float:
        return self.tau_near if self.sides[channel_id] == lane else self.tau_far


# gains of the four sensors of one section: two under the bottom plate next to
# each web, two on the top plate next to each track plate
_LAYOUT = (
    ("P3b", "up", {"bottom_plate": 1.0, "left_web": 0.8}),
    ("P12b", "down", {"bottom_plate": 1.0, "right_web": 0.8}),
    ("P3t", "up", {"top_plate": 1.0, "left_track_plate": 0.6}),
    ("P12t", "down", {"top_plate": 1.0, "right_track_plate": 0.6}),
)


def channel_id_for(section: str, label: str) -> str:
    return f"{_SECTION_TAG[section]}-{label}"


def default_girder(span: float = 32.0, sections: Sequence[str] = SECTIONS) -> GirderSpec:
    channels, gains, sides = [], {}, {}
    for sec in sections:
        for label, side, g in _LAYOUT:
            cid = channel_id_for(sec, label)
            channels.append(
                ChannelMeta(cid, sec, label, SECTION_FRACTION[sec] * span, tuple(g))
            )
            gains[cid] = dict(g)
            sides[cid] = side
    return GirderSpec(span, tuple(channels), gains, sides)


@dataclass(frozen=True)
class SurrogateParams:
    """Modelling constants of the surrogate; none of these are measured values."""

    kappa: float = 3.75  # local strain amplification is 1 / (1 - kappa * delta)
    window_fraction: float = 1 / 8  # half-width of the damage window, fraction of span
    fluct_band: tuple[float, float] = (20.0, 80.0)
    fluct_rms: float = 0.02  # times delta times the channel's peak strain
    rough_band: tuple[float, float] = (1.0, 50.0)
    rough_exponent: float = 2.0  # spatial track profile, fixed per irregularity label
    rough_reference_speed: float = 360.0
    excitation_rms: float = 0.04  # per-passage vehicle excitation, relative to static strain
    excitation_exponent: float = 0.0  # flat spectrum inside rough_band


@dataclass(frozen=True)
class Irregularity:
    label: str = "none"
    level: float = 0.0
    seed: int = 0


# ------------------------------------------------------------------ synthesis


@lru_cache(maxsize=256)
def _track_profile(n: int, fs: float, speed_ms: float, seed: int, exponent: float,
                   band: tuple[float, float]) -> np.ndarray:
    """Unit-RMS modulation from a fixed spatial roughness profile seen at ``speed_ms``."""
    rng = np.random.default_rng([seed, 0x1226])
    wavenumber = np.linspace(0.002, 1.0, 1000)  # cycles per metre
    phase = rng.uniform(0, 2 * np.pi, wavenumber.size)
    amp = wavenumber ** (-exponent / 2)
    freq = wavenumber * speed_ms
    keep = (freq >= band[0]) & (freq <= band[1])
    amp, wavenumber, phase = amp[keep], wavenumber[keep], phase[keep]
    amp = amp / np.sqrt(0.5 * np.sum(amp**2))
    x = speed_ms * np.arange(n) / fs
    out = np.cos(2 * np.pi * np.outer(x, wavenumber) + phase) @ amp
    out.setflags(write=False)
    return out


def _power_law_noise(n: int, fs: float, exponent: float, band: tuple[float, float],
                     rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freq = np.fft.rfftfreq(n, 1 / fs)
    keep = (freq >= band[0]) & (freq <= band[1])
    shape = np.zeros_like(freq)
    shape[keep] = freq[keep] ** (-exponent / 2)
    out = np.fft.irfft(spec * shape, n)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def add_noise(b, nlev: float, seed=None) -> np.ndarray:
    """Contaminate ``b`` with white noise scaled by ``nlev`` times its mean magnitude."""
    if nlev < 0:
        raise ValueError("noise level must be >= 0")
    b = np.asarray(b, dtype=np.float64)
    if nlev == 0:
        return b.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return b + nlev * np.mean(np.abs(b)) * rng.standard_normal(b.shape)


def synthesize_passage(
    train: TrainSpec,
    girder: GirderSpec,
    damage: DamageSpec | None = None,
    irregularity: Irregularity = Irregularity(),
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    *,
    params: SurrogateParams = SurrogateParams(),
    noise_level: float = 0.0,
    seed: int | Sequence[int] = 0,
    passage_id: str = "p0",
    weight_class: str = "",
    channels: Sequence[str] | None = None,
    excitation: bool = True,
) -> list[PassageRecord]:
    """Strain records of one train crossing, one per channel.

    The record starts when the train front reaches the first support and
    ends when the last axle leaves the span. ``seed`` drives every
    per-passage random term (vehicle excitation, damage fluctuation,
    measurement noise); the track profile depends only on the
    irregularity preset.
    """
    if sample_rate <= 0:
        raise ValueError("sample rate must be positive")
    if damage is not None and params.kappa * damage.delta >= 1:
        raise ValueError(f"kappa * delta must stay below 1, got {params.kappa * damage.delta}")
    v = train.speed_ms
    offsets, weights = train.axles()
    duration = (max(train.length, offsets.max()) + girder.span) / v
    n = int(round(duration * sample_rate)) + 1
    t = np.arange(n) / sample_rate
    positions = v * t[:, None] - offsets[None, :]
    seq = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]

    # dynamic-load modulation shared by all channels of this passage
    modulation = np.zeros(n)
    if irregularity.level > 0:
        modulation += (
            irregularity.level
            * (train.speed / params.rough_reference_speed)
            * _track_profile(
                n, float(sample_rate), v, int(irregularity.seed),
                params.rough_exponent, tuple(params.rough_band),
            )
        )
    if excitation and params.excitation_rms > 0:
        rng = np.random.default_rng(seq + [0])
        modulation += params.excitation_rms * _power_law_noise(
            n, sample_rate, params.excitation_exponent, params.rough_band, rng
        )

    damaged = damage is not None and damage.delta > 0
    if damaged:
        amp = 1.0 / (1.0 - params.kappa * damage.delta)
        x_dmg = SECTION_FRACTION[damage.section] * girder.span
        half = params.window_fraction * girder.span
        win = (x_dmg - half, x_dmg + half)
    else:
        win = (np.inf, -np.inf)

    wanted = None if channels is None else set(channels)
    if wanted is not None:
        unknown = wanted - {c.channel_id for c in girder.channels}
        if unknown:
            raise KeyError(f"unknown channels {sorted(unknown)}")
    out = []
    for idx, meta in enumerate(girder.channels):
        cid = meta.channel_id
        if wanted is not None and cid not in wanted:
            continue
        moment, windowed = moving_load_strain(
            positions, weights, meta.longitudinal_coord, girder.span, win[0], win[1]
        )
        scale = girder.strain_per_moment * girder.tau(train.lane, cid)
        gains = girder.gains.get(cid, {})
        static = scale * sum(gains.values()) * moment
        signal = static.copy()
        g = gains.get(damage.component, 0.0) if damaged else 0.0
        if g > 0 and meta.section == damage.section:
            local = scale * g * windowed
            signal += (amp - 1.0) * local
            peak = np.abs(local).max()
            if peak > 0:
                rng = np.random.default_rng(seq + [idx, 2])
                fluct = _power_law_noise(n, sample_rate, 0.0, params.fluct_band, rng)
                envelope = np.abs(local) / peak
                signal += (
                    params.fluct_rms * damage.delta * np.abs(static).max() * g * envelope * fluct
                )
        signal += modulation * signal
        if noise_level > 0:
            signal = add_noise(signal, noise_level, np.random.default_rng(seq + [idx, 1]))
        out.append(
            PassageRecord(
                passage_id=passage_id,
                channel_id=cid,
                samples=signal,
                speed=train.speed,
                sample_rate=sample_rate,
                train_weight_class=weight_class,
                irregularity_label=irregularity.label,
                condition="damaged" if damage is not None else "baseline",
                damage_spec=damage,
            )
        )
    return out


# ------------------------------------------------------------------ experiments


@dataclass(frozen=True)
class Condition:
    condition_id: str
    kind: str  # "baseline" | "damaged"
    speed: float
    weight_class: str | None
    irregularity: str | None
    damage: DamageSpec | None
    seed: tuple[int, ...]
    passages: int

    @property
    def file(self) -> str:
        folder = "baseline" if self.kind == "baseline" else "damaged"
        return f"{folder}/{self.condition_id}.csv"


def _condition_tag(*parts) -> str:
    return "_".join(str(p).replace("/", "") for p in parts)


@dataclass(frozen=True)
class ExperimentPlan:
    """Condition grid of a synthetic campaign.

    Baseline conditions cover every speed x weight class x irregularity
    combination. Damage conditions cover every speed x section x component x
    delta combination; their passages cycle through the weight and
    irregularity combinations so that operational variability is present in
    the damaged data as well.
    """

    speeds: tuple[float, ...] = (300.0, 330.0, 360.0)
    weight_classes: tuple[str, ...] = tuple(WEIGHT_CLASSES)
    irregularities: tuple[str, ...] = tuple(p[0] for p in IRREGULARITY_PRESETS)
    noise_level: float = 0.05
    baseline_passages: int = 12
    damage_passages: int = 4
    deltas: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)
    sections: tuple[str, ...] = SECTIONS
    components: tuple[str, ...] = COMPONENTS
    include_damage: bool = True
    lane: str = "up"
    span: float = 32.0
    sample_rate: float = DEFAULT_SAMPLE_RATE
    channels: tuple[str, ...] | None = None
    seed: int = 0
    params: SurrogateParams = SurrogateParams()

    def __post_init__(self):
        errors = []
        if not self.speeds or any(s <= 0 for s in self.speeds):
            errors.append("speeds: need at least one positive speed")
        unknown = [w for w in self.weight_classes if w not in WEIGHT_CLASSES]
        if not self.weight_classes or unknown:
            errors.append(f"weight_classes: unknown or empty {unknown} (known {list(WEIGHT_CLASSES)})")
        known_irr = [p[0] for p in IRREGULARITY_PRESETS]
        unknown = [i for i in self.irregularities if i not in known_irr]
        if not self.irregularities or unknown:
            errors.append(f"irregularities: unknown or empty {unknown} (known {known_irr})")
        if self.noise_level < 0:
            errors.append("noise_level: must be >= 0")
        if self.baseline_passages < 1:
            errors.append("baseline_passages: must be >= 1")
        if self.damage_passages < 1:
            errors.append("damage_passages: must be >= 1")
        if any(not 0 <= d < 1 for d in self.deltas):
            errors.append("deltas: each must lie in [0, 1)")
        elif any(self.params.kappa * d >= 1 for d in self.deltas):
            errors.append(f"deltas: kappa * delta must stay below 1 (kappa={self.params.kappa})")
        bad = [s for s in self.sections if s not in SECTIONS]
        if bad:
            errors.append(f"sections: unknown {bad}")
        bad = [c for c in self.components if c not in COMPONENTS]
        if bad:
            errors.append(f"components: unknown {bad}")
        if self.lane not in ("up", "down"):
            errors.append("lane: must be 'up' or 'down'")
        if self.span <= 0:
            errors.append("span: must be positive")
        if self.sample_rate <= 0:
            errors.append("sample_rate: must be positive")
        if errors:
            raise ValueError("invalid experiment plan: " + "; ".join(errors))

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        names = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"invalid experiment plan: unknown fields {unknown}")
        kw = dict(d)
        for key in ("speeds", "deltas"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        for key in ("weight_classes", "irregularities", "sections", "components", "channels"):
            if kw.get(key) is not None:
                kw[key] = tuple(str(v) for v in kw[key])
        if "params" in kw:
            p = dict(kw["params"])
            for key in ("fluct_band", "rough_band"):
                if key in p:
                    p[key] = tuple(float(v) for v in p[key])
            kw["params"] = SurrogateParams(**p)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ValueError(f"invalid experiment plan: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        d["params"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["params"].items()}
        return d

    def girder(self) -> GirderSpec:
        return default_girder(self.span)

    # -- enumeration -------------------------------------------------------

    def baseline_conditions(self) -> list[Condition]:
        out = []
        for speed in self.speeds:
            for wc in self.weight_classes:
                for irr in self.irregularities:
                    idx = len(out)
                    out.append(Condition(
                        _condition_tag("b", f"{speed:g}", wc, irr), "baseline", speed, wc, irr,
                        None, (self.seed, 0, idx), self.baseline_passages,
                    ))
        return out

    def damage_conditions(self) -> list[Condition]:
        if not self.include_damage:
            return []
        out = []
        for speed in self.speeds:
            for sec in self.sections:
                for comp in self.components:
                    for delta in self.deltas:
                        idx = len(out)
                        out.append(Condition(
                            _condition_tag("d", f"{speed:g}", sec, comp, f"{delta:.2f}"),
                            "damaged", speed, None, None, DamageSpec(sec, comp, delta),
                            (self.seed, 1, idx), self.damage_passages,
                        ))
        return out

    def conditions(self) -> list[Condition]:
        return self.baseline_conditions() + self.damage_conditions()

    def manifest(self) -> dict:
        base, dmg = self.baseline_conditions(), self.damage_conditions()
        girder = self.girder()

        def entry(c: Condition) -> dict:
            return {
                "id": c.condition_id,
                "kind": c.kind,
                "speed_kmh": c.speed,
                "weight_class": c.weight_class,
                "irregularity": c.irregularity,
                "damage": asdict(c.damage) if c.damage else None,
                "seed": list(c.seed),
                "passages": c.passages,
                "file": c.file,
            }

        manifest = {
            "format": "girdershm-experiment/1",
            "plan": self.to_dict(),
            "counts": {
                "baseline_conditions": len(base),
                "damage_conditions": len(dmg),
                "baseline_passages": sum(c.passages for c in base),
                "damaged_passages": sum(c.passages for c in dmg),
                "channels": len(self.channel_ids(girder)),
            },
            "assumptions": {
                "weight_classes": {w: WEIGHT_CLASSES[w] for w in self.weight_classes},
                "irregularity_presets": {
                    p[0]: {"level": p[1], "seed": p[2]}
                    for p in IRREGULARITY_PRESETS if p[0] in self.irregularities
                },
                "train": "eight carriages, 25 m long, bogie spacing 17.375 m, axle spacing 2.5 m",
                "damage_window": f"+/- {self.params.window_fraction:g} span around the damaged section",
                "adjacent_sections": "damage changes strain only inside the damage window",
            },
            "channels": [asdict(c) for c in girder.channels
                         if c.channel_id in self.channel_ids(girder)],
            "conditions": [entry(c) for c in base + dmg],
        }
        # the JSON-normalised form, identical to what is written to disk
        return json.loads(json.dumps(manifest))

    def channel_ids(self, girder: GirderSpec | None = None) -> tuple[str, ...]:
        girder = girder or self.girder()
        if self.channels is None:
            return tuple(c.channel_id for c in girder.channels)
        return tuple(self.channels)


def load_plan(path: str | Path) -> ExperimentPlan:
    """Read an experiment plan from a TOML or JSON file."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        with open(path) as fh:
            data = json.load(fh)
    data = data.get("experiment", data)
    return ExperimentPlan.from_dict(data)


_PRESET = {p[0]: p for p in IRREGULARITY_PRESETS}


def condition_passages(plan: ExperimentPlan, cond: Condition,
                       channels: Sequence[str] | None = None) -> list[PassageRecord]:
    """Synthesize every passage of one condition."""
    girder = plan.girder()
    channels = list(channels) if channels is not None else list(plan.channel_ids(girder))
    combos = [(w, i) for w in plan.weight_classes for i in plan.irregularities]
    start = int(cond.seed[-1]) % len(combos)
    out: list[PassageRecord] = []
    for rep in range(cond.passages):
        if cond.kind == "baseline":
            wc, irr = cond.weight_class, cond.irregularity
        else:
            wc, irr = combos[(start + rep) % len(combos)]
        label, level, irr_seed = _PRESET[irr]
        train = crh380_train(cond.speed, plan.lane, WEIGHT_CLASSES[wc])
        out += synthesize_passage(
            train, girder, cond.damage, Irregularity(label, level, irr_seed), plan.sample_rate,
            params=plan.params, noise_level=plan.noise_level, seed=list(cond.seed) + [rep],
            passage_id=f"{cond.condition_id}_r{rep:02d}", weight_class=wc, channels=channels,
        )
    return out


def iter_experiment(plan: ExperimentPlan, kinds: Sequence[str] = ("baseline", "damaged"),
                    channels: Sequence[str] | None = None,
                    where=None) -> Iterator[tuple[Condition, list[PassageRecord]]]:
    """Yield ``(condition, records)`` pairs without touching the disk.

    ``where`` optionally filters conditions before any synthesis happens.
    """
    for cond in plan.conditions():
        if cond.kind in kinds and (where is None or where(cond)):
            yield cond, condition_passages(plan, cond, channels)


def generate_experiment(plan: ExperimentPlan, out_dir: str | Path, dry_run: bool = False) -> dict:
    """Write passage CSVs plus ``manifest.json`` under ``out_dir``; return the manifest."""
    manifest = plan.manifest()
    if dry_run:
        return manifest
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=out, prefix=".probe", delete=True)
        probe.close()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    for cond, records in iter_experiment(plan):
        target = out / cond.file
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(f".{target.name}.tmp")
        write_passages_csv(records, tmp)
        os.replace(tmp, target)
        logger.debug("wrote %s (%d records)", target, len(records))
    from ._io import write_json

    write_json(out / "manifest.json", manifest)
    return manifest

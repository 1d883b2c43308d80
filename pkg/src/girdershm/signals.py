"""Passage records, CSV/JSON ingestion and alignment into passage matrices."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SECTIONS = ("L/4", "L/2", "3L/4")
COMPONENTS = (
    "bottom_plate",
    "left_web",
    "right_web",
    "top_plate",
    "left_track_plate",
    "right_track_plate",
)

CSV_HEADER = (
    "passage_id",
    "channel_id",
    "speed_kmh",
    "weight_class",
    "irregularity",
    "condition",
    "damage_component",
    "damage_section",
    "damage_delta",
    "sample_index",
    "value",
)

TRIGGER_FRACTION = 0.05
DEFAULT_SAMPLE_RATE = 1000.0


class PassageFormatError(ValueError):
    """Raised when a passage file cannot be parsed."""


@dataclass(frozen=True)
class DamageSpec:
    section: str
    component: str
    delta: float

    def __post_init__(self):
        if self.section not in SECTIONS:
            raise ValueError(f"unknown section {self.section!r}")
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class ChannelMeta:
    channel_id: str
    section: str
    position_label: str
    longitudinal_coord: float
    component_affinity: tuple[str, ...] = ()

    def __post_init__(self):
        if self.section not in SECTIONS:
            raise ValueError(f"unknown section {self.section!r}")
        if self.longitudinal_coord < 0:
            raise ValueError("longitudinal_coord must be >= 0")


@dataclass(frozen=True)
class PassageRecord:
    passage_id: str
    channel_id: str
    samples: np.ndarray = field(repr=False)
    speed: float
    sample_rate: float = DEFAULT_SAMPLE_RATE
    train_weight_class: str = ""
    irregularity_label: str = ""
    condition: str = "baseline"
    damage_spec: DamageSpec | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"passage {self.passage_id}: non-finite sample")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.condition not in ("baseline", "damaged"):
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.condition == "baseline" and self.damage_spec is not None:
            raise ValueError("baseline passage cannot carry a damage spec")

    @property
    def n(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class PassageMatrix:
    data: np.ndarray = field(repr=False)
    channel_id: str
    speed_bin: str
    passage_ids: tuple[str, ...] = ()

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PassageMatrix":
        return PassageMatrix(data, self.channel_id, self.speed_bin, self.passage_ids)


def speed_bin(speed: float, width: float | None = None) -> str:
    """Label of the speed bin containing ``speed`` (km/h).

    With ``width=None`` every distinct speed is its own bin; otherwise bins
    are centred on integer multiples of ``width``.
    """
    if width:
        speed = round(speed / width) * width
    return f"{speed:g}"


# ------------------------------------------------------------------ I/O


def _damage_fields(rec: PassageRecord) -> tuple[str, str, str]:
    d = rec.damage_spec
    if d is None:
        return "", "", ""
    return d.component, d.section, repr(float(d.delta))


def write_passages_csv(records: Iterable[PassageRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            comp, sec, delta = _damage_fields(rec)
            head = [
                rec.passage_id,
                rec.channel_id,
                f"{rec.speed:g}",
                rec.train_weight_class,
                rec.irregularity_label,
                rec.condition,
                comp,
                sec,
                delta,
            ]
            writer.writerows(head + [i, repr(float(v))] for i, v in enumerate(rec.samples))


def _record_to_dict(rec: PassageRecord) -> dict:
    comp, sec, delta = _damage_fields(rec)
    return {
        "passage_id": rec.passage_id,
        "channel_id": rec.channel_id,
        "speed_kmh": rec.speed,
        "sample_rate": rec.sample_rate,
        "weight_class": rec.train_weight_class,
        "irregularity": rec.irregularity_label,
        "condition": rec.condition,
        "damage_component": comp,
        "damage_section": sec,
        "damage_delta": float(delta) if delta else None,
        "samples": rec.samples.tolist(),
    }


def write_passages_json(records: Iterable[PassageRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([_record_to_dict(r) for r in records], fh)


def _make_record(meta: dict, samples, sample_rate: float, where: str) -> PassageRecord:
    try:
        speed = float(meta["speed_kmh"])
        condition = meta["condition"] or "baseline"
        damage = None
        if meta.get("damage_component"):
            damage = DamageSpec(
                meta["damage_section"], meta["damage_component"], float(meta["damage_delta"])
            )
        return PassageRecord(
            passage_id=str(meta["passage_id"]),
            channel_id=str(meta["channel_id"]),
            samples=np.asarray(samples, dtype=np.float64),
            speed=speed,
            sample_rate=float(meta.get("sample_rate") or sample_rate),
            train_weight_class=str(meta.get("weight_class") or ""),
            irregularity_label=str(meta.get("irregularity") or ""),
            condition=condition,
            damage_spec=damage,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PassageFormatError(f"{where}: {exc}") from exc


def _load_csv(path: Path, sample_rate: float) -> list[PassageRecord]:
    records: list[PassageRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PassageFormatError(f"{path}: no passages")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise PassageFormatError(f"{path}:1: malformed header {header!r}")

        key = None
        meta: dict = {}
        values: list[float] = []
        start_line = 0
        seen: set[tuple[str, str]] = set()

        def flush():
            if key is None:
                return
            if key in seen:
                raise PassageFormatError(
                    f"{path}:{start_line}: passage {key[0]} channel {key[1]} is not contiguous"
                )
            seen.add(key)
            records.append(_make_record(meta, values, sample_rate, f"{path}:{start_line}"))

        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise PassageFormatError(
                    f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            fields = dict(zip(CSV_HEADER, row))
            try:
                index = int(fields["sample_index"])
                value = float(fields["value"])
            except ValueError as exc:
                raise PassageFormatError(f"{path}:{lineno}: {exc}") from exc
            if not math.isfinite(value):
                raise PassageFormatError(f"{path}:{lineno}: non-finite sample {row[-1]!r}")
            row_key = (fields["passage_id"], fields["channel_id"])
            if row_key != key:
                flush()
                key, meta, values, start_line = row_key, fields, [], lineno
            elif any(fields[h] != meta[h] for h in CSV_HEADER[2:9]):
                raise PassageFormatError(f"{path}:{lineno}: metadata changes within a passage")
            if index != len(values):
                raise PassageFormatError(
                    f"{path}:{lineno}: sample_index {index} out of order (expected {len(values)})"
                )
            values.append(value)
        flush()
    if not records:
        raise PassageFormatError(f"{path}: no passages")
    return records


def _load_json(path: Path, sample_rate: float) -> list[PassageRecord]:
    try:
        with open(path) as fh:
            items = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PassageFormatError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(items, list) or not items:
        raise PassageFormatError(f"{path}: no passages")
    records = []
    for i, item in enumerate(items):
        where = f"{path}[{i}]"
        if not isinstance(item, dict) or "samples" not in item:
            raise PassageFormatError(f"{where}: passage object without samples")
        samples = item["samples"]
        if not samples:
            raise PassageFormatError(f"{where}: empty samples")
        arr = np.asarray(samples, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise PassageFormatError(f"{where}: non-finite sample at index {bad}")
        records.append(_make_record(item, arr, sample_rate, where))
    return records


def load_passages(
    path: str | Path,
    format: str | None = None,
    *,
    channels: Iterable[str] | None = None,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> list[PassageRecord]:
    """Read passage records from a CSV or JSON file.

    ``format`` defaults to the file suffix. When ``channels`` is given, any
    record naming a channel outside it is rejected.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        records = _load_csv(path, sample_rate)
    elif fmt == "json":
        records = _load_json(path, sample_rate)
    else:
        raise PassageFormatError(f"{path}: unsupported format {fmt!r}")
    if channels is not None:
        known = set(channels)
        for rec in records:
            if rec.channel_id not in known:
                raise PassageFormatError(
                    f"{path}: passage {rec.passage_id} has unknown channel id {rec.channel_id!r}"
                )
    return records


# ------------------------------------------------------------------ alignment


def trigger_index(samples: np.ndarray, fraction: float = TRIGGER_FRACTION) -> int:
    """Index of the first sample whose magnitude exceeds ``fraction`` of the peak."""
    mag = np.abs(np.asarray(samples, dtype=np.float64))
    peak = mag.max(initial=0.0)
    if peak == 0.0:
        return 0
    return int(np.argmax(mag > fraction * peak))


def common_length(records: Sequence[PassageRecord], multiple: int = 10) -> int:
    """Shortest post-trigger length, rounded down to a multiple of ``multiple``."""
    if not records:
        raise ValueError("no passages")
    shortest = min(r.n - trigger_index(r.samples) for r in records)
    return (shortest // multiple) * multiple


def _resample(samples: np.ndarray, target_n: int) -> np.ndarray:
    src = np.linspace(0.0, 1.0, samples.shape[0])
    dst = np.linspace(0.0, 1.0, target_n)
    return np.interp(dst, src, samples)


def align_to_matrix(
    records: Sequence[PassageRecord],
    target_n: int,
    method: str = "truncate",
    *,
    bin_width: float | None = None,
) -> PassageMatrix:
    """Stack records of one channel and speed bin into a ``k x target_n`` matrix."""
    if not records:
        raise ValueError("no passages")
    if target_n < 1:
        raise ValueError("target_n must be positive")
    channels = {r.channel_id for r in records}
    if len(channels) > 1:
        raise ValueError(f"mixed channels in one matrix: {sorted(channels)}")
    bins = {speed_bin(r.speed, bin_width) for r in records}
    if len(bins) > 1:
        raise ValueError(
            f"mixed speed bins {sorted(bins)}: baselines are per speed, resample explicitly"
        )
    rows = []
    for rec in records:
        if method == "truncate":
            start = trigger_index(rec.samples)
            if rec.n - start < target_n:
                raise ValueError(
                    f"passage {rec.passage_id}: {rec.n - start} samples after trigger, "
                    f"need {target_n}"
                )
            rows.append(rec.samples[start : start + target_n])
        elif method == "linear_resample":
            rows.append(_resample(rec.samples, target_n))
        else:
            raise ValueError(f"unknown alignment method {method!r}")
    return PassageMatrix(
        np.vstack(rows), channels.pop(), bins.pop(), tuple(r.passage_id for r in records)
    )

"""Command-line front end: ``girdershm simulate|baseline|detect|report|bic``.

Exit codes: 0 healthy, 1 usage or data error, 2 at least one outlier flagged.
Settings resolve as command-line flag, then config file, then built-in default.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._io import atomic_open, read_json, write_json
from .ar import select_order
from .detect import (
    BaselineConfig,
    BaselineModel,
    DamageReport,
    SpeedBinMismatch,
    fit_baseline,
    group_records,
    score,
)
from .signals import ChannelMeta, PassageFormatError, PassageRecord, load_passages, speed_bin
from .simulate import ExperimentPlan, default_girder, generate_experiment, load_plan

logger = logging.getLogger("girdershm")

EXIT_OK, EXIT_ERROR, EXIT_DAMAGE = 0, 1, 2
MODEL_STORE_ENV = "GIRDERSHM_MODEL_STORE"

DEFAULTS = {
    "alpha": 0.01,
    "pca_threshold": 0.80,
    "order": "20",
    "order_max": 150,
    "split": 0.7,
    "seed": 0,
    "bin_width": None,
    "align": "truncate",
    "ar_mode": "frozen",
    "bic_signals": 8,
}


class CliError(Exception):
    """A usage or data problem reported to the user with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ config


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    try:
        if p.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python 3.10
                import tomli as tomllib
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
        else:
            with open(p) as fh:
                data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read config {p}: {exc}") from exc
    data = data.get("run", data)
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace, key: str, config: dict):
    """Flag value if given, else config-file value, else built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def baseline_config(args: argparse.Namespace) -> BaselineConfig:
    cfg = _load_config(getattr(args, "config", None))
    order = str(resolve(args, "order", cfg))
    bw = resolve(args, "bin_width", cfg)
    try:
        return BaselineConfig(
            alpha=float(resolve(args, "alpha", cfg)),
            pca_threshold=float(resolve(args, "pca_threshold", cfg)),
            ar_order="auto" if order == "auto" else int(order),
            order_grid=range(1, int(resolve(args, "order_max", cfg)) + 1),
            bic_max_signals=int(resolve(args, "bic_signals", cfg)),
            split_fraction=float(resolve(args, "split", cfg)),
            seed=int(resolve(args, "seed", cfg)),
            bin_width=float(bw) if bw is not None else None,
            align=str(resolve(args, "align", cfg)),
            ar_mode=str(resolve(args, "ar_mode", cfg)),
        )
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}") from exc


def _model_store(args) -> Path:
    path = args.models or os.environ.get(MODEL_STORE_ENV) or "models"
    return Path(path)


# ------------------------------------------------------------------ data


def _dataset_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files += sorted(
                f for f in p.rglob("*")
                if f.suffix.lower() in (".csv", ".json") and f.name != "manifest.json"
                and f.is_file()
            )
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"no such file or directory: {p}")
    return files


def read_dataset(paths: Sequence[str], channels: Sequence[str] | None = None) -> list[PassageRecord]:
    records: list[PassageRecord] = []
    for f in _dataset_files(paths):
        try:
            recs = load_passages(f)
        except (PassageFormatError, OSError) as exc:
            raise CliError(str(exc)) from exc
        if channels:
            recs = [r for r in recs if r.channel_id in channels]
        records += recs
    return records


def _channel_meta(channel_ids) -> dict[str, ChannelMeta]:
    known = {c.channel_id: c for c in default_girder().channels}
    return {cid: known[cid] for cid in sorted(set(channel_ids)) if cid in known}


def _model_path(store: Path, channel_id: str, bin_label: str) -> Path:
    return store / f"{channel_id}__{bin_label}.json"


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    try:
        plan = load_plan(args.plan) if args.plan else ExperimentPlan()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.baseline_passages is not None:
            overrides["baseline_passages"] = args.baseline_passages
        if args.damage_passages is not None:
            overrides["damage_passages"] = args.damage_passages
        if args.channels:
            overrides["channels"] = tuple(args.channels)
        if args.speeds:
            overrides["speeds"] = tuple(args.speeds)
        if args.no_damage:
            overrides["include_damage"] = False
        if overrides:
            plan = ExperimentPlan.from_dict({**plan.to_dict(), **overrides})
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    if args.dry_run:
        manifest = generate_experiment(plan, args.out or ".", dry_run=True)
        json.dump(manifest, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK
    if not args.out:
        raise CliError("--out is required unless --dry-run is given")
    try:
        manifest = generate_experiment(plan, args.out)
    except OSError as exc:
        raise CliError(str(exc)) from exc
    c = manifest["counts"]
    print(f"{c['baseline_conditions']} baseline / {c['damage_conditions']} damaged conditions "
          f"written to {args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    config = baseline_config(args)
    records = [r for r in read_dataset(args.dataset, args.channels) if r.condition == "baseline"]
    if not records:
        raise CliError("no baseline passages in the dataset")
    store = _model_store(args)
    groups = group_records(records, config.bin_width)
    index = []
    print("channel_id\tspeed_bin\tpassages\tp\tm\tmu\tsigma\tcb")
    for (cid, b), recs in groups.items():
        try:
            model = fit_baseline(recs, config)
        except ValueError as exc:
            raise CliError(f"{cid} at {b} km/h: {exc}") from exc
        path = _model_path(store, cid, b)
        write_json(path, model.to_dict(full_basis=True))
        if model.bic is not None:
            with atomic_open(path.with_suffix(".bic.csv")) as fh:
                fh.write(model.bic.to_csv())
        index.append({"channel_id": cid, "speed_bin": b, "file": path.name})
        t = model.threshold
        print(f"{cid}\t{b}\t{len(recs)}\t{model.pca.retained_p}\t{model.ar.order}\t"
              f"{t.mu:.6g}\t{t.sigma:.6g}\t{t.cb:.6g}")
    write_json(store / "index.json", {"bin_width": config.bin_width, "models": index})
    return EXIT_OK


def _load_models(store: Path) -> tuple[dict[tuple[str, str], BaselineModel], float | None]:
    index_path = store / "index.json"
    if not index_path.exists():
        raise CliError(f"no model store at {store} (missing index.json)")
    index = read_json(index_path)
    models = {}
    for entry in index["models"]:
        models[(entry["channel_id"], entry["speed_bin"])] = BaselineModel.from_dict(
            read_json(store / entry["file"])
        )
    return models, index.get("bin_width")


def cmd_detect(args) -> int:
    store = _model_store(args)
    models, bin_width = _load_models(store)
    records = read_dataset(args.dataset, args.channels)
    if args.only:
        records = [r for r in records if r.condition == args.only]
    if args.exclude_training:
        seen = {(pid, m.channel_id) for m in models.values() for pid in m.fit_ids}
        records = [r for r in records if (r.passage_id, r.channel_id) not in seen]
    if not records:
        raise CliError("no passages")
    groups = group_records(records, bin_width)
    scores = []
    for (cid, b), recs in groups.items():
        model = models.get((cid, b))
        if model is None:
            if args.allow_speed_mismatch:
                model = next((m for (c, _), m in models.items() if c == cid), None)
            if model is None:
                raise CliError(f"no baseline model for channel {cid} at speed bin {b} km/h")
        try:
            scores += score(recs, model, bin_width=bin_width,
                            allow_speed_mismatch=args.allow_speed_mismatch)
        except (SpeedBinMismatch, ValueError) as exc:
            raise CliError(str(exc)) from exc
    report = DamageReport(scores, _channel_meta(s.channel_id for s in scores))
    out = Path(args.out)
    write_json(out / "report.json", report.to_dict())
    with atomic_open(out / "report.csv") as fh:
        fh.write(report.to_csv())
    flagged = sum(s.outlier for s in scores)
    print(f"{len(scores)} passage-channel scores, {flagged} outliers; report in {out}")
    return EXIT_DAMAGE if flagged else EXIT_OK


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with atomic_open(path) as fh:
        fh.write(buf.getvalue())


def cmd_report(args) -> int:
    scores, channels = [], {}
    for path in args.reports:
        try:
            rep = DamageReport.from_dict(read_json(path))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(f"malformed report {path}: {exc}") from exc
        scores += rep.scores
        channels.update(rep.channels)
    if not scores:
        raise CliError("reports contain no scores")
    merged = DamageReport(scores, channels)
    out = Path(args.out)
    verdicts = merged.component_verdicts()
    _write_csv(
        out / "detection_matrix.csv",
        ["section", "component", "flagged", "passages", "rate", "detected"],
        [[sec, comp, v["flagged"], v["passages"], f"{v['rate']:.6g}", int(v["detected"])]
         for (sec, comp), v in verdicts.items()],
    )
    groups: dict[tuple, list] = defaultdict(list)
    for s in scores:
        d = s.damage
        key = (s.channel_id, s.speed_bin, d.section if d else "", d.component if d else "",
               d.delta if d else 0.0)
        groups[key].append(s)
    rows = []
    for key in sorted(groups):
        ss = groups[key]
        dfs = np.array([s.df for s in ss])
        rows.append([*key[:4], f"{key[4]:g}", len(ss), f"{np.median(dfs):.6g}",
                     f"{dfs.mean():.6g}", f"{ss[0].cb:.6g}",
                     f"{np.mean([s.outlier for s in ss]):.6g}"])
    _write_csv(
        out / "df_vs_delta.csv",
        ["channel_id", "speed_bin", "section", "component", "delta", "passages",
         "median_df", "mean_df", "cb", "flag_rate"],
        rows,
    )
    fp, det = merged.false_positive_rate, merged.detection_rate
    print(f"{len(verdicts)} section/component rows; false-positive rate "
          f"{'n/a' if fp is None else f'{fp:.4f}'}; detection rate "
          f"{'n/a' if det is None else f'{det:.4f}'}")
    return EXIT_OK


def cmd_bic(args) -> int:
    cfg = _load_config(args.config)
    records = [r for r in read_dataset(args.dataset, [args.channel]) if r.condition == "baseline"]
    bw = resolve(args, "bin_width", cfg)
    if args.speed is not None:
        want = speed_bin(args.speed, bw)
        records = [r for r in records if speed_bin(r.speed, bw) == want]
    groups = group_records(records, bw)
    if len(groups) != 1:
        raise CliError(f"need exactly one speed bin for {args.channel}, found "
                       f"{sorted(b for _, b in groups) or 'none'}; pass --speed")
    (_, b), recs = next(iter(groups.items()))
    config = baseline_config(args)
    from .detect import _split
    from .pca import fit_pca, remove_components
    from .signals import align_to_matrix, common_length

    fit_recs, _ = _split(recs, config.split_fraction, config.seed)
    X = align_to_matrix(fit_recs, common_length(recs), config.align, bin_width=bw)
    R = remove_components(X, fit_pca(X, config.pca_threshold)).data
    stride = max(1, len(R) // config.bic_max_signals)
    curve = select_order(R[::stride][: config.bic_max_signals], config.order_grid)
    text = curve.to_csv()
    if args.out:
        with atomic_open(args.out) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"optimum order {curve.optimum} for {args.channel} at {b} km/h", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_model_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--alpha", type=float, help="significance level (default 0.01)")
    p.add_argument("--pca-threshold", type=float, help="cumulative variance share (default 0.80)")
    p.add_argument("--order", help="AR order or 'auto' for BIC selection (default 20)")
    p.add_argument("--order-max", type=int, help="largest order tried by 'auto' (default 150)")
    p.add_argument("--bic-signals", type=int, help="signals averaged in the BIC curve (default 8)")
    p.add_argument("--split", type=float, help="fit share of baseline passages (default 0.7)")
    p.add_argument("--seed", type=int, help="seed of the fit/validation shuffle (default 0)")
    p.add_argument("--bin-width", type=float, help="speed bin width in km/h (default exact)")
    p.add_argument("--align", choices=["truncate", "linear_resample"])
    p.add_argument("--ar-mode", choices=["frozen", "refit"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="girdershm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic passage dataset")
    p.add_argument("--plan", help="TOML or JSON experiment plan")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline-passages", type=int)
    p.add_argument("--damage-passages", type=int)
    p.add_argument("--channels", nargs="+")
    p.add_argument("--speeds", nargs="+", type=float)
    p.add_argument("--no-damage", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="print the manifest, write nothing")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="fit one baseline model per channel and speed bin")
    p.add_argument("dataset", nargs="+", help="passage files or directories")
    p.add_argument("--models", help=f"model store directory (env {MODEL_STORE_ENV})")
    p.add_argument("--channels", nargs="+")
    _add_model_opts(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("detect", help="score passages against stored baselines")
    p.add_argument("dataset", nargs="+")
    p.add_argument("--models", help=f"model store directory (env {MODEL_STORE_ENV})")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--channels", nargs="+")
    p.add_argument("--only", choices=["baseline", "damaged"])
    p.add_argument("--exclude-training", action="store_true",
                   help="skip passages the baselines were fitted on")
    p.add_argument("--allow-speed-mismatch", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="summary tables and plot-ready CSVs")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bic", help="BIC curve of one channel")
    p.add_argument("dataset", nargs="+")
    p.add_argument("--channel", required=True)
    p.add_argument("--speed", type=float)
    p.add_argument("--out", help="CSV path (default stdout)")
    _add_model_opts(p)
    p.set_defaults(func=cmd_bic)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"girdershm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

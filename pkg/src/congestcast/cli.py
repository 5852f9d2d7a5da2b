"""Command-line driver: one subcommand per pipeline stage, artifacts under ``output_dir``.

    congestcast synth | ingest | cluster | extract | features | evaluate
                | compare | similarity | sweep | all | config

Every invocation writes ``<output_dir>/<stage>/run.json`` with the config
hash, seeds, library versions and checksums of its inputs and outputs.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import pipeline
from .clustering import load_centroids, read_assignments, write_assignments
from .config import PipelineConfig, parse_assignment
from .congestion import extract_records, read_records, records_by_segment, write_records
from .data import load_electricity_csv, load_travel_time_csv, write_electricity_csv
from .errors import CongestcastError, ConfigError, MissingArtifactError
from .features import mixed_features, read_features, window_from_values, write_features
from .similarity import pairwise_similarity, write_matrix
from .synth import ScenarioSpec, generate

STAGES = ("synth", "ingest", "cluster", "extract", "features", "evaluate", "compare", "similarity", "sweep")


# ------------------------------------------------------------ artifacts

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rel(cfg: PipelineConfig, path: Path) -> str:
    try:
        return str(Path(path).relative_to(cfg.output_dir))
    except ValueError:
        return str(path)


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("congestcast", "numpy", "scipy", "pandas", "numba", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _seeds(cfg: PipelineConfig) -> dict:
    return {"cluster_seed": cfg.cluster_seed, "cv_seed": cfg.cv_seed, "synth_seed": cfg.synth.get("seed", 0)}


def write_manifest(cfg: PipelineConfig, stage: str, inputs, outputs) -> Path:
    stage_dir = cfg.out(stage)
    cfg.save(stage_dir / "config.yaml")
    manifest = {
        "stage": stage,
        "config_hash": cfg.hash(),
        "seeds": _seeds(cfg),
        "versions": _versions(),
        "inputs": {_rel(cfg, p): _sha256(Path(p)) for p in inputs},
        "outputs": {_rel(cfg, p): _sha256(Path(p)) for p in [*outputs, stage_dir / "config.yaml"]},
    }
    path = stage_dir / "run.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _write_json(path: Path, payload: dict, cfg: PipelineConfig) -> Path:
    payload = {"config_hash": cfg.hash(), **payload}
    path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")
    return path


def _write_csv(path: Path, df: pd.DataFrame) -> Path:
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def _need(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifactError(path, producer)
    return Path(path)


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    d = cfg.out(stage)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _electricity_input(cfg: PipelineConfig) -> Path:
    path = cfg.electricity_path()
    if cfg.electricity_csv:
        if not path.exists():
            raise ConfigError(f"electricity_csv {path} does not exist")
        return path
    return _need(path, "synth")


def _travel_input(cfg: PipelineConfig) -> Path:
    path = cfg.travel_path()
    if cfg.travel_csv:
        if not path.exists():
            raise ConfigError(f"travel_csv {path} does not exist")
        return path
    return _need(path, "synth")


ARMA_COLUMNS = ["segment_id", "day", "cutoff", "cst_hours", "p", "q", "diagnostic"]


def arma_frame(preds: dict, cutoff: str) -> pd.DataFrame:
    rows = []
    for (seg, day), p in sorted(preds.items()):
        order = p.order or (None, None)
        rows.append((seg, day.isoformat(), cutoff, p.cst, order[0], order[1], p.diagnostic))
    df = pd.DataFrame(rows, columns=ARMA_COLUMNS)
    return df.astype({"p": "Int64", "q": "Int64"})


def read_arma(path: Path) -> dict:
    df = pd.read_csv(path, dtype={"segment_id": str, "day": str, "cutoff": str}, keep_default_na=True,
                     float_precision="round_trip")
    out = {}
    for row in df.itertuples(index=False):
        cst = None if pd.isna(row.cst_hours) else float(row.cst_hours)
        out[(row.segment_id, dt.date.fromisoformat(row.day))] = _Pred(cst)
    return out


@dataclasses.dataclass(frozen=True)
class _Pred:
    cst: float | None


# --------------------------------------------------------------- stages

def run_synth(cfg: PipelineConfig, args) -> list[Path]:
    defaults = {
        "interval_minutes": cfg.interval_minutes,
        "profile_window": tuple(cfg.analysis_window),
        "weekdays": tuple(cfg.weekdays),
        "search_window": tuple(cfg.search_window),
        "persistence": cfg.persistence,
    }
    params = {**defaults, **cfg.synth}
    known = {f.name for f in dataclasses.fields(ScenarioSpec)}
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"unknown synth parameter(s): {', '.join(sorted(unknown))}")
    spec = ScenarioSpec(**params)
    ds = generate(spec)
    paths = ds.write(_stage_dir(cfg, "synth"))
    outputs = list(paths.values())
    write_manifest(cfg, "synth", [], outputs)
    return outputs


def run_ingest(cfg: PipelineConfig, args) -> list[Path]:
    src = _electricity_input(cfg)
    raw, seasons = pipeline.ingest(cfg, src)
    out = _stage_dir(cfg, "ingest")
    outputs = [out / "profiles.csv", out / "report.json"]
    write_electricity_csv(raw, outputs[0])
    _write_json(outputs[1], raw.report.to_dict() | {"analysis_days": [d.isoformat() for d in raw.days]}, cfg)
    if seasons is not None:
        outputs.append(_write_csv(out / "seasons.csv", pd.DataFrame(
            {"day": [d.isoformat() for d in seasons], "season": list(seasons.values())})))
    write_manifest(cfg, "ingest", [src], outputs)
    return outputs


def _load_profiles(cfg: PipelineConfig, end: str | None = None):
    path = _need(cfg.out("ingest", "profiles.csv"), "ingest")
    return load_electricity_csv(path, pipeline.analysis_grid(cfg, end)), path


def run_cluster(cfg: PipelineConfig, args) -> list[Path]:
    raw, src = _load_profiles(cfg)
    model, curve = pipeline.cluster(cfg, raw)
    out = _stage_dir(cfg, "cluster")
    outputs = [out / "model.json", out / "assignments.csv"]
    _write_json(outputs[0], model.to_json(), cfg)
    write_assignments(model, outputs[1])
    if curve is not None:
        outputs.append(_write_csv(out / "gap.csv", curve.to_frame()))
    write_manifest(cfg, "cluster", [src], outputs)
    return outputs


def run_extract(cfg: PipelineConfig, args) -> list[Path]:
    src = _travel_input(cfg)
    records = extract_records(load_travel_time_csv(src), pipeline.congestion_params(cfg))
    out = _stage_dir(cfg, "extract")
    path = out / "congestion.csv"
    write_records(records, path)
    write_manifest(cfg, "extract", [src], [path])
    return [path]


def _records(cfg: PipelineConfig):
    path = _need(cfg.out("extract", "congestion.csv"), "extract")
    return read_records(path), path


def _labels(cfg: PipelineConfig):
    apath = _need(cfg.out("cluster", "assignments.csv"), "cluster")
    mpath = _need(cfg.out("cluster", "model.json"), "cluster")
    households, days, labels = read_assignments(apath)
    _, meta = load_centroids(mpath)
    return households, days, labels, int(meta["K"]), [apath, mpath]


def run_features(cfg: PipelineConfig, args) -> list[Path]:
    households, days, labels, K, inputs = _labels(cfg)
    records, rpath = _records(cfg)
    tpath = _travel_input(cfg)
    agg, disagg = pipeline.build_features(labels, days, households, K)
    out = _stage_dir(cfg, "features")
    outputs = [out / "aggregate.csv", out / "disaggregate.csv"]
    write_features(agg, outputs[0])
    write_features(disagg, outputs[1])
    if "mixed" in cfg.cst_kinds:
        preds = pipeline.arma_predictions(cfg, load_travel_time_csv(tpath), records, days)
        outputs.append(_write_csv(out / "arma_cst.csv", arma_frame(preds, cfg.arma_cutoff)))
        for seg, recs in records_by_segment(records).items():
            sub = pipeline.segment_data(agg, disagg, recs, preds)
            if len(sub.days) == 0:
                continue
            fm = mixed_features(sub.aggregate, list(sub.arma), window_from_values(sub.cst))
            outputs.append(out / f"mixed_{seg}.csv")
            write_features(fm, outputs[-1])
    write_manifest(cfg, "features", [*inputs, rpath, tpath], outputs)
    return outputs


def _segments(cfg: PipelineConfig, with_arma: bool):
    fdir = cfg.out("features")
    apath = _need(fdir / "aggregate.csv", "features")
    dpath = _need(fdir / "disaggregate.csv", "features")
    records, rpath = _records(cfg)
    inputs = [apath, dpath, rpath]
    preds = None
    if with_arma:
        mpath = _need(fdir / "arma_cst.csv", "features")
        preds = read_arma(mpath)
        inputs.append(mpath)
    segs = pipeline.segments_for(cfg, read_features(apath), read_features(dpath), records, preds)
    return segs, records, inputs


def run_evaluate(cfg: PipelineConfig, args) -> list[Path]:
    segs, records, inputs = _segments(cfg, "mixed" in cfg.cst_kinds)
    results = pipeline.evaluate_all(cfg, segs)
    out = _stage_dir(cfg, "evaluate")
    outputs = [out / "summary.json", out / "predictions.csv", out / "models.json"]
    summary = [
        {"segment_id": r.segment_id, "target": r.target, "kind": r.kind, **r.report.to_json()} for r in results
    ]
    _write_json(outputs[0], {"results": summary}, cfg)
    _write_csv(outputs[1], pipeline.predictions_frame(results))
    models = [{"segment_id": r.segment_id, **r.model.to_json()} for r in results]
    _write_json(outputs[2], {"models": models}, cfg)
    write_manifest(cfg, "evaluate", inputs, outputs)
    return outputs


def run_compare(cfg: PipelineConfig, args) -> list[Path]:
    with_arma = "mixed" in cfg.cst_kinds
    segs, records, inputs = _segments(cfg, with_arma)
    ppath = _need(cfg.out("evaluate", "predictions.csv"), "evaluate")
    preds = pd.read_csv(ppath, dtype={"segment_id": str, "day": str}, float_precision="round_trip")
    out = _stage_dir(cfg, "compare")
    outputs = []
    for target in cfg.targets:
        table = pipeline.compare_table(cfg, preds, segs, records, target)
        outputs.append(_write_csv(out / f"{target}.csv", table))
    outputs.append(_write_csv(out / "baselines.csv", pipeline.baseline_frame(cfg, segs, records)))
    if cfg.arma_coverage_cutoffs:
        tpath = _travel_input(cfg)
        series = load_travel_time_csv(tpath)
        days = sorted({d for s in segs for d in s.days})
        rows = []
        for cutoff in cfg.arma_coverage_cutoffs:
            cut = pipeline.arma_predictions(cfg, series, records, days, cutoff)
            for s in segs:
                arma = np.array([np.nan if cut[(s.segment_id, d)].cst is None else cut[(s.segment_id, d)].cst
                                 for d in s.days])
                row = pipeline._metric_row(s.segment_id, "arma", arma, s.cst, float(np.mean(~np.isnan(arma))))
                rows.append({"cutoff": cutoff, **row})
        outputs.append(_write_csv(out / "arma_coverage.csv", pd.DataFrame(rows)))
        inputs.append(tpath)
    write_manifest(cfg, "compare", [*inputs, ppath], outputs)
    return outputs


def run_similarity(cfg: PipelineConfig, args) -> list[Path]:
    segs, records, inputs = _segments(cfg, False)
    *_, K, linputs = _labels(cfg)
    alpha = args.alpha if getattr(args, "alpha", None) is not None else cfg.similarity_alpha
    profiles, fits = pipeline.selection_profiles(cfg, segs, K, alpha)
    jac, cos = pairwise_similarity(profiles)
    out = _stage_dir(cfg, "similarity")
    outputs = [out / "jaccard.csv", out / "cosine.csv", out / "selections.json"]
    write_matrix(jac, outputs[0])
    write_matrix(cos, outputs[1])
    _write_json(outputs[2], {"alpha": alpha, "selections": [
        {"segment_id": p.segment_id, "n_selected_features": int(len(f.support())),
         "households": sorted(p.selected_households), "pattern_counts": p.pattern_counts.tolist()}
        for p, f in zip(profiles, fits)
    ]}, cfg)
    write_manifest(cfg, "similarity", [*inputs, *linputs], outputs)
    return outputs


def run_sweep(cfg: PipelineConfig, args) -> list[Path]:
    src = _electricity_input(cfg)
    records, rpath = _records(cfg)
    table = pipeline.sweep(cfg, records, src)
    out = _stage_dir(cfg, "sweep")
    path = _write_csv(out / "sweep.csv", table)
    write_manifest(cfg, "sweep", [src, rpath], [path])
    return [path]


def run_all(cfg: PipelineConfig, args) -> list[Path]:
    outputs = []
    for stage in STAGES:
        if stage == "synth" and (cfg.electricity_csv or cfg.travel_csv):
            continue
        outputs.extend(COMMANDS[stage](cfg, args))
    return outputs


def run_config(cfg: PipelineConfig, args) -> list[Path]:
    sys.stdout.write(cfg.dump())
    return []


COMMANDS = {
    "synth": run_synth, "ingest": run_ingest, "cluster": run_cluster, "extract": run_extract,
    "features": run_features, "evaluate": run_evaluate, "compare": run_compare,
    "similarity": run_similarity, "sweep": run_sweep, "all": run_all, "config": run_config,
}


# ------------------------------------------------------------------ CLI

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults apply to missing keys)")
    common.add_argument("--output-dir", help="override output_dir")
    common.add_argument("--seed", type=int, help="set cluster_seed, cv_seed and the synth seed together")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--k", type=int, help="number of patterns (0 = choose by GAP)")
    common.add_argument("--eval-mode", choices=["nested-cv", "fixed-split"])
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; the value is parsed as YAML")

    parser = argparse.ArgumentParser(prog="congestcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic scenario with known ground truth",
        "ingest": "load, window and filter electricity profiles",
        "cluster": "fit typical patterns (fixed K or GAP)",
        "extract": "congestion start time and duration per segment-day",
        "features": "aggregate / disaggregate features and ARMA CST predictions",
        "evaluate": "nested-CV (or fixed-split) evaluation per segment, target and feature kind",
        "compare": "method x segment error table with ARMA coverage",
        "similarity": "Jaccard / cosine agreement of disaggregate selections",
        "sweep": "re-evaluate with the electricity window ending at each sweep_ends time",
        "all": "run every stage in order",
        "config": "print the effective configuration",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name in ("similarity", "all"):
            p.add_argument("--alpha", type=float, help="LASSO penalty for the selections")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    changes = {}
    for item in args.set:
        key, value = parse_assignment(item)
        changes[key] = value
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.k is not None:
        changes["k"] = args.k
    if args.eval_mode is not None:
        changes["eval_mode"] = args.eval_mode
    if getattr(args, "alpha", None) is not None:
        changes["similarity_alpha"] = args.alpha
    if args.seed is not None:
        changes["cluster_seed"] = changes["cv_seed"] = args.seed
        changes["synth"] = {**changes.get("synth", cfg.synth), "seed": args.seed}
    return cfg.override(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg, args)
    except CongestcastError as exc:
        print(f"congestcast {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"congestcast {args.command}: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

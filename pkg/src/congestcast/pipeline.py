"""Stage functions shared by the CLI, the experiment scripts and the tests.

Each stage takes a PipelineConfig plus in-memory inputs and returns in-memory
results; reading and writing artifacts is left to the callers.
"""

from __future__ import annotations

import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .baselines import historical_mean, predict_cst_arma
from .clustering import GapCurve, PatternModel, fit_patterns, gap_select_k, seasonal_split
from .config import PipelineConfig
from .congestion import CongestionParams, CongestionRecord, records_by_segment
from .data import (
    ProfilePanel,
    TimeGrid,
    TravelTimeSeries,
    filter_calendar,
    load_electricity_csv,
    normalize_panel,
)
from .errors import ConfigError, DataError
from .features import (
    FeatureMatrix,
    aggregate_features,
    align_targets,
    disaggregate_features,
    mixed_column,
    window_from_values,
)
from .regression import (
    EvaluationReport,
    FittedPredictor,
    alpha_grid,
    fit_full,
    fit_lasso,
    fixed_split_evaluate,
    mae,
    nested_cv_evaluate,
    rmse,
    select_alpha,
)
from .similarity import SelectionProfile, selection_profile


def congestion_params(cfg: PipelineConfig) -> CongestionParams:
    return CongestionParams(
        ratio=cfg.congestion_ratio, persistence=cfg.persistence, window=tuple(cfg.search_window),
        fftt_mode=cfg.fftt_mode, fftt_percentile=cfg.fftt_percentile, fill_gaps=cfg.fill_gaps,
    )


def analysis_grid(cfg: PipelineConfig, end: str | None = None) -> TimeGrid:
    start, stop = cfg.analysis_window
    return TimeGrid.between(start, end or stop, interval_minutes=cfg.interval_minutes)


def _day_range(cfg: PipelineConfig):
    if not cfg.date_start and not cfg.date_end:
        return None
    return (cfg.date_start or "0001-01-01", cfg.date_end or "9999-12-31")


# ------------------------------------------------------------------ ingest

def select_days(cfg: PipelineConfig, panel: ProfilePanel) -> tuple[ProfilePanel, dict | None]:
    """Apply the weekday / date-range filters, then the optional season filter."""
    panel = filter_calendar(panel, cfg.weekdays or None, _day_range(cfg))
    seasons = None
    if cfg.season:
        if cfg.season not in ("summer", "winter"):
            raise ConfigError(f"season must be summer or winter, got {cfg.season!r}")
        seasons = seasonal_split(panel, seed=cfg.cluster_seed)
        keep = np.array([seasons[d] == cfg.season for d in panel.days])
        if not keep.any():
            raise DataError(f"no {cfg.season} days left after the seasonal split")
        panel = panel.select_days(keep)
    return panel, seasons


def ingest(cfg: PipelineConfig, path=None, end: str | None = None) -> tuple[ProfilePanel, dict | None]:
    panel = load_electricity_csv(path or cfg.electricity_path(), analysis_grid(cfg, end))
    report = panel.report
    filtered, seasons = select_days(cfg, panel)
    return ProfilePanel(filtered.households, filtered.days, filtered.values, filtered.grid,
                        report=report), seasons


# ----------------------------------------------------------------- cluster

def cluster(cfg: PipelineConfig, raw: ProfilePanel) -> tuple[PatternModel, GapCurve | None]:
    """Normalize, choose K (fixed or by GAP), and fit the typical patterns."""
    panel = normalize_panel(raw)
    curve = None
    K = cfg.k
    if K == 0:
        X = panel.flat()[~panel.all_zero.reshape(-1)]
        curve, K = gap_select_k(X, cfg.gap_candidates, B=cfg.gap_B, seed=cfg.cluster_seed,
                                restarts=cfg.kmeans_restarts, max_iters=cfg.kmeans_max_iters)
    model = fit_patterns(panel, K, restarts=cfg.kmeans_restarts, max_iters=cfg.kmeans_max_iters,
                         seed=cfg.cluster_seed)
    return model, curve


# ---------------------------------------------------------------- features

def build_features(labels, days, households, K) -> tuple[FeatureMatrix, FeatureMatrix]:
    return aggregate_features(labels, days, K), disaggregate_features(labels, days, K, households)


def arma_predictions(cfg: PipelineConfig, series: Sequence[TravelTimeSeries], records: Sequence[CongestionRecord],
                     days: Sequence[dt.date], cutoff: str | None = None) -> dict:
    """(segment_id, day) -> ArmaCstPrediction for every analysis day with travel data."""
    cutoff = cutoff or cfg.arma_cutoff
    params = congestion_params(cfg)
    fftt = {r.segment_id: r.fftt for r in records}
    wanted = set(days)
    jobs = [s for s in series if s.day in wanted and s.segment_id in fftt]

    def run(s):
        return predict_cst_arma(s.times, fftt[s.segment_id], cutoff, s.grid, params,
                                cfg.arma_p_max, cfg.arma_q_max)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        preds = list(pool.map(run, jobs))
    return {(s.segment_id, s.day): p for s, p in zip(jobs, preds)}


def arma_coverage(preds: dict, segment_id: str, days: Sequence[dt.date]) -> float:
    """Fraction of ``days`` on which ARMA predicted a CST for the segment."""
    if not days:
        return float("nan")
    hits = sum(1 for d in days if (p := preds.get((segment_id, d))) is not None and p.cst is not None)
    return hits / len(days)


# ---------------------------------------------------------------- evaluate

def mixed_augment(X: np.ndarray, cst: np.ndarray, arma: np.ndarray):
    """Fold-aware design: the ARMA column is clipped to the CST range of the training rows only."""
    X = np.asarray(X, dtype=float)

    def augment(train, evaluate):
        window = window_from_values(cst[train])
        col = mixed_column(arma, window)
        return np.column_stack([X[train], col[train]]), np.column_stack([X[evaluate], col[evaluate]])

    return augment


def cst_augment(X: np.ndarray, cst: np.ndarray, inner_folds: int, seed: int, n_alphas: int, eps: float):
    """Fold-aware design: a CST predictor fitted on the training rows supplies an extra column."""
    X = np.asarray(X, dtype=float)

    def augment(train, evaluate):
        alphas = alpha_grid(X[train], cst[train], n_alphas, eps)
        k = min(inner_folds, len(train))
        sel = select_alpha(X, cst, alphas, k, seed, rows=train)
        fit = fit_lasso(X[train], cst[train], sel.alpha)
        return (np.column_stack([X[train], fit.predict(X[train])]),
                np.column_stack([X[evaluate], fit.predict(X[evaluate])]))

    return augment


@dataclass
class TargetResult:
    segment_id: str
    target: str
    kind: str
    report: EvaluationReport
    model: FittedPredictor
    days: tuple


@dataclass
class SegmentData:
    segment_id: str
    days: tuple
    cst: np.ndarray
    duration: np.ndarray
    aggregate: FeatureMatrix
    disaggregate: FeatureMatrix
    arma: np.ndarray = field(default=None)


def segment_data(agg: FeatureMatrix, disagg: FeatureMatrix, records: Sequence[CongestionRecord],
                 preds: dict | None = None) -> SegmentData:
    sub, cst, dur = align_targets(agg, records)
    seg = records[0].segment_id
    arma = None
    if preds is not None:
        arma = np.array([
            np.nan if (p := preds.get((seg, d))) is None or p.cst is None else p.cst for d in sub.days
        ])
    return SegmentData(seg, sub.days, cst, dur, sub, disagg.rows(sub.days), arma)


def _evaluate(cfg, X, y, augment, target):
    kw = dict(inner_folds=cfg.inner_folds, alphas=None, seed=cfg.cv_seed, method=cfg.method,
              augment=augment, target=target)
    if cfg.eval_mode == "fixed-split":
        return fixed_split_evaluate(X, y, train_fraction=cfg.train_fraction, **kw)
    return nested_cv_evaluate(X, y, outer_folds=cfg.outer_folds, **kw)


def _design(cfg, seg: SegmentData, target: str, kind: str):
    """(X, names, augment, full-data X) for one target/kind."""
    agg = seg.aggregate
    if kind == "aggregate":
        return agg.values, agg.names, None, agg.values
    if kind == "disaggregate":
        d = seg.disaggregate
        return d.values, d.names, None, d.values
    if kind == "mixed":
        if seg.arma is None:
            raise ConfigError("mixed features need ARMA predictions")
        col = mixed_column(seg.arma, window_from_values(seg.cst))
        return (agg.values, agg.names + ("arma_cst",), mixed_augment(agg.values, seg.cst, seg.arma),
                np.column_stack([agg.values, col]))
    if kind == "aggregate+cst":
        if target != "duration":
            raise ConfigError("aggregate+cst features predict duration only")
        aug = cst_augment(agg.values, seg.cst, cfg.inner_folds, cfg.cv_seed, cfg.n_alphas, cfg.alpha_eps)
        everything = np.arange(len(seg.cst))
        full, _ = aug(everything, everything)
        return agg.values, agg.names + ("predicted_cst",), aug, full
    raise ConfigError(f"unknown feature kind {kind!r}")


def evaluate_segment(cfg: PipelineConfig, seg: SegmentData) -> list[TargetResult]:
    out = []
    for target in cfg.targets:
        y = seg.cst if target == "cst" else seg.duration
        kinds = cfg.cst_kinds if target == "cst" else cfg.duration_kinds
        for kind in kinds:
            X, names, augment, X_full = _design(cfg, seg, target, kind)
            report = _evaluate(cfg, X, y, augment, target)
            report.days = seg.days
            model = fit_full(X_full, y, method=cfg.method, inner_folds=cfg.inner_folds, seed=cfg.cv_seed,
                             target=target)
            model = replace(model, names=tuple(names), feature_kind=kind)
            out.append(TargetResult(seg.segment_id, target, kind, report, model, seg.days))
    return out


def evaluate_all(cfg: PipelineConfig, segments: Sequence[SegmentData]) -> list[TargetResult]:
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        parts = list(pool.map(lambda s: evaluate_segment(cfg, s), segments))
    return [r for part in parts for r in part]


def segments_for(cfg: PipelineConfig, agg: FeatureMatrix, disagg: FeatureMatrix,
                 records: Sequence[CongestionRecord], preds: dict | None = None,
                 min_days: int | None = None) -> list[SegmentData]:
    """One SegmentData per segment with enough congested analysis days to evaluate."""
    need = min_days or cfg.outer_folds * cfg.inner_folds
    out = []
    for seg, recs in records_by_segment(records).items():
        data = segment_data(agg, disagg, recs, preds)
        if len(data.days) >= need:
            out.append(data)
    if not out:
        raise DataError(f"no segment has {need} congested analysis days")
    return out


# ----------------------------------------------------------------- compare

def _metric_row(seg, method, pred, actual, coverage):
    ok = ~np.isnan(pred)
    n = int(ok.sum())
    return {
        "segment_id": seg, "method": method, "n_days": n,
        "rmse": rmse(pred[ok], actual[ok]) if n else math.nan,
        "mae": mae(pred[ok], actual[ok]) if n else math.nan,
        "arma_coverage": coverage,
    }


PREDICTION_COLUMNS = ["segment_id", "target", "kind", "day", "fold", "actual", "predicted"]


def predictions_frame(results: Sequence[TargetResult]) -> pd.DataFrame:
    """Long-form out-of-fold predictions; untested days have fold -1 and no prediction."""
    rows = []
    for r in results:
        fold_of = np.full(len(r.report.actual), -1)
        for k, f in enumerate(r.report.folds):
            fold_of[f.test] = k
        for i, day in enumerate(r.days):
            rows.append((r.segment_id, r.target, r.kind, day.isoformat(), int(fold_of[i]),
                         float(r.report.actual[i]), float(r.report.predictions[i])))
    return pd.DataFrame(rows, columns=PREDICTION_COLUMNS)


def compare_table(cfg: PipelineConfig, predictions: pd.DataFrame, segments: Sequence[SegmentData],
                  records: Sequence[CongestionRecord], target: str) -> pd.DataFrame:
    """Method x segment RMSE/MAE with each segment's ARMA coverage on every row.

    Model rows use the out-of-fold predictions; the baselines are scored on
    the same congested days (days they cannot predict are left out and the
    count shows in ``n_days``).
    """
    by_seg = records_by_segment(records)
    rows = []
    for seg in segments:
        y = seg.cst if target == "cst" else seg.duration
        pos = {d.isoformat(): i for i, d in enumerate(seg.days)}
        coverage = (float(np.mean(~np.isnan(seg.arma))) if seg.arma is not None and len(seg.arma)
                    else math.nan)
        mine = predictions[(predictions["segment_id"] == seg.segment_id) & (predictions["target"] == target)]
        for kind, block in mine.groupby("kind", sort=False):
            pred = np.full(len(y), np.nan)
            tested = block[block["fold"] >= 0]
            pred[[pos[d] for d in tested["day"]]] = tested["predicted"].to_numpy(dtype=float)
            rows.append(_metric_row(seg.segment_id, kind, pred, y, coverage))
        if target == "cst" and seg.arma is not None:
            rows.append(_metric_row(seg.segment_id, "arma", seg.arma, y, coverage))
        hist = np.array([
            np.nan if (v := historical_mean(by_seg[seg.segment_id], d, cfg.history_lookback, target)) is None else v
            for d in seg.days
        ])
        rows.append(_metric_row(seg.segment_id, "historical_mean", hist, y, coverage))
    return pd.DataFrame(rows, columns=["segment_id", "method", "n_days", "rmse", "mae", "arma_coverage"])


def baseline_frame(cfg: PipelineConfig, segments: Sequence[SegmentData],
                   records: Sequence[CongestionRecord]) -> pd.DataFrame:
    """Per-day ARMA and historical-mean CST predictions (NaN = no prediction)."""
    by_seg = records_by_segment(records)
    rows = []
    for seg in segments:
        for i, d in enumerate(seg.days):
            if seg.arma is not None:
                rows.append((seg.segment_id, d.isoformat(), "arma", float(seg.arma[i])))
            h = historical_mean(by_seg[seg.segment_id], d, cfg.history_lookback, "cst")
            rows.append((seg.segment_id, d.isoformat(), "historical_mean", math.nan if h is None else h))
    return pd.DataFrame(rows, columns=["segment_id", "day", "method", "predicted_cst_hours"])


# ------------------------------------------------------------- similarity

def selection_profiles(cfg: PipelineConfig, segments: Sequence[SegmentData], K: int,
                       alpha: float | None = None) -> tuple[list[SelectionProfile], list[FittedPredictor]]:
    """Disaggregate CST LASSO per segment at one fixed alpha, reduced to selection profiles."""
    alpha = cfg.similarity_alpha if alpha is None else alpha
    profiles, fits = [], []
    for seg in segments:
        d = seg.disaggregate
        fit = replace(fit_lasso(d.values, seg.cst, alpha), names=d.names, feature_kind="disaggregate")
        fits.append(fit)
        profiles.append(selection_profile(fit, K, seg.segment_id, cfg.similarity_threshold))
    return profiles, fits


# ------------------------------------------------------------------ sweep

def sweep(cfg: PipelineConfig, records: Sequence[CongestionRecord], path=None) -> pd.DataFrame:
    """Re-cluster and re-evaluate with the electricity window ending at each ``sweep_ends`` time."""
    start = cfg.analysis_window[0]
    rows = []
    for end in cfg.sweep_ends:
        raw, _ = ingest(cfg, path, end)
        model, _ = cluster(cfg, raw)
        agg, disagg = build_features(model.labels, raw.days, raw.households, model.K)
        sub = cfg.override(targets=["cst"], cst_kinds=[cfg.sweep_kind])
        segs = segments_for(sub, agg, disagg, records)
        for r in evaluate_all(sub, segs):
            rows.append({
                "window_start": start, "window_end": end, "segment_id": r.segment_id, "kind": r.kind,
                "K": model.K, "n_days": len(r.days), "pooled_rmse": r.report.pooled_rmse,
                "pooled_mae": r.report.pooled_mae, "mean_fold_rmse": r.report.mean_rmse,
            })
    return pd.DataFrame(rows)

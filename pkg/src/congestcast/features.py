"""Per-day feature vectors built from pattern assignments.

Pattern K (the last) is the dropped reference category in both encodings, so
an aggregate row holds K-1 shares and a household block holds K-1 indicators.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .congestion import CongestionRecord
from .errors import ContractError, DataError

KINDS = ("aggregate", "disaggregate", "mixed", "aggregate+cst")


@dataclass(frozen=True)
class FeatureMatrix:
    days: tuple
    names: tuple
    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.days), len(self.names)):
            raise ContractError(f"values shape {values.shape} != ({len(self.days)}, {len(self.names)})")
        if self.kind not in KINDS:
            raise ContractError(f"unknown feature kind {self.kind!r}")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def p(self) -> int:
        return len(self.names)

    def rows(self, days: Sequence[dt.date]) -> "FeatureMatrix":
        pos = {d: i for i, d in enumerate(self.days)}
        try:
            idx = [pos[d] for d in days]
        except KeyError as exc:
            raise DataError(f"no feature row for day {exc.args[0]}") from None
        return FeatureMatrix(tuple(days), self.names, self.values[idx], self.kind)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=list(self.names))
        df.insert(0, "day", [d.isoformat() for d in self.days])
        return df


@dataclass(frozen=True)
class HistoricalWindow:
    t_plus: float
    t_minus: float

    def __post_init__(self):
        if self.t_plus > self.t_minus:
            raise ContractError("t_plus must not exceed t_minus")

    def clip(self, t):
        return self.t_minus if t is None else min(max(t, self.t_plus), self.t_minus)


def _check_labels(labels, K):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ContractError("labels must be an (H, D) array of patterns")
    if labels.min() < 1 or labels.max() > K:
        raise ContractError(f"pattern labels must lie in 1..{K}")
    return labels


def aggregate_features(labels, days: Sequence[dt.date], K: int) -> FeatureMatrix:
    """Row d = share of the H households in each of patterns 1..K-1 on day d."""
    labels = _check_labels(labels, K)
    H = labels.shape[0]
    counts = np.stack([(labels == k).sum(axis=0) for k in range(1, K)], axis=1).astype(float)
    names = tuple(f"pattern_{k}_share" for k in range(1, K))
    return FeatureMatrix(tuple(days), names, counts / H, "aggregate")


def disaggregate_features(labels, days: Sequence[dt.date], K: int, households: Sequence) -> FeatureMatrix:
    """Row d = concatenation over households of K-1 one-hot pattern indicators."""
    labels = _check_labels(labels, K)
    H, D = labels.shape
    if len(households) != H:
        raise ContractError("one household id per label row is required")
    onehot = labels[:, :, None] == np.arange(1, K)[None, None, :]
    values = onehot.transpose(1, 0, 2).reshape(D, H * (K - 1)).astype(float)
    names = tuple(f"hh_{h}_pattern_{k}" for h in households for k in range(1, K))
    return FeatureMatrix(tuple(days), names, values, "disaggregate")


def historical_window(records: Sequence[CongestionRecord]) -> HistoricalWindow:
    csts = [r.cst for r in records if r.cst is not None]
    if not csts:
        raise DataError("no congested day to build the historical CST window from")
    return HistoricalWindow(min(csts), max(csts))


def window_from_values(csts) -> HistoricalWindow:
    csts = np.asarray(csts, dtype=float)
    if csts.size == 0:
        raise DataError("no CST values to build the historical window from")
    return HistoricalWindow(float(csts.min()), float(csts.max()))


def mixed_column(arma_cst: Sequence, window: HistoricalWindow) -> np.ndarray:
    return np.array([window.clip(None if t is None or np.isnan(t) else float(t)) for t in arma_cst])


def mixed_features(agg: FeatureMatrix, arma_cst: Sequence, window: HistoricalWindow) -> FeatureMatrix:
    """Append the ARMA-predicted CST clipped to the historical window; no prediction maps to t_minus."""
    if agg.kind != "aggregate":
        raise ContractError("mixed features extend aggregate features")
    if len(arma_cst) != len(agg.days):
        raise ContractError("one ARMA prediction (or None) per day is required")
    col = mixed_column(arma_cst, window)
    return FeatureMatrix(agg.days, agg.names + ("arma_cst",), np.column_stack([agg.values, col]), "mixed")


def append_cst_feature(agg: FeatureMatrix, predicted_cst: Sequence) -> FeatureMatrix:
    if agg.kind != "aggregate":
        raise ContractError("the CST column extends aggregate features")
    pred = np.array([np.nan if v is None else float(v) for v in predicted_cst])
    if pred.shape != (len(agg.days),) or np.isnan(pred).any():
        raise DataError("a predicted CST is required for every day")
    return FeatureMatrix(agg.days, agg.names + ("predicted_cst",), np.column_stack([agg.values, pred]), "aggregate+cst")


def align_targets(fm: FeatureMatrix, records: Sequence[CongestionRecord]):
    """Keep the congested days of one segment that also have features.

    Returns (FeatureMatrix restricted to those days, cst array, duration array).
    """
    by_day = {r.day: r for r in records}
    days = [d for d in fm.days if d in by_day and by_day[d].cst is not None]
    sub = fm.rows(days)
    cst = np.array([by_day[d].cst for d in days])
    dur = np.array([by_day[d].duration for d in days])
    return sub, cst, dur


def write_features(fm: FeatureMatrix, path) -> None:
    fm.to_frame().to_csv(path, index=False, float_format=None, lineterminator="\n")


def _infer_kind(names) -> str:
    if names and names[-1] == "arma_cst":
        return "mixed"
    if names and names[-1] == "predicted_cst":
        return "aggregate+cst"
    if names and names[0].startswith("hh_"):
        return "disaggregate"
    return "aggregate"


def read_features(path, kind: str | None = None) -> FeatureMatrix:
    df = pd.read_csv(path, dtype={"day": str}, float_precision="round_trip")
    if df.columns[0] != "day":
        raise DataError(f"{path}: first column must be 'day'")
    names = tuple(df.columns[1:])
    days = tuple(dt.date.fromisoformat(d) for d in df["day"])
    return FeatureMatrix(days, names, df.iloc[:, 1:].to_numpy(dtype=float), kind or _infer_kind(names))

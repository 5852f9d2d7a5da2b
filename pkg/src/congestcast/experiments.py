"""Synthetic-scenario harness shared by the acceptance tests and scripts.

A scenario is generated, clustered with the planted number of patterns, and
each segment's CST is predicted from aggregate features by nested CV. The
historical-mean baseline is scored on the same days.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import historical_mean_cst
from .clustering import fit_patterns
from .congestion import extract_records, records_by_segment
from .data import normalize_panel
from .features import aggregate_features, align_targets
from .regression import fit_full, nested_cv_evaluate, rmse
from .synth import ScenarioSpec, generate


@dataclass
class SegmentOutcome:
    segment_id: str
    n_days: int
    pooled_rmse: float
    model_rmse_vs_hm: float
    hm_rmse: float
    coef: np.ndarray
    contrasts: np.ndarray


@dataclass
class ScenarioOutcome:
    seed: int
    segments: list
    mapping: np.ndarray
    purity: float

    @property
    def max_rmse(self) -> float:
        return max(s.pooled_rmse for s in self.segments)

    @property
    def beats_historical_mean(self) -> bool:
        """Squared errors pooled over segments on days where the baseline exists."""
        model = sum(s.model_rmse_vs_hm**2 * s.n_days for s in self.segments)
        hm = sum(s.hm_rmse**2 * s.n_days for s in self.segments)
        return model < hm

    def sign_mismatches(self, min_effect: float = 0.1) -> list:
        """(segment, pattern, coef, contrast) where a planted contrast of at least ``min_effect`` has the wrong sign."""
        out = []
        for s in self.segments:
            for k, (b, c) in enumerate(zip(s.coef, s.contrasts)):
                if abs(c) >= min_effect and np.sign(b) != np.sign(c):
                    out.append((s.segment_id, k + 1, float(b), float(c)))
        return out


def match_patterns(centroids, templates) -> np.ndarray:
    """Template index for each learned centroid, maximizing total cosine similarity."""
    C = np.asarray(centroids, dtype=float)
    T = np.asarray(templates, dtype=float)
    Cn = C / np.linalg.norm(C, axis=1, keepdims=True)
    Tn = T / np.linalg.norm(T, axis=1, keepdims=True)
    rows, cols = linear_sum_assignment(-(Cn @ Tn.T))
    mapping = np.empty(len(C), dtype=int)
    mapping[rows] = cols
    return mapping


def run_scenario(spec: ScenarioSpec, K: int | None = None, cluster_seed: int = 0, cv_seed: int = 0,
                 outer_folds: int = 3, inner_folds: int = 4) -> ScenarioOutcome:
    ds = generate(spec)
    K = K or spec.K_true
    model = fit_patterns(normalize_panel(ds.panel), K, seed=cluster_seed)
    templates = np.asarray(ds.truth["spec"]["pattern_templates"])
    mapping = match_patterns(model.centroids, templates)
    truth = np.asarray(ds.truth["pattern_assignment"]) - 1
    purity = float(np.mean(mapping[model.labels - 1] == truth))
    coupling = np.asarray(ds.truth["coupling"])
    # share coefficients estimate coupling differences against the dropped (last) pattern
    contrasts = coupling[mapping[:-1]] - coupling[mapping[-1]]

    agg = aggregate_features(model.labels, ds.panel.days, K)
    segments = []
    for seg, recs in records_by_segment(extract_records(ds.series)).items():
        fm, cst, _ = align_targets(agg, recs)
        report = nested_cv_evaluate(fm, cst, outer_folds, inner_folds, seed=cv_seed)
        hm = np.array([np.nan if (v := historical_mean_cst(recs, d)) is None else v for d in fm.days])
        has = ~np.isnan(hm)
        fit = fit_full(fm, cst, inner_folds=inner_folds, seed=cv_seed)
        segments.append(SegmentOutcome(
            seg, int(has.sum()), report.pooled_rmse, rmse(report.predictions[has], cst[has]),
            rmse(hm[has], cst[has]), fit.coef, contrasts,
        ))
    return ScenarioOutcome(spec.seed, segments, mapping, purity)

"""Agreement between LASSO selections on different road segments.

Household sets are compared with the Jaccard coefficient; per-pattern counts
of selected (household, pattern) features with the cosine coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ContractError
from .regression import FittedPredictor


@dataclass(frozen=True)
class SelectionProfile:
    segment_id: str
    selected_households: frozenset
    pattern_counts: np.ndarray


def _parse_name(name: str) -> tuple[str, int]:
    if not name.startswith("hh_") or "_pattern_" not in name:
        raise ContractError(f"{name!r} is not a disaggregate feature name")
    hh, pat = name[3:].rsplit("_pattern_", 1)
    return hh, int(pat)


def selection_profile(model: FittedPredictor, K: int, segment_id: str = "", threshold: float = 0.0) -> SelectionProfile:
    """Households with any coefficient above ``threshold`` in magnitude, and per-pattern counts.

    ``pattern_counts`` has K entries; entry K stays zero because pattern K is
    the dropped reference category.
    """
    if model.feature_kind not in (None, "disaggregate"):
        raise ContractError(f"selection profiles need disaggregate features, got {model.feature_kind}")
    counts = np.zeros(K, dtype=np.int64)
    chosen = set()
    for j in np.flatnonzero(np.abs(model.coef) > threshold):
        hh, pat = _parse_name(model.names[j])
        chosen.add(hh)
        counts[pat - 1] += 1
    return SelectionProfile(segment_id, frozenset(chosen), counts)


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def pairwise_similarity(profiles: Sequence[SelectionProfile]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Symmetric Jaccard (households) and cosine (pattern counts) matrices indexed by segment."""
    if len(profiles) < 2:
        raise ContractError("need at least two selection profiles")
    ids = [p.segment_id for p in profiles]
    n = len(profiles)
    J = np.eye(n)
    C = np.eye(n)
    for i in range(n):
        J[i, i] = jaccard(profiles[i].selected_households, profiles[i].selected_households)
        C[i, i] = cosine(profiles[i].pattern_counts, profiles[i].pattern_counts)
        for k in range(i + 1, n):
            J[i, k] = J[k, i] = jaccard(profiles[i].selected_households, profiles[k].selected_households)
            C[i, k] = C[k, i] = cosine(profiles[i].pattern_counts, profiles[k].pattern_counts)
    return pd.DataFrame(J, index=ids, columns=ids), pd.DataFrame(C, index=ids, columns=ids)


def write_matrix(df: pd.DataFrame, path) -> None:
    df.to_csv(Path(path), index_label="segment_id", lineterminator="\n")

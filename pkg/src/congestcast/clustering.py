"""k-means typical patterns, GAP-statistic choice of K, and the two-season split.

Pattern indices are 1-based everywhere outside this module's internals
(pattern 1 .. pattern K, letters A.. for display).
"""

from __future__ import annotations

import datetime as dt
import json
import string
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import ProfilePanel, TimeGrid
from .errors import ConfigError, ContractError, InfeasibleError


def pattern_letter(index: int) -> str:
    """1 -> 'A', 10 -> 'J'."""
    return string.ascii_uppercase[index - 1]


@dataclass(frozen=True)
class PatternModel:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    seed: int | None
    inertia_history: tuple = ()
    n_iter: int = 0
    converged: bool = True
    households: tuple | None = None
    days: tuple | None = None
    grid: TimeGrid | None = field(default=None, compare=False)
    restart_histories: tuple = field(default=(), compare=False, repr=False)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def T(self) -> int:
        return self.centroids.shape[1]

    def assignment(self) -> dict:
        """(household_id, day) -> pattern; only for models fitted on a panel."""
        if self.households is None:
            raise ContractError("model was not fitted on a panel")
        return {
            (h, d): int(self.labels[i, j])
            for i, h in enumerate(self.households)
            for j, d in enumerate(self.days)
        }

    def to_json(self) -> dict:
        out = {
            "K": self.K,
            "centroids": self.centroids.tolist(),
            "seed": self.seed,
            "inertia": self.inertia,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }
        if self.grid is not None:
            out["grid"] = {
                "interval_minutes": self.grid.interval_minutes,
                "start_minute": self.grid.start_minute,
                "count": self.grid.count,
            }
        return out


def _nearest(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """0-based index of the nearest centroid; ties go to the lowest index."""
    d = np.einsum("ij,ij->i", C, C)[None, :] - 2.0 * (X @ C.T)
    return np.argmin(d, axis=1)


def _inertia(X, C, labels) -> float:
    r = X - C[labels]
    return float(np.einsum("ij,ij->", r, r))


def _centroid_sums(X, labels, K):
    n = X.shape[0]
    onehot = np.zeros((K, n))
    onehot[labels, np.arange(n)] = 1.0
    return onehot @ X, np.bincount(labels, minlength=K)


def _plusplus(X, K, rng) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    d2 = np.sum((X - X[centers[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return X[centers].copy()


def _update(X, labels, K, C_prev):
    sums, counts = _centroid_sums(X, labels, K)
    C = sums / np.maximum(counts, 1)[:, None]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        dist = np.sum((X - C_prev[labels]) ** 2, axis=1)
        farthest = np.argsort(-dist, kind="stable")
        for j, i in zip(empty, farthest):
            C[j] = X[i]
    return C


def _lloyd(X, K, max_iters, rng):
    C = _plusplus(X, K, rng)
    labels = _nearest(X, C)
    history = [_inertia(X, C, labels)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        C = _update(X, labels, K, C)
        new = _nearest(X, C)
        history.append(_inertia(X, C, new))
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    if not converged:
        C = _update(X, labels, K, C)
    return C, labels, _inertia(X, C, labels), history, it, converged


def n_distinct(X) -> int:
    return int(np.unique(np.asarray(X), axis=0).shape[0])


def kmeans(profiles, K: int, restarts: int = 10, max_iters: int = 300, seed: int = 0,
           check_feasible: bool = True) -> PatternModel:
    """Best-of-``restarts`` Lloyd k-means with k-means++ seeding.

    A restart stops when assignments stop changing, so the returned centroids
    are the exact means of their members and every member is nearest its own
    centroid. Empty clusters are re-seeded with the point farthest from its
    centroid.
    """
    X = np.ascontiguousarray(profiles, dtype=float)
    if X.ndim != 2:
        raise ContractError("profiles must be a 2-D array (n, T)")
    if K < 1 or restarts < 1 or max_iters < 1:
        raise ConfigError("K, restarts and max_iters must be positive")
    if check_feasible and K > n_distinct(X):
        raise InfeasibleError(f"K={K} exceeds the number of distinct profiles")
    best = None
    histories = []
    children = np.random.SeedSequence(seed).spawn(restarts)
    for child in children:
        res = _lloyd(X, K, max_iters, np.random.default_rng(child))
        histories.append(tuple(res[3]))
        if best is None or res[2] < best[2]:
            best = res
    C, labels, inertia, history, n_iter, converged = best
    if not converged:
        warnings.warn(f"k-means (K={K}) hit max_iters={max_iters} before assignments settled", stacklevel=2)
    return PatternModel(
        centroids=C, labels=labels + 1, inertia=inertia, seed=seed,
        inertia_history=tuple(history), n_iter=n_iter, converged=converged,
        restart_histories=tuple(histories),
    )


def fit_patterns(panel: ProfilePanel, K: int, restarts: int = 10, max_iters: int = 300,
                 seed: int = 0) -> PatternModel:
    """Cluster all H*D normalized daily profiles of a panel into K patterns.

    All-zero profiles do not take part in the centroid fit; afterwards they are
    assigned to their nearest pattern like any other profile.
    """
    if not panel.normalized:
        raise ContractError("cluster normalized profiles (see normalize_panel)")
    X = panel.flat()
    zero = panel.all_zero.reshape(-1)
    fitted = kmeans(X[~zero], K, restarts=restarts, max_iters=max_iters, seed=seed)
    labels = np.empty(X.shape[0], dtype=np.int64)
    labels[~zero] = fitted.labels
    if zero.any():
        labels[zero] = _nearest(X[zero], fitted.centroids) + 1
    return PatternModel(
        centroids=fitted.centroids, labels=labels.reshape(panel.H, panel.D), inertia=fitted.inertia,
        seed=seed, inertia_history=fitted.inertia_history, n_iter=fitted.n_iter,
        converged=fitted.converged, households=panel.households, days=panel.days, grid=panel.grid,
        restart_histories=fitted.restart_histories,
    )


def assign_patterns(model: PatternModel, panel: ProfilePanel) -> np.ndarray:
    """(H, D) array of 1-based nearest-centroid patterns for every profile in ``panel``."""
    if model.T != panel.T:
        raise ContractError(f"model has T={model.T}, panel has T={panel.T}")
    return (_nearest(panel.flat(), model.centroids) + 1).reshape(panel.H, panel.D)


def assign_vectors(model: PatternModel, X) -> np.ndarray:
    return _nearest(np.atleast_2d(np.asarray(X, dtype=float)), model.centroids) + 1


@dataclass(frozen=True)
class GapCurve:
    k: tuple
    gap: np.ndarray
    s: np.ndarray
    log_w: np.ndarray
    ref_log_w: np.ndarray
    B: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"k": self.k, "gap": self.gap, "s": self.s, "log_w": self.log_w, "ref_log_w": self.ref_log_w}
        )


def _log_w(inertia: float) -> float:
    return float(np.log(max(inertia, np.finfo(float).tiny)))


def gap_select_k(profiles, k_candidates, B: int = 20, seed: int = 0, restarts: int = 10,
                 max_iters: int = 300) -> tuple[GapCurve, int]:
    """GAP statistic with a uniform bounding-box reference.

    Returns the curve and the smallest K with Gap(K) >= Gap(K+1) - s(K+1).
    """
    if B < 2:
        raise ConfigError("GAP needs at least two reference datasets (B >= 2)")
    ks = tuple(sorted(int(k) for k in k_candidates))
    if not ks:
        raise ConfigError("k_candidates is empty")
    X = np.ascontiguousarray(profiles, dtype=float)
    if ks[-1] > n_distinct(X):
        raise InfeasibleError(f"K={ks[-1]} exceeds the number of distinct profiles")
    lo, hi = X.min(axis=0), X.max(axis=0)
    ss = np.random.SeedSequence(seed)
    data_seed, ref_seed = ss.spawn(2)
    fit_seeds = data_seed.generate_state(len(ks))
    log_w = np.array([
        _log_w(kmeans(X, k, restarts, max_iters, int(s), check_feasible=False).inertia)
        for k, s in zip(ks, fit_seeds)
    ])
    ref = np.empty((B, len(ks)))
    for b, child in enumerate(ref_seed.spawn(B)):
        rng = np.random.default_rng(child)
        Xb = lo + (hi - lo) * rng.random(X.shape)
        seeds = rng.integers(0, 2**31 - 1, size=len(ks))
        for j, (k, s) in enumerate(zip(ks, seeds)):
            ref[b, j] = _log_w(kmeans(Xb, k, restarts, max_iters, int(s), check_feasible=False).inertia)
    ref_mean = ref.mean(axis=0)
    sd = np.sqrt(np.mean((ref - ref_mean) ** 2, axis=0))
    s = sd * np.sqrt(1.0 + 1.0 / B)
    gap = ref_mean - log_w
    curve = GapCurve(ks, gap, s, log_w, ref_mean, B)
    for j in range(len(ks) - 1):
        if gap[j] >= gap[j + 1] - s[j + 1]:
            return curve, ks[j]
    warnings.warn(f"GAP criterion never satisfied over K={ks}; returning the largest candidate", stacklevel=2)
    return curve, ks[-1]


def _night_share(profiles: np.ndarray, grid: TimeGrid, night=(0, 240)) -> np.ndarray:
    minutes = grid.minutes()
    mask = (minutes >= night[0]) & (minutes < night[1])
    if not mask.any():
        raise ContractError("grid does not overlap the 00:00-04:00 night window")
    total = profiles.sum(axis=-1)
    return np.divide(profiles[..., mask].sum(axis=-1), total, out=np.zeros_like(total), where=total > 0)


def seasonal_split(panel: ProfilePanel, seed: int = 0, restarts: int = 10) -> dict:
    """Split days into 'summer' and 'winter' by 2-means on per-day mean profiles.

    Summer is the cluster whose days spend the larger share of their usage in
    the 00:00-04:00 night window.
    """
    if panel.D < 2:
        raise InfeasibleError("seasonal split needs at least two days")
    day_means = panel.values.mean(axis=0)
    if n_distinct(day_means) < 2:
        warnings.warn("all day-mean profiles are identical; seasonal split is degenerate", stacklevel=2)
        labels = np.zeros(panel.D, dtype=np.int64)
        labels[0] = 1
    else:
        labels = kmeans(day_means, 2, restarts=restarts, seed=seed).labels - 1
    share = _night_share(day_means, panel.grid)
    m = [share[labels == c].mean() for c in (0, 1)]
    summer = 0 if m[0] >= m[1] else 1
    return {day: ("summer" if labels[j] == summer else "winter") for j, day in enumerate(panel.days)}


def save_model(model: PatternModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=2) + "\n")


def load_centroids(path) -> tuple[np.ndarray, dict]:
    meta = json.loads(Path(path).read_text())
    return np.asarray(meta["centroids"], dtype=float), meta


def write_assignments(model: PatternModel, path) -> None:
    lines = ["household_id,day,pattern"]
    for i, h in enumerate(model.households):
        for j, d in enumerate(model.days):
            lines.append(f"{h},{d.isoformat()},{int(model.labels[i, j])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_assignments(path) -> tuple[tuple, tuple, np.ndarray]:
    """Returns (households, days, (H, D) label array)."""
    df = pd.read_csv(path, dtype={"household_id": str, "day": str, "pattern": int})
    households = tuple(dict.fromkeys(df["household_id"]))
    days = tuple(dt.date.fromisoformat(d) for d in dict.fromkeys(df["day"]))
    table = df.pivot(index="household_id", columns="day", values="pattern")
    table = table.loc[list(households), [d.isoformat() for d in days]]
    return households, days, table.to_numpy(dtype=np.int64)

"""OLS and LASSO linear predictors with two-level cross-validation.

The LASSO objective is the usual squared-loss form on standardized columns,

    (1 / 2n) * ||y - b0 - X~ b||^2 + alpha * ||b||_1,

with an unpenalized intercept. Coefficients are reported back in the original
feature units. Zero-variance columns are skipped and keep a zero coefficient.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import stats

from .errors import CongestcastError, ContractError, DataError


class LeakageError(CongestcastError):
    exit_code = 4


def rmse(pred, actual) -> float:
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ContractError("rmse needs two non-empty arrays of equal length")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def mae(pred, actual) -> float:
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ContractError("mae needs two non-empty arrays of equal length")
    return float(np.mean(np.abs(pred - actual)))


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ContractError("threshold must be non-negative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def _as_xy(X, y):
    names, kind = None, None
    if hasattr(X, "values") and hasattr(X, "names"):
        names, kind = tuple(X.names), X.kind
        X = X.values
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ContractError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] == 0:
        raise DataError("no rows to fit")
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return X, y, names, kind


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    scales: np.ndarray
    usable: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        means = X.mean(axis=0)
        scales = X.std(axis=0)
        usable = scales > 1e-12 * np.maximum(1.0, np.abs(means))
        return cls(means, np.where(usable, scales, 1.0), usable)

    def transform(self, X):
        Z = (X - self.means) / self.scales
        Z[:, ~self.usable] = 0.0
        return Z


@dataclass(frozen=True)
class FittedPredictor:
    coef: np.ndarray
    intercept: float
    alpha: float
    names: tuple
    means: np.ndarray
    scales: np.ndarray
    method: str = "lasso"
    target: str = "cst"
    feature_kind: str | None = None
    converged: bool = True
    n_passes: int = 0
    pvalues: np.ndarray | None = field(default=None, compare=False)
    objective_trace: tuple = field(default=(), compare=False, repr=False)

    def predict(self, X) -> np.ndarray:
        if hasattr(X, "values") and hasattr(X, "names"):
            X = X.values
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    @property
    def standardized_coef(self) -> np.ndarray:
        return self.coef * self.scales

    def support(self, threshold: float = 0.0) -> np.ndarray:
        return np.flatnonzero(np.abs(self.coef) > threshold)

    def to_json(self) -> dict:
        out = {
            "method": self.method,
            "target": self.target,
            "feature_kind": self.feature_kind,
            "alpha": self.alpha,
            "intercept": self.intercept,
            "names": list(self.names),
            "coefficients": self.coef.tolist(),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "converged": self.converged,
            "n_passes": self.n_passes,
        }
        if self.pvalues is not None:
            out["pvalues"] = [None if np.isnan(v) else float(v) for v in self.pvalues]
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def fit_ols(X, y, target: str = "cst") -> FittedPredictor:
    """Least squares with an unpenalized intercept; minimum-norm when rank-deficient.

    Classical normal-theory p-values are attached for each coefficient.
    """
    X, y, names, kind = _as_xy(X, y)
    n, p = X.shape
    if n < 2:
        raise DataError("OLS needs at least two rows")
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    beta, _, rank, sv = np.linalg.lstsq(Xc, y - ym, rcond=None)
    if rank < p:
        warnings.warn(f"design has rank {rank} < {p}; returning the minimum-norm solution", stacklevel=2)
    resid = y - ym - Xc @ beta
    dof = n - rank - 1
    pvalues = np.full(p, np.nan)
    if dof > 0:
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * np.linalg.pinv(Xc.T @ Xc)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            tstat = beta / se
        ok = se > 0
        pvalues[ok] = 2.0 * stats.t.sf(np.abs(tstat[ok]), dof)
    scales = X.std(axis=0)
    return FittedPredictor(
        coef=beta, intercept=float(ym - xm @ beta), alpha=0.0, names=names, means=xm,
        scales=np.where(scales > 0, scales, 1.0), method="ols", target=target, feature_kind=kind,
        pvalues=pvalues,
    )


@numba.njit(cache=True, nogil=True)
def _cd_pass(Z, r, beta, usable, alpha, inv_n, active_only):
    """One cyclic sweep; returns the largest coefficient change."""
    n, p = Z.shape
    max_delta = 0.0
    for j in range(p):
        if not usable[j] or (active_only and beta[j] == 0.0):
            continue
        g = 0.0
        for i in range(n):
            g += Z[i, j] * r[i]
        g = g * inv_n + beta[j]
        if g > alpha:
            new = g - alpha
        elif g < -alpha:
            new = g + alpha
        else:
            new = 0.0
        d = new - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * Z[i, j]
            beta[j] = new
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@numba.njit(cache=True, nogil=True)
def _kkt_worst(Z, r, beta, usable, alpha, inv_n):
    n, p = Z.shape
    worst = 0.0
    for j in range(p):
        if not usable[j]:
            continue
        g = 0.0
        for i in range(n):
            g += Z[i, j] * r[i]
        g *= inv_n
        if beta[j] > 0.0:
            v = abs(g - alpha)
        elif beta[j] < 0.0:
            v = abs(g + alpha)
        else:
            v = abs(g) - alpha
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True, nogil=True)
def _cd_kernel(Z, r, beta, usable, alpha, tol, max_passes, trace):
    """Cyclic coordinate descent on standardized columns (each has z'z/n == 1).

    Updates ``beta`` and the residual ``r`` in place. After each full sweep the
    nonzero coefficients are swept on their own until they settle. Stops once
    a full sweep moves no coefficient by ``tol`` or more and the KKT
    conditions hold within ``tol``. Every sweep counts as a pass and appends
    the objective to ``trace``. Returns (passes, converged).
    """
    n, p = Z.shape
    inv_n = 1.0 / n
    it = 0
    full = True
    while it < max_passes:
        max_delta = _cd_pass(Z, r, beta, usable, alpha, inv_n, not full)
        if trace.shape[0] > it:
            obj = 0.0
            for i in range(n):
                obj += r[i] * r[i]
            l1 = 0.0
            for j in range(p):
                l1 += abs(beta[j])
            trace[it] = 0.5 * obj * inv_n + alpha * l1
        it += 1
        if max_delta < tol:
            if full and _kkt_worst(Z, r, beta, usable, alpha, inv_n) < tol:
                return it, True
            full = True
        else:
            full = False
    return max_passes, False


def alpha_max(X, y) -> float:
    """Smallest alpha whose LASSO solution is all zeros."""
    X, y, _, _ = _as_xy(X, y)
    st = Standardizer.fit(X)
    return _alpha_max_std(np.asfortranarray(st.transform(X)), y - y.mean())


def _alpha_max_std(Z, r) -> float:
    return float(np.max(np.abs(Z.T @ r)) / len(r)) if Z.shape[1] else 0.0


def alpha_grid(X, y, n_alphas: int = 50, eps: float = 1e-4) -> np.ndarray:
    amax = alpha_max(X, y)
    if amax <= 0:
        return np.array([0.0])
    return amax * np.logspace(0.0, np.log10(eps), n_alphas)


def lasso_path(X, y, alphas, tol: float = 1e-9, max_passes: int = 100_000, target: str = "cst",
               track_objective: bool = False) -> list[FittedPredictor]:
    """LASSO fits along ``alphas`` (solved in decreasing order with warm starts)."""
    X, y, names, kind = _as_xy(X, y)
    alphas = np.asarray(alphas, dtype=float)
    if (alphas < 0).any():
        raise ContractError("alpha must be non-negative")
    st = Standardizer.fit(X)
    Z = np.asfortranarray(st.transform(X))
    ym = y.mean()
    r = y - ym
    beta = np.zeros(X.shape[1])
    amax = _alpha_max_std(Z, r)
    out = {}
    for a in sorted(set(alphas.tolist()), reverse=True):
        trace = np.empty(max_passes if track_objective else 0)
        if a >= amax:
            # the zero vector is the exact solution here; skip the sweeps so rounding cannot leak in
            beta[:] = 0.0
            r = y - ym
            passes, ok = 0, True
            trace = np.full(1 if track_objective else 0, 0.5 * (r @ r) / len(y))
        else:
            passes, ok = _cd_kernel(Z, r, beta, st.usable, a, tol, max_passes, trace)
        coef = np.where(st.usable, beta / st.scales, 0.0)
        out[a] = FittedPredictor(
            coef=coef, intercept=float(ym - st.means @ coef), alpha=a, names=names, means=st.means,
            scales=st.scales, method="lasso", target=target, feature_kind=kind, converged=bool(ok),
            n_passes=int(passes), objective_trace=tuple(trace[: min(max(passes, 1), len(trace))]),
        )
    return [out[a] for a in alphas.tolist()]


def fit_lasso(X, y, alpha: float, tol: float = 1e-9, max_passes: int = 100_000, target: str = "cst",
              track_objective: bool = False) -> FittedPredictor:
    fit = lasso_path(X, y, [alpha], tol, max_passes, target, track_objective)[0]
    if not fit.converged:
        warnings.warn(f"LASSO did not converge within {max_passes} passes (alpha={alpha:g})", stacklevel=2)
    return fit


def kkt_violation(fit: FittedPredictor, X, y) -> float:
    """Largest KKT residual of a LASSO fit, in standardized units."""
    X, y, _, _ = _as_xy(X, y)
    st = Standardizer.fit(X)
    Z = st.transform(X)
    b = fit.standardized_coef
    r = y - y.mean() - Z @ b
    g = Z.T @ r / len(y)
    v = np.where(b > 0, np.abs(g - fit.alpha), np.where(b < 0, np.abs(g + fit.alpha), np.abs(g) - fit.alpha))
    v = v[st.usable]
    return float(max(v.max(initial=0.0), 0.0))


def lasso_objective(fit: FittedPredictor, X, y) -> float:
    X, y, _, _ = _as_xy(X, y)
    r = y - fit.predict(X)
    return float(0.5 * r @ r / len(y) + fit.alpha * np.abs(fit.standardized_coef).sum())


# --------------------------------------------------------------------------- CV

Augment = Callable[[np.ndarray, np.ndarray], tuple]


def kfold_indices(rows: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    rows = np.asarray(rows)
    if len(rows) < k:
        raise DataError(f"{len(rows)} rows cannot be split into {k} folds")
    perm = rows[rng.permutation(len(rows))]
    return [np.sort(f) for f in np.array_split(perm, k)]


def _design(X, train, evaluate, augment):
    if augment is None:
        return X[train], X[evaluate]
    return augment(train, evaluate)


@dataclass(frozen=True)
class AlphaSelection:
    alpha: float
    alphas: np.ndarray
    cv_rmse: np.ndarray
    folds: tuple


def select_alpha(X, y, alphas=None, inner_folds: int = 4, seed: int = 0, rows=None,
                 augment: Augment | None = None, tol: float = 1e-9) -> AlphaSelection:
    """Pick alpha by minimum mean validation RMSE over ``inner_folds`` folds of ``rows``.

    Exact ties (within 1e-12 relative) go to the larger alpha.
    """
    X, y, _, _ = _as_xy(X, y)
    rows = np.arange(len(y)) if rows is None else np.asarray(rows)
    if alphas is None:
        Xtr, _ = _design(X, rows, rows, augment)
        alphas = alpha_grid(Xtr, y[rows])
    alphas = np.sort(np.asarray(alphas, dtype=float))[::-1]
    if alphas.size == 0:
        raise ContractError("alpha grid is empty")
    folds = kfold_indices(rows, inner_folds, np.random.default_rng(seed))
    errs = np.zeros((len(folds), len(alphas)))
    for f, val in enumerate(folds):
        train = np.setdiff1d(rows, val)
        Xtr, Xval = _design(X, train, val, augment)
        path = lasso_path(Xtr, y[train], alphas, tol=tol)
        for a, fit in enumerate(path):
            errs[f, a] = rmse(fit.predict(Xval), y[val])
    cv = errs.mean(axis=0)
    best = cv.min()
    winner = int(np.flatnonzero(cv <= best + 1e-12 * abs(best))[0])
    return AlphaSelection(float(alphas[winner]), alphas, cv, tuple(folds))


@dataclass
class FoldResult:
    train: np.ndarray
    test: np.ndarray
    inner: tuple
    alpha: float
    rmse: float
    mae: float
    degenerate: bool
    model: FittedPredictor | None = None


@dataclass
class EvaluationReport:
    folds: list
    predictions: np.ndarray
    actual: np.ndarray
    mode: str = "nested-cv"
    method: str = "lasso"
    days: tuple | None = None

    @property
    def fold_rmse(self) -> list[float]:
        return [f.rmse for f in self.folds]

    @property
    def fold_mae(self) -> list[float]:
        return [f.mae for f in self.folds]

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.fold_rmse))

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.fold_mae))

    @property
    def tested(self) -> np.ndarray:
        return np.concatenate([f.test for f in self.folds])

    @property
    def pooled_rmse(self) -> float:
        t = self.tested
        return rmse(self.predictions[t], self.actual[t])

    @property
    def pooled_mae(self) -> float:
        t = self.tested
        return mae(self.predictions[t], self.actual[t])

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "method": self.method,
            "n": int(len(self.actual)),
            "pooled_rmse": self.pooled_rmse,
            "pooled_mae": self.pooled_mae,
            "mean_rmse": self.mean_rmse,
            "mean_mae": self.mean_mae,
            "folds": [
                {
                    "n_train": int(len(f.train)),
                    "n_test": int(len(f.test)),
                    "alpha": f.alpha,
                    "rmse": f.rmse,
                    "mae": f.mae,
                    "degenerate": f.degenerate,
                    "converged": True if f.model is None else bool(f.model.converged),
                }
                for f in self.folds
            ],
        }


def audit_folds(report: EvaluationReport, n: int) -> None:
    """Raise LeakageError unless every split is clean."""
    seen = []
    for k, f in enumerate(report.folds):
        train, test = set(f.train.tolist()), set(f.test.tolist())
        if train & test:
            raise LeakageError(f"fold {k}: training and test days overlap")
        if not train | test <= set(range(n)):
            raise LeakageError(f"fold {k}: index out of range")
        if f.inner:
            inner = [set(v.tolist()) for v in f.inner]
            union = set().union(*inner)
            if union != train or sum(len(v) for v in inner) != len(train):
                raise LeakageError(f"fold {k}: inner folds do not partition the outer training set")
        seen.extend(test)
    if report.mode == "nested-cv" and sorted(seen) != list(range(n)):
        raise LeakageError("outer test folds do not partition the data")


def _fit_fold(X, y, train, test, method, inner_folds, alphas, seed, augment, target):
    inner = ()
    if method == "ols":
        Xtr, Xte = _design(X, train, test, augment)
        model = fit_ols(Xtr, y[train], target=target)
        alpha = 0.0
    else:
        sel = select_alpha(X, y, alphas, inner_folds, seed, rows=train, augment=augment)
        alpha, inner = sel.alpha, sel.folds
        Xtr, Xte = _design(X, train, test, augment)
        model = fit_lasso(Xtr, y[train], alpha, target=target)
    pred = model.predict(Xte)
    yt = y[test]
    return FoldResult(train, test, inner, alpha, rmse(pred, yt), mae(pred, yt),
                      bool(np.all(yt == yt[0])), model), pred


def nested_cv_evaluate(X, y, outer_folds: int = 3, inner_folds: int = 4, alphas=None, seed: int = 0,
                       method: str = "lasso", augment: Augment | None = None, target: str = "cst",
                       days: Sequence | None = None) -> EvaluationReport:
    """Outer k-fold performance estimate wrapping inner k-fold alpha selection.

    ``augment(train_idx, eval_idx) -> (X_train, X_eval)`` builds fold-specific
    designs from training rows only; it is applied at both levels.
    """
    X, y, _, _ = _as_xy(X, y)
    n = len(y)
    if n < outer_folds:
        raise DataError(f"{n} rows cannot be split into {outer_folds} outer folds")
    outer_seed, *fold_seeds = np.random.SeedSequence(seed).spawn(outer_folds + 1)
    tests = kfold_indices(np.arange(n), outer_folds, np.random.default_rng(outer_seed))
    preds = np.full(n, np.nan)
    folds = []
    for test, fs in zip(tests, fold_seeds):
        train = np.setdiff1d(np.arange(n), test)
        res, pred = _fit_fold(X, y, train, test, method, inner_folds, alphas,
                              int(fs.generate_state(1)[0]), augment, target)
        preds[test] = pred
        folds.append(res)
    report = EvaluationReport(folds, preds, y.copy(), "nested-cv", method, None if days is None else tuple(days))
    audit_folds(report, n)
    return report


def fixed_split_evaluate(X, y, train_fraction: float = 60 / 79, inner_folds: int = 4, alphas=None,
                         seed: int = 0, method: str = "lasso", augment: Augment | None = None,
                         target: str = "cst", days: Sequence | None = None) -> EvaluationReport:
    """One random train/test split (60 of 79 days by default) with inner-CV alpha selection."""
    X, y, _, _ = _as_xy(X, y)
    n = len(y)
    split_seed, fit_seed = np.random.SeedSequence(seed).spawn(2)
    perm = np.random.default_rng(split_seed).permutation(n)
    n_train = int(round(train_fraction * n))
    if not 0 < n_train < n:
        raise DataError(f"cannot split {n} rows with train fraction {train_fraction}")
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    res, pred = _fit_fold(X, y, train, test, method, inner_folds, alphas,
                          int(fit_seed.generate_state(1)[0]), augment, target)
    preds = np.full(n, np.nan)
    preds[test] = pred
    report = EvaluationReport([res], preds, y.copy(), "fixed-split", method, None if days is None else tuple(days))
    audit_folds(report, n)
    return report


def fit_full(X, y, method: str = "lasso", inner_folds: int = 4, alphas=None, seed: int = 0,
             target: str = "cst") -> FittedPredictor:
    """Predictor fitted on every day (alpha still chosen by inner CV) for interpretation."""
    if method == "ols":
        return fit_ols(X, y, target=target)
    sel = select_alpha(X, y, alphas, inner_folds, seed)
    return fit_lasso(X, y, sel.alpha, target=target)


def write_predictions(report: EvaluationReport, path, days=None) -> None:
    days = days if days is not None else report.days
    fold_of = np.full(len(report.actual), -1)
    for k, f in enumerate(report.folds):
        fold_of[f.test] = k
    lines = ["day,fold,actual,predicted"]
    for i, (a, p) in enumerate(zip(report.actual, report.predictions)):
        day = days[i].isoformat() if days is not None else str(i)
        pred = "" if np.isnan(p) else repr(float(p))
        lines.append(f"{day},{fold_of[i]},{float(a)!r},{pred}")
    Path(path).write_text("\n".join(lines) + "\n")

"""Traffic-only baselines: per-day ARMA forecasting and the historical-mean CST.

ARMA(p, q) is fitted by conditional Gaussian likelihood

    X_t = c + e_t + sum_i phi_i X_{t-i} + sum_j theta_j e_{t-j}

conditioning on the first observations and zero pre-sample innovations.
Hannan-Rissanen regressions give the starting point; BFGS refines it in a
parametrization (partial autocorrelations through tanh) that keeps every
candidate stationary and invertible.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from .congestion import CongestionParams, CongestionRecord, congested_mask, cst_index, fill_short_gaps
from .data import TimeGrid, _parse_clock
from .errors import ContractError, FitError


class SeriesTooShort(FitError):
    pass


@dataclass(frozen=True)
class ArmaModel:
    p: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    const: float
    sigma2: float
    loglik: float
    aic: float
    nobs: int

    @property
    def order(self) -> tuple[int, int]:
        return self.p, self.q

    @property
    def mean(self) -> float:
        """Unconditional mean c / (1 - sum(phi))."""
        return self.const / (1.0 - float(np.sum(self.ar)))


def _pacf_to_coef(r: np.ndarray) -> np.ndarray:
    """Durbin-Levinson map from partial autocorrelations in (-1, 1) to AR coefficients."""
    phi = np.zeros(len(r))
    for k, a in enumerate(r):
        phi[:k] = phi[:k] - a * phi[:k][::-1]
        phi[k] = a
    return phi


def _coef_to_pacf(phi: np.ndarray) -> np.ndarray:
    phi = np.array(phi, dtype=float)
    r = np.zeros(len(phi))
    for k in range(len(phi) - 1, -1, -1):
        a = phi[k]
        if abs(a) >= 1.0:
            raise ValueError("not stationary")
        r[k] = a
        if k:
            phi[:k] = (phi[:k] + a * phi[:k][::-1]) / (1.0 - a * a)
    return r


def _to_unconstrained(coef: np.ndarray, sign: float) -> np.ndarray:
    try:
        r = _coef_to_pacf(sign * coef)
    except ValueError:
        r = np.zeros(len(coef))
    return np.arctanh(np.clip(r, -0.95, 0.95))


def _unpack(u, p, q):
    c = u[0]
    ar = _pacf_to_coef(np.tanh(u[1 : 1 + p]))
    ma = -_pacf_to_coef(np.tanh(u[1 + p : 1 + p + q]))
    return c, ar, ma


def _residuals(x, c, ar, ma, start):
    """Conditional innovations e_t for t = start .. n-1."""
    p = len(ar)
    w = x[start:] - c
    for i in range(1, p + 1):
        w = w - ar[i - 1] * x[start - i : len(x) - i]
    if len(ma):
        w = signal.lfilter([1.0], np.concatenate([[1.0], ma]), w)
    return w


def is_stationary(ar) -> bool:
    if len(ar) == 0:
        return True
    roots = np.roots(np.concatenate([-np.asarray(ar)[::-1], [1.0]]))
    return bool(np.all(np.abs(roots) > 1.0 + 1e-8))


def _ols(A, b):
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return coef


def _lagged(x, lags, start):
    return np.column_stack([x[start - i : len(x) - i] for i in range(1, lags + 1)]) if lags else np.empty((len(x) - start, 0))


def hannan_rissanen(x, p, q):
    """Two-stage regression estimates (c, ar, ma) used as the optimizer's start."""
    n = len(x)
    if q == 0:
        A = np.column_stack([np.ones(n - p), _lagged(x, p, p)])
        coef = _ols(A, x[p:])
        return coef[0], coef[1:], np.zeros(0)
    m = min(max(p + q + 4, int(10 * math.log10(n))), n // 3)
    A = np.column_stack([np.ones(n - m), _lagged(x, m, m)])
    e = np.zeros(n)
    e[m:] = x[m:] - A @ _ols(A, x[m:])
    s = m + max(p, q)
    A = np.column_stack([np.ones(n - s), _lagged(x, p, s), _lagged(e, q, s)])
    coef = _ols(A, x[s:])
    return coef[0], coef[1 : 1 + p], coef[1 + p :]


def fit_arma(series, p: int, q: int, start: int | None = None) -> ArmaModel:
    """Conditional maximum-likelihood ARMA(p, q).

    ``start`` (default p) is the number of leading observations conditioned on;
    order selection passes a common value so likelihoods are comparable.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    start = p if start is None else start
    if start < p:
        raise ContractError("start must be at least p")
    if n < 10 * (p + q + 1):
        raise SeriesTooShort(f"ARMA({p},{q}) needs at least {10 * (p + q + 1)} observations, got {n}")
    if not np.isfinite(x).all():
        raise ContractError("series contains missing values")
    m = n - start
    mu, sd = x.mean(), x.std()
    if sd == 0.0:
        if p or q:
            raise FitError("constant series: only ARMA(0,0) is identifiable")
        return ArmaModel(0, 0, np.zeros(0), np.zeros(0), float(mu), 0.0, math.inf, -math.inf, m)
    z = (x - mu) / sd

    c0, ar0, ma0 = hannan_rissanen(z, p, q)
    u0 = np.concatenate([[c0], _to_unconstrained(ar0, 1.0), _to_unconstrained(ma0, -1.0)])

    def objective(u):
        c, ar, ma = _unpack(u, p, q)
        e = _residuals(z, c, ar, ma, start)
        ss = float(e @ e)
        if not np.isfinite(ss) or ss <= 0:
            return 1e300
        return 0.5 * m * math.log(ss / m)

    f0 = objective(u0)
    if p + q:
        # line-search probes can overflow; the objective already maps those to a huge value
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.minimize(objective, u0, method="BFGS", options={"gtol": 1e-7, "maxiter": 2000})
        u = res.x if np.isfinite(res.fun) and res.fun <= f0 else u0
    else:
        u = u0
    c, ar, ma = _unpack(u, p, q)
    e = _residuals(z, c, ar, ma, start)
    s2 = float(e @ e) / m
    if not np.isfinite(s2) or s2 <= 0:
        raise FitError(f"ARMA({p},{q}) optimization failed")
    if not is_stationary(ar):
        raise FitError(f"ARMA({p},{q}) optimum is not stationary")
    sigma2 = s2 * sd * sd
    const = mu * (1.0 - ar.sum()) + sd * c
    loglik = -0.5 * m * (math.log(2 * math.pi * sigma2) + 1.0)
    aic = 2 * (p + q + 2) - 2 * loglik
    return ArmaModel(p, q, ar, ma, float(const), sigma2, loglik, aic, m)


def select_order_aic(series, p_max: int = 4, q_max: int = 4, orders: Sequence | None = None) -> ArmaModel:
    """Minimum-AIC model over the (p, q) grid; fits that fail are skipped.

    All candidates condition on the same leading observations. AIC ties go to
    the smaller p + q, then the smaller p.
    """
    x = np.asarray(series, dtype=float)
    grid = list(orders) if orders is not None else [(p, q) for p in range(p_max + 1) for q in range(q_max + 1)]
    feasible = [(p, q) for p, q in grid if len(x) >= 10 * (p + q + 1)]
    if not feasible:
        raise SeriesTooShort(f"series of length {len(x)} is too short for every candidate order")
    start = max(p for p, _ in feasible)
    best, errors = None, []
    for p, q in sorted(feasible, key=lambda o: (o[0] + o[1], o[0])):
        try:
            m = fit_arma(x, p, q, start=start)
        except FitError as exc:
            errors.append(f"({p},{q}): {exc}")
            continue
        if best is None or m.aic < best.aic:
            best = m
    if best is None:
        raise FitError("every ARMA fit failed: " + "; ".join(errors))
    return best


def forecast(model: ArmaModel, history, horizon: int) -> np.ndarray:
    """Iterated conditional-mean forecasts; future innovations are zero."""
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    x = np.asarray(history, dtype=float)
    p, q = model.p, model.q
    if len(x) < p:
        raise ContractError(f"history shorter than the AR order {p}")
    e = np.zeros(len(x))
    if q and len(x) > p:
        e[p:] = _residuals(x, model.const, model.ar, model.ma, p)
    xs = list(x)
    es = list(e)
    out = np.empty(horizon)
    for h in range(horizon):
        v = model.const
        for i in range(1, p + 1):
            v += model.ar[i - 1] * xs[-i]
        for j in range(1, q + 1):
            v += model.ma[j - 1] * es[-j]
        xs.append(v)
        es.append(0.0)
        out[h] = v
    return out


@dataclass(frozen=True)
class ArmaCstPrediction:
    cst: float | None
    order: tuple | None
    diagnostic: str = ""


def predict_cst_arma(day_times, fftt: float, cutoff="06:00", grid: TimeGrid | None = None,
                     params: CongestionParams = CongestionParams(), p_max: int = 4,
                     q_max: int = 4) -> ArmaCstPrediction:
    """CST predicted from the day's travel times observed before ``cutoff``.

    The AIC-chosen ARMA model forecasts through the end of the search window;
    the congestion conditions are then applied to the observed-then-forecast
    trajectory. Returns ``cst=None`` when no congestion is predicted or the
    fit fails (the reason is kept in ``diagnostic``).
    """
    grid = grid or TimeGrid.full_day()
    times = np.asarray(day_times, dtype=float)
    cut = grid.index_of(_parse_clock(cutoff)) if _parse_clock(cutoff) < grid.end_minute else grid.count
    if cut is None:
        raise ContractError(f"cutoff {cutoff} is not on the grid")
    lo, hi = params.window_minutes()
    i0 = max(0, math.ceil((lo - grid.start_minute) / grid.interval_minutes))
    i1 = min(grid.count, math.ceil((hi - grid.start_minute) / grid.interval_minutes))
    end = min(grid.count, i1 + params.persistence - 1)

    hist = fill_short_gaps(times[:cut], max_gap=cut)
    valid = np.flatnonzero(~np.isnan(hist))
    if valid.size == 0:
        return ArmaCstPrediction(None, None, "no observations before cutoff")
    hist = hist[valid[0] :]
    try:
        model = select_order_aic(hist, p_max, q_max)
    except FitError as exc:
        return ArmaCstPrediction(None, None, f"fit failed: {exc}")
    horizon = end - cut
    traj = np.full(grid.count, np.nan)
    traj[:cut] = times[:cut]
    if horizon > 0:
        traj[cut:end] = forecast(model, hist, horizon)
    mask = congested_mask(traj, fftt, params.ratio)
    k = cst_index(mask, i0, i1, params.persistence)
    return ArmaCstPrediction(None if k is None else grid.hour_of(k), model.order, "")


def historical_mean(records: Sequence[CongestionRecord], day: dt.date, lookback: int = 5,
                    field: str = "cst") -> float | None:
    """Mean of ``field`` over the previous ``lookback`` weekday records; days without a value are skipped."""
    if field not in ("cst", "duration"):
        raise ContractError(f"unknown record field {field!r}")
    prior = [r for r in records if r.day < day and r.day.weekday() < 5]
    prior.sort(key=lambda r: r.day)
    vals = [getattr(r, field) for r in prior[-lookback:] if getattr(r, field) is not None]
    return float(np.mean(vals)) if vals else None


def historical_mean_cst(records: Sequence[CongestionRecord], day: dt.date, lookback: int = 5) -> float | None:
    """Mean CST over the previous ``lookback`` weekdays in ``records``; days without a CST are skipped."""
    return historical_mean(records, day, lookback, "cst")


def simulate_arma(ar, ma, n: int, const: float = 0.0, sigma: float = 1.0, seed=0, burn: int = 500) -> np.ndarray:
    """Sample path of an ARMA process (for experiments and tests)."""
    rng = np.random.default_rng(seed)
    e = sigma * rng.standard_normal(n + burn)
    b = np.concatenate([[1.0], np.asarray(ma, dtype=float)])
    a = np.concatenate([[1.0], -np.asarray(ar, dtype=float)])
    x = signal.lfilter(b, a, e)
    mean = const / (1.0 - float(np.sum(ar)))
    return x[burn:] + mean

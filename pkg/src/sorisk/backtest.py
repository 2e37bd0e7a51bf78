"""Rolling out-of-sample evaluation of risk forecasts via bias statistics.

A forecast made with data through period t is always scored against the
return of period t + 1.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .covariance import EffectiveWindowSpec, ReturnsPanel, effective_t
from .errors import InsufficientDataError, ParameterError
from .kernels import rolling_forecasts, trailing_std
from .second_order import asset_correction_factor, factor_correction_factor

FULL_SAMPLE = None
TRAILING_WINDOW = 52


@dataclass(frozen=True)
class TrimRule:
    """Outlier handling: clamp to bounds, or drop offending entries.

    ``cross_sectional_sigma_cap`` additionally treats values more than that
    many cross-sectional standard deviations from the period mean as
    outliers, evaluated after the range rule.
    """

    mode: str
    lower: float
    upper: float
    cross_sectional_sigma_cap: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("clamp", "drop"):
            raise ParameterError(f"trim mode must be 'clamp' or 'drop', got {self.mode!r}")
        if not self.lower < self.upper:
            raise ParameterError("trim lower bound must be below upper bound")
        if self.cross_sectional_sigma_cap is not None and not self.cross_sectional_sigma_cap > 0:
            raise ParameterError("cross-sectional cap must be positive")


def apply_trim(panel: ReturnsPanel, rule: TrimRule) -> ReturnsPanel:
    values = panel.values.copy()
    valid = np.ones_like(values, dtype=bool) if panel.valid is None else panel.valid.copy()
    if rule.mode == "clamp":
        np.clip(values, rule.lower, rule.upper, out=values)
    else:
        valid &= (values >= rule.lower) & (values <= rule.upper)
    cap = rule.cross_sectional_sigma_cap
    if cap is not None:
        for t in range(values.shape[1]):
            ok = valid[:, t]
            if ok.sum() < 2:
                continue
            col = values[ok, t]
            mu, sd = col.mean(), col.std(ddof=1)
            if sd == 0:
                continue
            lo, hi = mu - cap * sd, mu + cap * sd
            if rule.mode == "clamp":
                values[ok, t] = np.clip(col, lo, hi)
            else:
                out = ok & ((values[:, t] < lo) | (values[:, t] > hi))
                valid[out, t] = False
    mask = None if valid.all() and panel.valid is None else valid
    return ReturnsPanel(panel.assets, panel.dates, values, mask)


@dataclass(frozen=True)
class BiasStatSeries:
    """Forecast stdevs and next-period realized returns for one forecaster.

    Arrays have time on axis 0 and, for ensembles, portfolios on axis 1.
    ``values`` holds the trailing bias statistic (NaN until the window fills).
    """

    forecaster: str
    timestamps: tuple
    forecast_stdevs: np.ndarray
    realized_next_returns: np.ndarray
    trailing_window: int
    values: np.ndarray

    @property
    def standardized(self):
        return self.realized_next_returns / self.forecast_stdevs


def make_series(forecaster, timestamps, forecast_stdevs, realized, trailing_window=TRAILING_WINDOW,
                backend=None):
    sd = np.asarray(forecast_stdevs, dtype=float)
    if np.any(sd[np.isfinite(sd)] <= 0):
        raise ParameterError("forecast standard deviations must be positive")
    z = np.asarray(realized, dtype=float) / sd
    trailing = trailing_std(z, trailing_window, backend=backend) if len(z) >= trailing_window \
        else np.full(z.shape, np.nan)
    return BiasStatSeries(forecaster, tuple(timestamps), sd, np.asarray(realized, dtype=float),
                          int(trailing_window), trailing)


def bias_statistic(series, window=FULL_SAMPLE, backend=None):
    """``std(R_{t+1} / Sigma_t)`` using the sample std with divisor ``count - 1``.

    ``window=None`` gives the full-sample value (per portfolio for ensembles);
    an integer gives the trailing series. Non-finite ratios (dropped periods)
    are skipped.
    """
    if isinstance(series, BiasStatSeries):
        sd, realized = series.forecast_stdevs, series.realized_next_returns
    else:
        realized, sd = (np.asarray(v, dtype=float) for v in series)
    if np.any(sd[np.isfinite(sd)] <= 0):
        raise ParameterError("forecast standard deviations must be positive")
    z = realized / sd
    if window is not None:
        return trailing_std(z, window, backend=backend)
    finite = np.isfinite(z)
    counts = finite.sum(axis=0)
    if np.any(counts < 2):
        raise InsufficientDataError("bias statistic needs at least 2 valid observations")
    z = np.where(finite, z, np.nan)
    return np.nanstd(z, axis=0, ddof=1)


@dataclass(frozen=True)
class StrategySpec:
    """Portfolio construction rule for a rolling backtest.

    ``kind="sharpe"`` rebuilds ``Omega_hat^{-1} alpha`` every period from a
    fixed alpha; ``kind="fixed"`` holds the given weights (a control).
    """

    kind: str
    vector: np.ndarray

    def __post_init__(self):
        if self.kind not in ("sharpe", "fixed"):
            raise ParameterError(f"unknown strategy kind {self.kind!r}")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))


def _corrected_scale(counts, m, window_spec, factor_fn):
    out = np.full(counts.shape, np.nan)
    for i, c in enumerate(counts):
        if c < 2:
            continue
        t_eff = float(c)
        if window_spec is not None:
            t_eff = effective_t(EffectiveWindowSpec(int(c), window_spec.ewma_half_life,
                                                    window_spec.newey_west_lags,
                                                    window_spec.kurtosis))
        if m < t_eff:
            out[i] = factor_fn(m, t_eff).stdev_factor
    return out


def _columns(v):
    v = np.asarray(v, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def rolling_asset_ensemble(panel: ReturnsPanel, window_t: int, alphas=None, controls=None,
                           demean: bool = True, trailing_window: int = TRAILING_WINDOW,
                           window_spec: Optional[EffectiveWindowSpec] = None, backend=None):
    """Asset-level rolling backtest of many portfolios over one panel.

    ``alphas`` (N x P, or a vector) define optimized portfolios
    ``Omega_hat_t^{-1} alpha`` rebuilt every period; ``controls`` are fixed
    weight vectors. Each period t >= window_t - 1 estimates the covariance on
    periods ``t - window_t + 1 .. t`` and scores the forecast against the
    return of period t + 1. Periods with any dropped constituent are skipped
    in estimation and scoring.

    ``window_spec`` (its ``base_t`` is ignored) adds kurtosis or lag
    adjustments to the effective T used by the corrected forecaster.
    Returns ``{"optimized": {"naive", "corrected"}, "control": {...}}`` with
    only the groups that were requested.
    """
    n, length = panel.values.shape
    if window_t < 2:
        raise ParameterError("estimation window needs at least 2 periods")
    if length <= window_t + 1:
        raise InsufficientDataError(f"panel of {length} periods too short for window {window_t}")
    opt = None if alphas is None else _columns(alphas)
    fix = None if controls is None else _columns(controls)
    for v in (opt, fix):
        if v is not None and v.shape[0] != n:
            raise ParameterError("portfolio vectors must have one entry per panel asset")
    out = rolling_forecasts(panel.values, window_t, opt_targets=opt, fix_targets=fix,
                            valid=panel.column_valid(), demean=demean, backend=backend)
    stamps = panel.dates[window_t - 1 : length - 1]
    result = {}
    for group, prefix, vec in (("optimized", "opt", opt), ("control", "fix", fix)):
        if vec is None:
            continue
        naive = np.sqrt(out[f"{prefix}_quad"])
        realized = out[f"{prefix}_realized"]
        if group == "optimized":
            scale = _corrected_scale(out["counts"], n, window_spec, asset_correction_factor)
            corrected = naive * scale[:, None]
        else:
            corrected = naive
        result[group] = {
            "naive": make_series("naive", stamps, naive, realized, trailing_window, backend),
            "corrected": make_series("corrected", stamps, corrected, realized,
                                     trailing_window, backend),
        }
    return result


def _single(series):
    return BiasStatSeries(series.forecaster, series.timestamps, series.forecast_stdevs[:, 0],
                          series.realized_next_returns[:, 0], series.trailing_window,
                          series.values[:, 0])


def rolling_backtest(panel: ReturnsPanel, strategy: StrategySpec, window_t: int,
                     forecasters=("naive", "corrected"), demean: bool = True,
                     trailing_window: int = TRAILING_WINDOW,
                     window_spec: Optional[EffectiveWindowSpec] = None, backend=None):
    """Rolling backtest of one strategy; returns ``{forecaster: BiasStatSeries}``.

    See :func:`rolling_asset_ensemble` for the timing conventions. A fixed
    (control) strategy gets a corrected forecast equal to the naive one.
    """
    vec = strategy.vector
    if vec.shape != (panel.n_assets,):
        raise ParameterError("strategy vector length must match panel assets")
    for name in forecasters:
        if name not in ("naive", "corrected"):
            raise ParameterError(f"unknown forecaster {name!r}")
    optimized = strategy.kind == "sharpe"
    groups = rolling_asset_ensemble(panel, window_t,
                                    alphas=vec if optimized else None,
                                    controls=None if optimized else vec,
                                    demean=demean, trailing_window=trailing_window,
                                    window_spec=window_spec, backend=backend)
    group = groups["optimized" if optimized else "control"]
    return {name: _single(group[name]) for name in forecasters}


def rolling_factor_backtest(model_exposures, factor_returns, sigma_sq, window_t,
                            opt_vectors=None, control_vectors=None, demean: bool = False,
                            trailing_window: int = TRAILING_WINDOW, timestamps=None,
                            backend=None):
    """Rolling backtest of factor-model portfolios in a normalized basis.

    ``factor_returns`` are the K x L regression factor returns. Optimized
    portfolios are given by factor-space vectors ``a`` (columns of a K x P
    array) with weights ``X F_hat^{-1} a / N``; controls by vectors ``b``
    with weights ``X b``. In the normalized basis both are determined by
    their factor exposure ``x`` (``F_hat^{-1} a`` or ``N b``), so the loop
    runs on factor returns alone: the portfolio return is ``x' f``, the
    factor variance ``x' F_hat x`` and the specific variance
    ``sigma^2 |x|^2 / N``.

    Returns ``{"optimized": {forecaster: series}, "control": {...}}``.
    """
    x = np.asarray(model_exposures, dtype=float)
    n, k = x.shape
    f = np.asarray(factor_returns, dtype=float)
    length = f.shape[1]
    if length <= window_t + 1:
        raise InsufficientDataError(f"need more than {window_t + 1} periods, got {length}")
    if k >= window_t:
        raise ParameterError(f"K={k} must be below the window T={window_t}")
    opt = None if opt_vectors is None else _columns(opt_vectors)
    ctl = None if control_vectors is None else n * _columns(control_vectors)
    out = rolling_forecasts(f, window_t, opt_targets=opt, fix_targets=ctl,
                            demean=demean, backend=backend)
    stamps = tuple(range(window_t - 1, length - 1)) if timestamps is None \
        else tuple(timestamps)[window_t - 1 : length - 1]
    counts = out["counts"]
    cf = _corrected_scale(counts, k, None, factor_correction_factor) ** 2
    result = {}
    for group, prefix in (("optimized", "opt"), ("control", "fix")):
        if out[f"{prefix}_quad"].shape[1] == 0:
            continue
        factor_var = out[f"{prefix}_quad"]
        specific_var = sigma_sq * out[f"{prefix}_sqnorm"] / n
        realized = out[f"{prefix}_realized"]
        naive = np.sqrt(factor_var + specific_var)
        series = {"naive": make_series("naive", stamps, naive, realized, trailing_window, backend)}
        if group == "optimized":
            corr = np.sqrt(factor_var * cf[:, None] + specific_var)
        else:
            corr = naive
        series["corrected"] = make_series("corrected", stamps, corr, realized, trailing_window, backend)
        result[group] = series
    return result

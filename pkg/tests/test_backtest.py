import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sorisk.backtest import (StrategySpec, TrimRule, apply_trim, bias_statistic, make_series,
                             rolling_asset_ensemble, rolling_backtest, rolling_factor_backtest)
from sorisk.covariance import ReturnsPanel
from sorisk.errors import InsufficientDataError, ParameterError
from sorisk.sampling import gaussian_panel, random_covariance


def _panel(values):
    return ReturnsPanel.from_array(np.asarray(values, dtype=float))


def test_clamp_rule():
    out = apply_trim(_panel([[1.2, 0.1], [-0.7, 0.0]]), TrimRule("clamp", -0.5, 0.8))
    np.testing.assert_array_equal(out.values, [[0.8, 0.1], [-0.5, 0.0]])
    assert out.valid is None


def test_trim_leaves_in_range_panel_unchanged(rng):
    p = _panel(rng.uniform(-0.1, 0.1, (3, 20)))
    for mode in ("clamp", "drop"):
        out = apply_trim(p, TrimRule(mode, -0.5, 0.8))
        np.testing.assert_array_equal(out.values, p.values)
        assert out.valid is None


def test_drop_rule_marks_entry():
    out = apply_trim(_panel([[-0.9, 0.1, 0.2], [0.0, 0.1, 0.3]]), TrimRule("drop", -0.8, 4.0))
    assert not out.valid[0, 0] and out.valid[1, 0] and out.valid[:, 1:].all()
    assert list(out.column_valid()) == [False, True, True]


def test_cross_sectional_cap_applies_after_range():
    col = np.r_[np.zeros(30), 3.0]
    v = np.column_stack([col, col * 0.0])
    out = apply_trim(_panel(v), TrimRule("drop", -0.8, 4.0, cross_sectional_sigma_cap=5))
    assert not out.valid[30, 0] and out.valid[:30].all()


def test_trim_rule_validation():
    with pytest.raises(ParameterError):
        TrimRule("clamp", 1.0, 0.0)
    with pytest.raises(ParameterError):
        TrimRule("winsor", -1.0, 1.0)


def test_bias_statistic_by_hand():
    r = np.array([1.0, -1.0, 2.0, 0.0])
    sd = np.full(4, 2.0)
    assert bias_statistic((r, sd)) == pytest.approx(np.std(r / 2, ddof=1))
    assert bias_statistic((sd, sd)) == 0.0


def test_bias_statistic_errors():
    with pytest.raises(InsufficientDataError):
        bias_statistic((np.array([1.0]), np.array([1.0])))
    with pytest.raises(ParameterError):
        bias_statistic((np.array([1.0, 2.0]), np.array([1.0, 0.0])))


def test_calibrated_and_halved_forecasts(rng):
    r = 0.02 * rng.standard_normal(20000)
    assert bias_statistic((r, np.full_like(r, 0.02))) == pytest.approx(1.0, abs=0.02)
    assert bias_statistic((r, np.full_like(r, 0.01))) == pytest.approx(2.0, abs=0.04)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2 ** 32 - 1))
def test_bias_statistic_scale_equivariance(c, seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(30)
    sd = rng.uniform(0.5, 2.0, 30)
    b = bias_statistic((r, sd))
    assert bias_statistic((r, 2 * sd)) == pytest.approx(b / 2, rel=1e-12)
    # rescaling the portfolio scales returns and forecasts alike
    assert bias_statistic((c * r, c * sd)) == pytest.approx(b, rel=1e-10)


def test_trailing_window_fills_before_reporting(rng):
    s = make_series("x", range(60), np.ones(60), rng.standard_normal(60), trailing_window=52)
    assert np.all(np.isnan(s.values[:51])) and np.all(np.isfinite(s.values[51:]))


def test_rolling_backtest_alignment(rng):
    values = 0.01 * rng.standard_normal((3, 40))
    panel = ReturnsPanel(("a", "b", "c"), tuple(range(100, 140)), values)
    w = np.array([0.2, 0.3, 0.5])
    res = rolling_backtest(panel, StrategySpec("fixed", w), 10, demean=False)
    naive = res["naive"]
    assert naive.timestamps[0] == 109 and naive.timestamps[-1] == 138
    np.testing.assert_allclose(naive.realized_next_returns, w @ values[:, 10:], rtol=1e-12)
    est = values[:, 0:10] @ values[:, 0:10].T / 10
    assert naive.forecast_stdevs[0] == pytest.approx(np.sqrt(w @ est @ w))
    np.testing.assert_array_equal(res["corrected"].forecast_stdevs, naive.forecast_stdevs)


def test_rolling_backtest_requires_history(rng):
    panel = _panel(rng.standard_normal((2, 11)))
    with pytest.raises(InsufficientDataError):
        rolling_backtest(panel, StrategySpec("fixed", np.ones(2)), 10)


def test_drop_mode_excludes_periods(rng):
    values = 0.01 * rng.standard_normal((2, 50))
    values[0, 30] = -0.95
    panel = apply_trim(_panel(values), TrimRule("drop", -0.8, 4.0))
    res = rolling_backtest(panel, StrategySpec("fixed", np.array([0.5, 0.5])), 10, demean=False)
    z = res["naive"].standardized
    assert np.isnan(z[30 - 10])
    assert np.isfinite(z[31 - 10])


def test_naive_optimized_bias_near_two(rng):
    # N=50, T=100: naive stdev forecasts are low by about (1 - N/T)^{-1} = 2
    omega = random_covariance(60, rng, 0.01 / 252, 0.25 / 252)
    panel = _panel(gaussian_panel(omega, 2200, rng))
    idx = rng.choice(60, 50, replace=False)
    res = rolling_asset_ensemble(panel.select(asset_index=idx), 100,
                                 alphas=rng.standard_normal(50), demean=False)
    b_naive = bias_statistic(res["optimized"]["naive"])[0]
    b_corr = bias_statistic(res["optimized"]["corrected"])[0]
    assert b_naive == pytest.approx(2.0, rel=0.08)
    assert b_corr == pytest.approx(1.0, rel=0.06)


def test_bias_se_shrinks_with_trials():
    # spread of trial-averaged B over repeated ensembles falls like 1/sqrt(trials)
    rng = np.random.default_rng(5)
    b = np.array([bias_statistic((rng.standard_normal(60), np.ones(60))) for _ in range(4000)])
    sd1 = b.std()
    sd16 = b.reshape(-1, 16).mean(1).std()
    assert sd16 == pytest.approx(sd1 / 4, rel=0.15)


def test_factor_backtest_matches_asset_space(rng):
    # the K-dimensional shortcut reproduces weights X F_hat^{-1} a / N and X b
    from sorisk.experiments import random_normalized_exposures
    n, k, t, length = 40, 3, 12, 30
    x = random_normalized_exposures(n, k, rng)
    f = 0.02 * rng.standard_normal((k, length))
    e = 0.03 * rng.standard_normal((n, length))
    r = x @ f + e
    f_hat = x.T @ r / n
    a = rng.standard_normal(k)
    b = rng.standard_normal(k)
    res = rolling_factor_backtest(x, f_hat, 9e-4, t, a, b)
    step = 5
    win = f_hat[:, step : step + t]
    fh = win @ win.T / t
    w_opt = x @ np.linalg.solve(fh, a) / n
    cov = x @ fh @ x.T + 9e-4 * np.eye(n)
    assert res["optimized"]["naive"].forecast_stdevs[step, 0] == pytest.approx(np.sqrt(w_opt @ cov @ w_opt))
    assert res["optimized"]["naive"].realized_next_returns[step, 0] == pytest.approx(w_opt @ r[:, step + t])
    w_ctl = x @ b
    assert res["control"]["naive"].forecast_stdevs[step, 0] == pytest.approx(np.sqrt(w_ctl @ cov @ w_ctl))
    fv = w_opt @ x @ fh @ x.T @ w_opt
    corr = np.sqrt(fv / (1 - k / t) ** 2 + 9e-4 * w_opt @ w_opt)
    assert res["optimized"]["corrected"].forecast_stdevs[step, 0] == pytest.approx(corr)

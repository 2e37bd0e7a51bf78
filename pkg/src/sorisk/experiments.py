"""Seeded Monte Carlo experiments.

Every experiment takes an :class:`~sorisk.config.ExperimentConfig` and returns
an :class:`ExperimentResult` holding columnar tables (``dict`` of equal-length
numpy arrays). Randomness is drawn from generators keyed by
``(master_seed, stream, unit index)``; units are fixed-size trial blocks or
single trials, never thread-dependent, so ``threads`` changes wall time only.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np

from .backtest import bias_statistic, rolling_asset_ensemble, rolling_factor_backtest
from .config import ExperimentConfig, grid_window
from .covariance import CovarianceEstimate, EffectiveWindowSpec, ReturnsPanel
from .errors import ConfigError, InsufficientDataError, ParameterError
from .factor_model import (FactorModel, build_synthetic_world,
                           decompose_alpha, estimate_factor_covariance,
                           estimate_factor_returns, factor_optimal_portfolio,
                           normalize_model_basis, portfolio_w_scale, true_factor_risk)
from .portfolio import (LinearConstraints, min_variance_portfolio, portfolio_variance,
                        random_control_portfolio, sharpe_optimal_portfolio)
from .sampling import gaussian_panel, random_covariance, sample_covariance_estimates, trial_rng
from .second_order import (CoherentErrorInputs, asset_correction_factor,
                           coherent_exposure_correction,
                           corrected_factor_forecast, factor_correction_factor,
                           inverse_mean_coefficient, sandwich_coefficient)

# periods per year for the synthetic daily universe
PERIODS_PER_YEAR = 252


@dataclass
class ExperimentResult:
    """Tables of per-trial records and their aggregates.

    ``tables`` maps a table name to an ordered ``{column: 1-D array}``; the
    ``summary`` table is recomputable from the per-trial table.
    """

    experiment: str
    config: ExperimentConfig
    tables: dict
    headline: str = ""
    seed_info: dict = field(default_factory=dict)

    @property
    def summary(self):
        return self.tables["summary"]

    def table_rows(self, name):
        cols = self.tables[name]
        keys = list(cols)
        n = len(cols[keys[0]]) if keys else 0
        return [{k: cols[k][i] for k in keys} for i in range(n)]


def _map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _blocks(n_trials, block_size):
    starts = range(0, n_trials, block_size)
    return [(b, s, min(block_size, n_trials - s)) for b, s in enumerate(starts)]


def mean_se(x):
    """Mean and standard error (``std(ddof=1)/sqrt(n)``; 0 for n = 1)."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(np.mean(x)), se


def ratio_se(num, den):
    """Ratio of means with a delta-method standard error (paired samples)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = np.isfinite(num) & np.isfinite(den)
    num, den = num[ok], den[ok]
    mn, md = num.mean(), den.mean()
    r = mn / md
    if num.size < 2:
        return float(r), 0.0
    resid = (num - r * den) / md
    return float(r), float(np.std(resid, ddof=1) / np.sqrt(num.size))


def _seed_info(cfg, **extra):
    info = {"master_seed": int(cfg.master_seed),
            "scheme": "numpy SeedSequence(entropy=master_seed, spawn_key=(stream, index...)) "
                      "with PCG64",
            "streams": {"setup": 0, "trial": 1, "panel": 2}}
    info.update(extra)
    return info


def _check(cfg, name):
    if cfg.experiment != name:
        raise ConfigError(f"config is for {cfg.experiment!r}, not {name!r}")
    return cfg.with_defaults()


def _true_cov(cfg, n, rng):
    if cfg.true_cov_spec == "identity":
        return np.eye(n)
    return random_covariance(n, rng, cfg.eig_low, cfg.eig_high)


# ---------------------------------------------------------------- toy model

def chi_mean_stdev(sigma, t):
    """``E[sqrt(mean(r^2))]`` for T i.i.d. N(0, sigma^2) draws (known zero mean)."""
    return sigma * math.sqrt(2.0 / t) * math.exp(math.lgamma((t + 1) / 2) - math.lgamma(t / 2))


def run_toy_model(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Two identical assets; the active manager holds whichever looks less risky.

    Each sample stdev is the zero-mean estimator ``sqrt(mean r^2)``. The
    passive forecast is asset 1's; the active forecast is the smaller of the
    two, ties going to asset 1.
    """
    cfg = _check(config, "toy_model")
    t, sigma = cfg.t_obs, cfg.true_sigma

    def block(spec):
        b, _, size = spec
        rng = trial_rng(cfg.master_seed, "trial", b)
        r = sigma * rng.standard_normal((size, 2, t))
        return np.sqrt(np.mean(r * r, axis=2))

    sd = np.concatenate(_map(block, _blocks(cfg.n_trials, cfg.block_size), threads))
    chosen = np.where(sd[:, 1] < sd[:, 0], 2, 1)
    active = np.where(chosen == 2, sd[:, 1], sd[:, 0])
    passive = sd[:, 0]
    trials = {"trial": np.arange(cfg.n_trials), "sd_asset1": sd[:, 0], "sd_asset2": sd[:, 1],
              "chosen_asset": chosen, "active_forecast": active, "passive_forecast": passive}
    ma, sa = mean_se(active)
    mp, sp = mean_se(passive)
    summary = {"t_obs": np.array([t]), "true_sigma": np.array([sigma]),
               "n_trials": np.array([cfg.n_trials]),
               "mean_active": np.array([ma]), "se_active": np.array([sa]),
               "mean_passive": np.array([mp]), "se_passive": np.array([sp]),
               "expected_passive": np.array([chi_mean_stdev(sigma, t)])}
    head = (f"toy: active mean forecast {ma:.5f} (se {sa:.1e}), passive {mp:.5f} "
            f"(se {sp:.1e}), true sigma {sigma:g}")
    return ExperimentResult("toy_model", cfg, {"summary": summary, "trials": trials}, head,
                            _seed_info(cfg, block_size=cfg.block_size))


# ----------------------------------------------------------------- frontier

def run_frontier(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Efficient frontier built on sample covariances versus the true frontier.

    A fixed true covariance and alpha are drawn from the setup stream. For
    every target return R and trial, a Wishart estimate with T observations
    yields minimum-variance weights under ``1'w = 1``, ``alpha'w = R``.
    """
    cfg = _check(config, "frontier")
    n, t = cfg.n_assets, cfg.t_obs
    setup = trial_rng(cfg.master_seed, "setup")
    omega = _true_cov(cfg, n, setup)
    alpha = cfg.alpha_scale * setup.standard_normal(n)
    stdev_factor = asset_correction_factor(n, t).stdev_factor
    grid = list(cfg.r_grid)
    frontier = []
    for r_target in grid:
        cons = LinearConstraints.budget_and_return(alpha, r_target)
        frontier.append(math.sqrt(portfolio_variance(min_variance_portfolio(omega, cons), omega)))

    def trial(spec):
        i, j = spec
        rng = trial_rng(cfg.master_seed, "trial", i, j)
        est = sample_covariance_estimates(omega, t, 1, rng, cfg.sampler)[0]
        cons = LinearConstraints.budget_and_return(alpha, grid[i])
        w = min_variance_portfolio(est, cons)
        return math.sqrt(portfolio_variance(w, est)), math.sqrt(portfolio_variance(w, omega))

    specs = [(i, j) for i in range(len(grid)) for j in range(cfg.n_trials)]
    out = np.array(_map(trial, specs, threads))
    idx = np.array([s[0] for s in specs])
    naive, realized = out[:, 0], out[:, 1]
    corrected = naive * stdev_factor
    fr = np.asarray(frontier)[idx]
    trials = {"r_index": idx, "R": np.asarray(grid)[idx],
              "trial": np.array([s[1] for s in specs]), "true_frontier": fr,
              "naive": naive, "realized": realized, "corrected": corrected,
              "realized_above_frontier": (realized >= fr * (1 - 1e-12)).astype(int)}
    cols = {k: [] for k in ("R", "true_frontier", "mean_naive", "mean_realized",
                            "mean_corrected", "se_naive", "se_realized", "se_corrected",
                            "naive_over_realized", "corrected_over_realized",
                            "min_realized_minus_frontier")}
    for i, r_target in enumerate(grid):
        sel = idx == i
        cols["R"].append(r_target)
        cols["true_frontier"].append(frontier[i])
        for name, arr in (("naive", naive), ("realized", realized), ("corrected", corrected)):
            m, s = mean_se(arr[sel])
            cols[f"mean_{name}"].append(m)
            cols[f"se_{name}"].append(s)
        cols["naive_over_realized"].append(naive[sel].mean() / realized[sel].mean())
        cols["corrected_over_realized"].append(corrected[sel].mean() / realized[sel].mean())
        cols["min_realized_minus_frontier"].append(float(np.min(realized[sel] - frontier[i])))
    summary = {k: np.asarray(v) for k, v in cols.items()}
    head = (f"frontier: naive/realized {np.mean(summary['naive_over_realized']):.3f}, "
            f"corrected/realized {np.mean(summary['corrected_over_realized']):.3f} "
            f"(N={n}, T={t}, {cfg.n_trials} trials x {len(grid)} R)")
    return ExperimentResult("frontier", cfg, {"summary": summary, "trials": trials}, head,
                            _seed_info(cfg))


# ----------------------------------------------------------- Wishart oracle

def run_wishart_oracle(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Monte Carlo first and second inverse moments of a sample covariance.

    Per trial the scalar coefficients ``tr(Omega M)/N`` are recorded for
    ``M = Omega_hat^{-1}`` and ``M = Omega_hat^{-1} Omega Omega_hat^{-1}``;
    their expectations equal the scalar c in ``E[M] = c Omega^{-1}``.
    Elementwise means are compared with ``c Omega^{-1}`` through the largest
    absolute z-score over matrix entries.
    """
    cfg = _check(config, "wishart_oracle")
    n, t = cfg.n_assets, cfg.t_obs
    sandwich_exact = sandwich_coefficient(n, t)
    inv_exact = inverse_mean_coefficient(n, t, exact=True)
    inv_leading = inverse_mean_coefficient(n, t, exact=False)
    sandwich_leading = (1.0 - n / t) ** -3
    omega = _true_cov(cfg, n, trial_rng(cfg.master_seed, "setup"))
    omega_inv = np.linalg.inv(omega)

    def block(spec):
        b, _, size = spec
        rng = trial_rng(cfg.master_seed, "trial", b)
        est = sample_covariance_estimates(omega, t, size, rng, cfg.sampler)
        inv = np.linalg.inv(est)
        sand = inv @ omega @ inv
        c1 = np.einsum("ij,bji->b", omega, inv) / n
        c2 = np.einsum("ij,bji->b", omega, sand) / n
        return c1, c2, inv.sum(0), (inv * inv).sum(0), sand.sum(0), (sand * sand).sum(0)

    parts = _map(block, _blocks(cfg.n_trials, cfg.block_size), threads)
    c1 = np.concatenate([p[0] for p in parts])
    c2 = np.concatenate([p[1] for p in parts])
    m = cfg.n_trials
    rows = {k: [] for k in ("moment", "coefficient_exact", "coefficient_leading",
                            "mc_coefficient", "se_coefficient", "z_exact", "z_leading",
                            "max_rel_dev_exact", "max_rel_dev_leading",
                            "max_abs_z_exact", "max_abs_z_leading")}
    for name, coef, exact, leading, s_idx in (("inverse", c1, inv_exact, inv_leading, 2),
                                             ("sandwich", c2, sandwich_exact, sandwich_leading, 4)):
        total = sum(p[s_idx] for p in parts)
        total_sq = sum(p[s_idx + 1] for p in parts)
        mean = total / m
        var = np.maximum(total_sq / m - mean * mean, 0.0) * m / max(m - 1, 1)
        se_el = np.sqrt(var / m)
        mc, se = mean_se(coef)
        scale = np.max(np.abs(omega_inv))
        rows["moment"].append(name)
        rows["coefficient_exact"].append(exact)
        rows["coefficient_leading"].append(leading)
        rows["mc_coefficient"].append(mc)
        rows["se_coefficient"].append(se)
        rows["z_exact"].append((mc - exact) / se)
        rows["z_leading"].append((mc - leading) / se)
        for label, c in (("exact", exact), ("leading", leading)):
            dev = mean - c * omega_inv
            rows[f"max_rel_dev_{label}"].append(float(np.max(np.abs(dev)) / (c * scale)))
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se_el > 0, np.abs(dev) / se_el, 0.0)
            rows[f"max_abs_z_{label}"].append(float(np.max(z)))
    summary = {k: np.asarray(v) for k, v in rows.items()}
    trials = {"trial": np.arange(m), "inverse_coefficient": c1, "sandwich_coefficient": c2}
    head = (f"wishart: N={n} T={t} inverse {summary['mc_coefficient'][0]:.4f} "
            f"(se {summary['se_coefficient'][0]:.1e}; exact {inv_exact:.4f}), sandwich "
            f"{summary['mc_coefficient'][1]:.4f} (se {summary['se_coefficient'][1]:.1e}; "
            f"exact {sandwich_exact:.4f})")
    return ExperimentResult("wishart_oracle", cfg, {"summary": summary, "trials": trials}, head,
                            _seed_info(cfg, block_size=cfg.block_size))


# ------------------------------------------------------ asset bias statistics

def synthetic_universe(cfg, n_universe=None, length=None):
    """Stationary Gaussian (or Student-t) daily panel with a random covariance."""
    n_universe = cfg.n_universe if n_universe is None else n_universe
    length = cfg.panel_length if length is None else length
    setup = trial_rng(cfg.master_seed, "setup")
    omega = random_covariance(n_universe, setup, cfg.eig_low / PERIODS_PER_YEAR,
                              cfg.eig_high / PERIODS_PER_YEAR)
    values = gaussian_panel(omega, length, trial_rng(cfg.master_seed, "panel"), cfg.kurtosis)
    return ReturnsPanel.from_array(values)


def _bias_cell(cfg, panel, n, t, cell, trial, demean, window_spec):
    rng = trial_rng(cfg.master_seed, "trial", cell, trial)
    assets = np.sort(rng.choice(panel.n_assets, size=n, replace=False))
    alpha = rng.standard_normal(n)
    control = random_control_portfolio(n, rng).weights
    sub = panel.select(asset_index=assets)
    res = rolling_asset_ensemble(sub, t, alphas=alpha, controls=control, demean=demean,
                                 window_spec=window_spec)
    return (float(bias_statistic(res["optimized"]["naive"])[0]),
            float(bias_statistic(res["optimized"]["corrected"])[0]),
            float(bias_statistic(res["control"]["naive"])[0]))


def _bias_tables(cells, records, n_trials):
    trials = {k: [] for k in ("cell", "n_assets", "t_obs", "t_over_n", "trial",
                              "b_naive", "b_corrected", "b_control")}
    summary = {k: [] for k in ("n_assets", "t_over_n", "t_obs", "n_trials",
                               "mean_b_naive", "se_b_naive", "mean_b_corrected",
                               "se_b_corrected", "mean_b_control", "se_b_control",
                               "corrected_minus_control", "se_corrected_minus_control",
                               "expected_naive")}
    for c, (n, ratio, t) in enumerate(cells):
        recs = np.array(records[c * n_trials:(c + 1) * n_trials])
        for j, (bn, bc, bk) in enumerate(recs):
            for k, v in zip(trials, (c, n, t, ratio, j, bn, bc, bk)):
                trials[k].append(v)
        summary["n_assets"].append(n)
        summary["t_over_n"].append(ratio)
        summary["t_obs"].append(t)
        summary["n_trials"].append(n_trials)
        for i, name in enumerate(("naive", "corrected", "control")):
            m, s = mean_se(recs[:, i])
            summary[f"mean_b_{name}"].append(m)
            summary[f"se_b_{name}"].append(s)
        m, s = mean_se(recs[:, 1] - recs[:, 2])
        summary["corrected_minus_control"].append(m)
        summary["se_corrected_minus_control"].append(s)
        summary["expected_naive"].append(asset_correction_factor(n, t).stdev_factor)
    return ({k: np.asarray(v) for k, v in summary.items()},
            {k: np.asarray(v) for k, v in trials.items()})


def _window_spec(cfg):
    if cfg.kurtosis is None:
        return None
    return EffectiveWindowSpec(base_t=2, kurtosis=cfg.kurtosis)


def run_asset_bias_grid(config: ExperimentConfig, panel: Optional[ReturnsPanel] = None,
                        threads: int = 1) -> ExperimentResult:
    """Bias statistics of optimized, corrected and control forecasts on a (N, T/N) grid.

    Per trial: N random assets from the universe, a random alpha held fixed,
    a rolling T-period window with weights ``Omega_hat^{-1} alpha`` rebuilt
    every period, and a random control portfolio. The full-sample bias
    statistic per trial is averaged over trials. Without ``panel`` a
    stationary synthetic universe is generated.
    """
    cfg = _check(config, "asset_bias_grid")
    if panel is None:
        panel = synthetic_universe(cfg)
    cells = [(n, r, grid_window(n, r)) for n in cfg.n_grid for r in cfg.t_over_n_grid]
    for n, _, t in cells:
        if n > panel.n_assets:
            raise ParameterError(f"universe has {panel.n_assets} assets, grid needs {n}")
        if panel.n_periods <= t + 1:
            raise InsufficientDataError(f"panel of {panel.n_periods} periods is shorter "
                                        f"than T+1={t + 1}")
    spec = _window_spec(cfg)
    work = [(c, j) for c in range(len(cells)) for j in range(cfg.n_trials)]
    records = _map(lambda cj: _bias_cell(cfg, panel, cells[cj[0]][0], cells[cj[0]][2],
                                         cj[0], cj[1], cfg.demean, spec), work, threads)
    summary, trials = _bias_tables(cells, records, cfg.n_trials)
    head = (f"bias-grid: naive B {summary['mean_b_naive'].min():.3f}..."
            f"{summary['mean_b_naive'].max():.3f}, max |corrected-control| "
            f"{np.max(np.abs(summary['corrected_minus_control'])):.3f}, control B "
            f"{summary['mean_b_control'].min():.3f}...{summary['mean_b_control'].max():.3f} "
            f"over {len(cells)} cells")
    return ExperimentResult("asset_bias_grid", cfg, {"summary": summary, "trials": trials},
                            head, _seed_info(cfg))


def run_backtest(config: ExperimentConfig, panel: ReturnsPanel, threads: int = 1):
    """Bias statistics on a user panel for one window length.

    Each trial draws ``n_assets`` assets (all of them when unset), a random
    alpha and a random control and runs the rolling backtest.
    """
    cfg = _check(config, "backtest")
    n = panel.n_assets if cfg.n_assets is None else cfg.n_assets
    t = cfg.t_obs
    if n > panel.n_assets:
        raise ParameterError(f"panel has {panel.n_assets} assets, n_assets={n}")
    if n >= t:
        raise ParameterError(f"N={n} >= T={t}: the correction diverges")
    if panel.n_periods <= t + 1:
        raise InsufficientDataError(f"panel of {panel.n_periods} periods is shorter "
                                    f"than T+1={t + 1}")
    spec = _window_spec(cfg)
    records = _map(lambda j: _bias_cell(cfg, panel, n, t, 0, j, cfg.demean, spec),
                   range(cfg.n_trials), threads)
    summary, trials = _bias_tables([(n, t / n, t)], records, cfg.n_trials)
    head = (f"backtest: N={n} T={t} naive B {summary['mean_b_naive'][0]:.3f} "
            f"(se {summary['se_b_naive'][0]:.3f}), corrected {summary['mean_b_corrected'][0]:.3f} "
            f"(se {summary['se_b_corrected'][0]:.3f}), control {summary['mean_b_control'][0]:.3f} "
            f"(se {summary['se_b_control'][0]:.3f})")
    return ExperimentResult("backtest", cfg, {"summary": summary, "trials": trials}, head,
                            _seed_info(cfg))


# -------------------------------------------------------- factor-model worlds

def random_normalized_exposures(n, k, rng):
    """``sqrt(N) Q`` for a random orthonormal N x K ``Q``: ``X'X = N 1`` exactly."""
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return math.sqrt(n) * q * np.sign(np.diag(r))


# weekly-scale factor variances and specific variance for synthetic factor worlds
FACTOR_EIG_RANGE = (1e-4, 1e-3)
SPECIFIC_VAR = 9e-4


def _heterogeneous_model(n, k, rng):
    x = rng.standard_normal((n, k))
    x[:, 0] = 1.0 + 0.3 * x[:, 0]
    spec = rng.uniform(0.02, 0.06, n) ** 2
    f = random_covariance(k, rng, *FACTOR_EIG_RANGE)
    return normalize_model_basis(FactorModel(x, f, spec)).model


def _ensemble_mean(values):
    """Cross-portfolio mean per period; NaN where no portfolio has a value."""
    finite = np.isfinite(values)
    count = finite.sum(axis=1)
    total = np.where(finite, values, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def run_factor_bias(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Trailing bias statistics for ensembles of factor-model portfolios.

    Each world (one per trial) has heterogeneous specific risk, normalized to
    the uniform basis, and exposure noise of size ``rho``. Factor returns are
    estimated by cross-sectional regression and the factor covariance on a
    rolling T-period window. Optimized portfolios use ``alpha = X_hat a``;
    controls are ``X_hat b``.
    """
    cfg = _check(config, "factor_bias")
    n, k, t, p = cfg.n_assets, cfg.k_factors, cfg.t_obs, cfg.n_portfolios

    def world_run(wi):
        rng = trial_rng(cfg.master_seed, "trial", wi)
        model = _heterogeneous_model(n, k, rng)
        world = build_synthetic_world(model.exposures, model.factor_cov,
                                      model.specific_var, cfg.rho, rng)
        r, _ = world.simulate_returns(cfg.panel_length, rng)
        f_hat = estimate_factor_returns(world.model_exposures, r)
        a = rng.standard_normal((k, p))
        b = rng.standard_normal((k, p))
        res = rolling_factor_backtest(world.model_exposures, f_hat, float(model.specific_var[0]),
                                      t, a, b, demean=cfg.demean,
                                      trailing_window=cfg.trailing_window)
        return res

    worlds = _map(world_run, range(cfg.n_trials), threads)
    series = {k_: [] for k_ in ("trial", "step", "opt_naive", "opt_corrected", "control_naive")}
    trials = {k_: [] for k_ in ("trial", "group", "portfolio", "b_naive", "b_corrected")}
    per_world = {k_: [] for k_ in ("mean_opt_naive", "mean_opt_corrected", "mean_control",
                                   "max_abs_corrected_minus_control")}
    for wi, res in enumerate(worlds):
        if not np.any(np.isfinite(res["optimized"]["naive"].values)):
            raise InsufficientDataError("panel too short for a full trailing window")
        on, oc, cn = (_ensemble_mean(res[g][f].values) for g, f in
                      (("optimized", "naive"), ("optimized", "corrected"), ("control", "naive")))
        full = np.isfinite(on) & np.isfinite(oc) & np.isfinite(cn)
        steps = np.flatnonzero(full)
        series["trial"].extend([wi] * steps.size)
        series["step"].extend(steps.tolist())
        series["opt_naive"].extend(on[full].tolist())
        series["opt_corrected"].extend(oc[full].tolist())
        series["control_naive"].extend(cn[full].tolist())
        per_world["mean_opt_naive"].append(float(on[full].mean()))
        per_world["mean_opt_corrected"].append(float(oc[full].mean()))
        per_world["mean_control"].append(float(cn[full].mean()))
        per_world["max_abs_corrected_minus_control"].append(float(np.max(np.abs(oc[full] - cn[full]))))
        for group in ("optimized", "control"):
            bn = bias_statistic(res[group]["naive"])
            bc = bias_statistic(res[group]["corrected"])
            trials["trial"].extend([wi] * p)
            trials["group"].extend([group] * p)
            trials["portfolio"].extend(range(p))
            trials["b_naive"].extend(bn.tolist())
            trials["b_corrected"].extend(bc.tolist())
    summary = {"n_assets": np.array([n]), "k_factors": np.array([k]), "t_obs": np.array([t]),
               "n_worlds": np.array([cfg.n_trials]), "n_portfolios": np.array([p]),
               "expected_naive": np.array([factor_correction_factor(k, t).stdev_factor])}
    for key, vals in per_world.items():
        if key.startswith("max"):
            summary[key] = np.array([max(vals)])
        else:
            m, s = mean_se(vals)
            if cfg.n_trials == 1:
                # no spread across worlds: use the spread of the ensemble series
                sel = {"mean_opt_naive": "opt_naive", "mean_opt_corrected": "opt_corrected",
                       "mean_control": "control_naive"}[key]
                s = float(np.std(series[sel], ddof=1) / np.sqrt(len(series[sel])))
            summary[key] = np.array([m])
            summary["se_" + key[5:]] = np.array([s])
    tb = {k_: np.asarray(v) for k_, v in trials.items()}
    for group in ("optimized", "control"):
        sel = tb["group"] == group
        for col in ("b_naive", "b_corrected"):
            m, s = mean_se(tb[col][sel])
            summary[f"full_{group}_{col}"] = np.array([m])
            summary[f"se_full_{group}_{col}"] = np.array([s])
    head = (f"factor-bias: trailing B optimized naive {summary['mean_opt_naive'][0]:.3f} "
            f"(expected {summary['expected_naive'][0]:.3f}), corrected "
            f"{summary['mean_opt_corrected'][0]:.3f}, control {summary['mean_control'][0]:.3f}, "
            f"max |corrected-control| {summary['max_abs_corrected_minus_control'][0]:.3f}")
    return ExperimentResult("factor_bias", cfg,
                            {"summary": summary, "trials": tb,
                             "series": {k_: np.asarray(v) for k_, v in series.items()}},
                            head, _seed_info(cfg))


# ------------------------------------------- library-only validation studies

def run_asset_correction(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Naive, corrected and true variance of sample-covariance Sharpe portfolios.

    ``normalization="unit_naive"`` scales each portfolio to unit naive
    volatility before averaging, which is the convention under which the
    ``(1 - N/T)^{-2}`` inflation is unbiased; ``"none"`` keeps
    ``Omega_hat^{-1} alpha`` as is.
    """
    cfg = _check(config, "asset_correction")
    n, t = cfg.n_assets, cfg.t_obs
    omega = _true_cov(cfg, n, trial_rng(cfg.master_seed, "setup"))
    factor = asset_correction_factor(n, t).variance_factor

    def trial(j):
        rng = trial_rng(cfg.master_seed, "trial", j)
        est = CovarianceEstimate(sample_covariance_estimates(omega, t, 1, rng, cfg.sampler)[0],
                                 float(t), "sample", False)
        port = sharpe_optimal_portfolio(est, rng.standard_normal(n))
        naive = portfolio_variance(port, est)
        if cfg.normalization == "unit_naive":
            port = port.scaled(1.0 / math.sqrt(naive))
            naive = portfolio_variance(port, est)
        return naive, portfolio_variance(port, omega)

    out = np.array(_map(trial, range(cfg.n_trials), threads))
    naive, true = out[:, 0], out[:, 1]
    corrected = naive * factor
    rn, sn = ratio_se(naive, true)
    rc, sc = ratio_se(corrected, true)
    summary = {"n_assets": np.array([n]), "t_obs": np.array([t]),
               "mean_naive": np.array([naive.mean()]), "mean_corrected": np.array([corrected.mean()]),
               "mean_true": np.array([true.mean()]),
               "naive_over_true": np.array([rn]), "se_naive_over_true": np.array([sn]),
               "corrected_over_true": np.array([rc]), "se_corrected_over_true": np.array([sc]),
               "expected_naive_over_true": np.array([1.0 / factor])}
    trials = {"trial": np.arange(cfg.n_trials), "naive_variance": naive,
              "corrected_variance": corrected, "true_variance": true}
    head = f"asset-correction: naive/true {rn:.4f} (se {sn:.4f}), corrected/true {rc:.4f}"
    return ExperimentResult("asset_correction", cfg, {"summary": summary, "trials": trials},
                            head, _seed_info(cfg))


def run_factor_correction(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Factor-variance forecasts against truth in a fixed normalized factor world."""
    cfg = _check(config, "factor_correction")
    n, k, t = cfg.n_assets, cfg.k_factors, cfg.t_obs
    setup = trial_rng(cfg.master_seed, "setup")
    x_hat = random_normalized_exposures(n, k, setup)
    f_true = random_covariance(k, setup, *FACTOR_EIG_RANGE)
    world = build_synthetic_world(x_hat, f_true, SPECIFIC_VAR, cfg.rho, setup)

    def trial(j):
        rng = trial_rng(cfg.master_seed, "trial", j)
        r, _ = world.simulate_returns(t, rng)
        f_hat = estimate_factor_covariance(estimate_factor_returns(x_hat, r))
        model = world.model(f_hat)
        port = factor_optimal_portfolio(model, x_hat @ rng.standard_normal(k))
        if cfg.normalization == "none":
            port = port.scaled(1.0 / portfolio_w_scale(port))
        fc = corrected_factor_forecast(port, model, t)
        return fc.factor_variance, true_factor_risk(world, port), fc.specific_variance

    out = np.array(_map(trial, range(cfg.n_trials), threads))
    naive, true, spec = out[:, 0], out[:, 1], out[:, 2]
    factor = factor_correction_factor(k, t).variance_factor
    corrected = naive * factor
    rn, sn = ratio_se(naive, true)
    rc, sc = ratio_se(corrected, true)
    summary = {"n_assets": np.array([n]), "k_factors": np.array([k]), "t_obs": np.array([t]),
               "naive_over_true": np.array([rn]), "se_naive_over_true": np.array([sn]),
               "corrected_over_true": np.array([rc]), "se_corrected_over_true": np.array([sc]),
               "expected_naive_over_true": np.array([1.0 / factor]),
               "mean_specific_share": np.array([float(np.mean(spec / (naive + spec)))])}
    trials = {"trial": np.arange(cfg.n_trials), "naive_factor_variance": naive,
              "corrected_factor_variance": corrected, "true_factor_variance": true,
              "specific_variance": spec}
    head = f"factor-correction: naive/true {rn:.4f} (se {sn:.4f}), corrected/true {rc:.4f}"
    return ExperimentResult("factor_correction", cfg, {"summary": summary, "trials": trials},
                            head, _seed_info(cfg))


def run_coherent_exposure(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Hidden factor risk from exposure errors aligned with off-model alpha.

    For each noise level and seed: normalized exposures, true exposures
    ``X_hat + eps``, alpha in the span of the true exposures, the model
    factor covariance equal to the truth. The predicted factor risk is the
    model's plus the coherent correction; the realized one uses the truth.
    """
    cfg = _check(config, "coherent_exposure")
    n, k = cfg.n_assets, cfg.k_factors
    grid = list(cfg.rho_grid)

    def trial(spec):
        i, j = spec
        rng = trial_rng(cfg.master_seed, "trial", i, j)
        x_hat = random_normalized_exposures(n, k, rng)
        f = random_covariance(k, rng, *FACTOR_EIG_RANGE)
        world = build_synthetic_world(x_hat, f, SPECIFIC_VAR, grid[i], rng)
        a = rng.standard_normal(k)
        alpha = world.true_exposures @ a
        model = world.model()
        port = factor_optimal_portfolio(model, alpha)
        dec = decompose_alpha(model, alpha)
        corr = coherent_exposure_correction(CoherentErrorInputs(
            dec.alpha_perp_sq, dec.a_vec, model.factor_cov, SPECIFIC_VAR, portfolio_w_scale(port)))
        base = model.factor_variance(port.weights)
        return base, corr, true_factor_risk(world, port)

    specs = [(i, j) for i in range(len(grid)) for j in range(cfg.n_trials)]
    out = np.array(_map(trial, specs, threads))
    idx = np.array([s[0] for s in specs])
    base, corr, real = out[:, 0], out[:, 1], out[:, 2]
    pred = base + corr
    trials = {"rho": np.asarray(grid)[idx], "trial": np.array([s[1] for s in specs]),
              "model_factor_risk": base, "correction": corr, "predicted": pred,
              "realized": real, "ratio": pred / real}
    rows = {k_: [] for k_ in ("rho", "mean_predicted_over_realized", "se_predicted_over_realized",
                              "mean_model_over_realized", "ratio_of_means")}
    for i, rho in enumerate(grid):
        sel = idx == i
        m, s = mean_se(pred[sel] / real[sel])
        rows["rho"].append(rho)
        rows["mean_predicted_over_realized"].append(m)
        rows["se_predicted_over_realized"].append(s)
        rows["mean_model_over_realized"].append(float(np.mean(base[sel] / real[sel])))
        rows["ratio_of_means"].append(float(pred[sel].mean() / real[sel].mean()))
    summary = {k_: np.asarray(v) for k_, v in rows.items()}
    head = "coherent-exposure: predicted/realized " + ", ".join(
        f"rho={r:g}: {m:.3f}" for r, m in zip(grid, summary["mean_predicted_over_realized"]))
    return ExperimentResult("coherent_exposure", cfg, {"summary": summary, "trials": trials},
                            head, _seed_info(cfg))


RUNNERS = {
    "toy_model": run_toy_model,
    "frontier": run_frontier,
    "wishart_oracle": run_wishart_oracle,
    "asset_bias_grid": run_asset_bias_grid,
    "factor_bias": run_factor_bias,
    "backtest": run_backtest,
    "asset_correction": run_asset_correction,
    "factor_correction": run_factor_correction,
    "coherent_exposure": run_coherent_exposure,
}


def run_experiment(config: ExperimentConfig, panel=None, threads: int = 1) -> ExperimentResult:
    """Dispatch on ``config.experiment``."""
    fn = RUNNERS[config.experiment]
    if config.experiment in ("asset_bias_grid", "backtest"):
        return fn(config, panel=panel, threads=threads)
    return fn(config, threads=threads)

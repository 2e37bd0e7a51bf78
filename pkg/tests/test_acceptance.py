"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to interleave the
lines with pytest's own output). Tolerances are the stated ones; no test
is loosened to pass.
"""

import datetime as dt
import time

import numpy as np
import pytest

from sorisk.cli import run as cli_run
from sorisk.config import default_config
from sorisk.experiments import (random_normalized_exposures, run_asset_bias_grid,
                                run_asset_correction, run_coherent_exposure,
                                run_factor_bias, run_factor_correction, run_frontier,
                                run_toy_model, run_wishart_oracle)
from sorisk.factor_model import (build_synthetic_world, decompose_alpha,
                                 estimate_factor_returns, factor_optimal_portfolio,
                                 portfolio_w_scale, true_factor_risk)
from sorisk.portfolio import LinearConstraints, decompose_risk, min_variance_portfolio
from sorisk.sampling import random_covariance, sample_covariance_estimates, trial_rng
from sorisk.second_order import sandwich_coefficient

SEED = 20240611


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_criterion_01_toy_model(report):
    res, secs = _timed(run_toy_model, default_config("toy_model", master_seed=SEED, n_trials=1_000_000))
    s = res.summary
    active, passive, expect = s["mean_active"][0], s["mean_passive"][0], s["expected_passive"][0]
    checks = {"active in 8.7% +- 0.2%": abs(active - 0.087) <= 0.002,
              "passive within 0.2% of expectation": abs(passive - expect) <= 0.002,
              "runtime < 10 s": secs < 10}
    ok = all(checks.values())
    report(1, ok, f"active {active:.5f} (se {s['se_active'][0]:.1e}), passive {passive:.5f} vs "
                  f"{expect:.5f}, {secs:.1f}s; failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_02_wishart(report):
    t0 = time.perf_counter()
    small = run_wishart_oracle(default_config("wishart_oracle", master_seed=SEED, n_assets=2,
                                              t_obs=10, n_trials=100000)).summary
    big = run_wishart_oracle(default_config("wishart_oracle", master_seed=SEED, n_assets=10,
                                            t_obs=30, n_trials=100000)).summary
    secs = time.perf_counter() - t0
    inv_target = 1.111
    z_inv = (small["mc_coefficient"][0] - inv_target) / small["se_coefficient"][0]
    z_sand = (small["mc_coefficient"][1] - 3.214) / small["se_coefficient"][1]
    assert sandwich_coefficient(2, 10) == pytest.approx(900 / 280)
    big_z = big["z_exact"]
    checks = {"N=2 E[inv] within 3 SE of 1.111": abs(z_inv) <= 3,
              "N=2 E[sandwich] within 3 SE of 3.214": abs(z_sand) <= 3,
              "N=10,T=30 both within 3 SE of exact": bool(np.all(np.abs(big_z) <= 3)),
              "runtime < 30 s": secs < 30}
    ok = all(checks.values())
    report(2, ok, f"N=2 inverse {small['mc_coefficient'][0]:.4f} (z vs 1.111 = {z_inv:.1f}; "
                  f"exact T/(T-N-1) = {small['coefficient_exact'][0]:.4f}, z = {small['z_exact'][0]:.2f}), "
                  f"sandwich {small['mc_coefficient'][1]:.4f} (z = {z_sand:.2f}); N=10 z = "
                  f"{big_z[0]:.2f}, {big_z[1]:.2f}; {secs:.1f}s; failed: "
                  f"{[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_03_frontier(report):
    res, secs = _timed(run_frontier, default_config("frontier", master_seed=SEED, n_assets=50,
                                                    t_obs=100, n_trials=200))
    s = res.summary
    nr, cr = s["naive_over_realized"], s["corrected_over_realized"]
    checks = {"naive/realized in [0.45, 0.55]": bool(np.all((nr >= 0.45) & (nr <= 0.55))),
              "corrected/realized in [0.95, 1.05]": bool(np.all((cr >= 0.95) & (cr <= 1.05))),
              "realized >= frontier every trial": bool(np.all(res.tables["trials"]["realized_above_frontier"] == 1)),
              "5-point grid": len(s["R"]) == 5,
              "runtime < 2 min": secs < 120}
    ok = all(checks.values())
    report(3, ok, f"naive/realized {nr.min():.3f}..{nr.max():.3f}, corrected/realized "
                  f"{cr.min():.3f}..{cr.max():.3f}, {secs:.1f}s; failed: "
                  f"{[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_04_asset_correction(report):
    res, secs = _timed(run_asset_correction, default_config(
        "asset_correction", master_seed=SEED, n_assets=20, t_obs=60, n_trials=10000))
    s = res.summary
    naive, corr = s["naive_over_true"][0], s["corrected_over_true"][0]
    target = (1 - 20 / 60) ** 2
    checks = {"corrected/true in [0.95, 1.05]": 0.95 <= corr <= 1.05,
              "naive/true within 5% of 0.444": abs(naive / target - 1) <= 0.05,
              "runtime < 1 min": secs < 60}
    ok = all(checks.values())
    report(4, ok, f"naive/true {naive:.4f} (target {target:.4f}), corrected/true {corr:.4f}, "
                  f"{secs:.1f}s; failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_05_bias_grid(report):
    res, secs = _timed(run_asset_bias_grid, default_config("asset_bias_grid", master_seed=SEED,
                                                           n_trials=50))
    s = res.summary
    naive, ctl, diff = s["mean_b_naive"], s["mean_b_control"], s["corrected_minus_control"]
    bad_ctl = [f"N={n},T/N={r:g}:{c:.3f}" for n, r, c in zip(s["n_assets"], s["t_over_n"], ctl)
               if not 0.95 <= c <= 1.05]
    checks = {"naive B > 1.15 in every cell": bool(np.all(naive > 1.15)),
              "control B in [0.95, 1.05] in every cell": not bad_ctl,
              "|corrected - control| <= 0.1 in every cell": bool(np.all(np.abs(diff) <= 0.1)),
              "24 cells": len(naive) == 24,
              "runtime < 10 min": secs < 600}
    ok = all(checks.values())
    report(5, ok, f"naive B min {naive.min():.3f}, max |corrected-control| {np.abs(diff).max():.3f}, "
                  f"control B {ctl.min():.3f}..{ctl.max():.3f}, out-of-band control cells {bad_ctl}, "
                  f"{secs:.0f}s; failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_06_factor_correction(report):
    res, secs = _timed(run_factor_correction, default_config(
        "factor_correction", master_seed=SEED, n_assets=1000, k_factors=10, t_obs=40, n_trials=5000))
    s = res.summary
    naive, corr = s["naive_over_true"][0], s["corrected_over_true"][0]
    target = (1 - 10 / 40) ** 2
    checks = {"naive/true within 5% of 0.5625": abs(naive / target - 1) <= 0.05,
              "corrected/true in [0.95, 1.05]": 0.95 <= corr <= 1.05,
              "runtime < 5 min": secs < 300}
    ok = all(checks.values())
    report(6, ok, f"naive/true {naive:.4f} (target {target:.4f}), corrected/true {corr:.4f}, "
                  f"{secs:.1f}s; failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_07_factor_bias_series(report):
    res = run_factor_bias(default_config("factor_bias", master_seed=SEED))
    s = res.summary
    series = res.tables["series"]
    expect = s["expected_naive"][0]
    naive = s["mean_opt_naive"][0]
    gap = np.abs(series["opt_corrected"] - series["control_naive"])
    checks = {"naive trailing B within 10% of (1-K/T)^-1": abs(naive / expect - 1) <= 0.10,
              "corrected matches control within 0.1 throughout": bool(np.all(gap <= 0.1))}
    ok = all(checks.values())
    report(7, ok, f"naive trailing B {naive:.3f} (pointwise {series['opt_naive'].min():.3f}.."
                  f"{series['opt_naive'].max():.3f}) vs {expect:.3f}, corrected "
                  f"{s['mean_opt_corrected'][0]:.3f}, control {s['mean_control'][0]:.3f}, "
                  f"max gap {gap.max():.4f} at step {int(series['step'][np.argmax(gap)])}; failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


def test_criterion_08_coherent_exposure(report):
    res = run_coherent_exposure(default_config("coherent_exposure", master_seed=SEED,
                                               n_assets=2000, k_factors=5, n_trials=100))
    s = res.summary
    ratio = s["mean_predicted_over_realized"]
    ok = len(ratio) == 3 and bool(np.all(np.abs(ratio - 1) <= 0.10))
    report(8, ok, "predicted/realized " + ", ".join(
        f"rho={r:g}: {m:.4f} (model alone {b:.3f})"
        for r, m, b in zip(s["rho"], ratio, s["mean_model_over_realized"])))
    assert ok


def test_criterion_09_identities(report):
    t0 = time.perf_counter()
    worst = {"fhat": 0.0, "cross": 0.0, "truef": 0.0, "alpha": 0.0}
    for trial in range(20):
        rng = trial_rng(SEED, "trial", trial)
        n, k = 500, 5
        x = random_normalized_exposures(n, k, rng)
        world = build_synthetic_world(x, random_covariance(k, rng, 1e-4, 1e-3), 9e-4, 0.1, rng)
        r, f = world.simulate_returns(20, rng)
        e = r - world.true_exposures @ f
        f_hat = estimate_factor_returns(x, r)
        worst["fhat"] = max(worst["fhat"], float(np.max(np.abs(f_hat - f - x.T @ e / n))))

        omega = random_covariance(30, rng)
        alpha = 0.05 * rng.standard_normal(30)
        cons = LinearConstraints.budget_and_return(alpha, 0.03)
        w_star = min_variance_portfolio(omega, cons)
        w_hat = min_variance_portfolio(sample_covariance_estimates(omega, 60, 1, rng)[0], cons)
        worst["cross"] = max(worst["cross"], abs(decompose_risk(omega, w_star, w_hat).cross_term))

        model = world.model()
        alpha_f = world.true_exposures @ rng.standard_normal(k)
        port = factor_optimal_portfolio(model, alpha_f)
        dec = decompose_alpha(model, alpha_f)
        ws = portfolio_w_scale(port)
        ep = world.exposure_noise.T @ dec.alpha_perp
        rhs = ws ** 2 * (ep @ world.true_factor_cov @ ep + 2 * 9e-4 * dec.a_vec @ ep)
        lhs = true_factor_risk(world, port) - model.factor_variance(port.weights)
        worst["truef"] = max(worst["truef"], abs(lhs - rhs) / abs(rhs))

        a2 = rng.standard_normal(n)
        d2 = decompose_alpha(model, a2)
        worst["alpha"] = max(worst["alpha"], float(np.max(np.abs(x @ d2.a_vec + d2.alpha_perp - a2))))
    secs = time.perf_counter() - t0
    checks = {"f_hat identity 1e-10": worst["fhat"] <= 1e-10,
              "risk decomposition cross-term < 1e-10": worst["cross"] < 1e-10,
              "true factor risk identity 1e-8 relative": worst["truef"] <= 1e-8,
              "alpha reconstruction 1e-12": worst["alpha"] <= 1e-12,
              "runtime < 10 s": secs < 10}
    ok = all(checks.values())
    report(9, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {secs:.1f}s")
    assert ok, checks


def _write_panel_csv(path, rng, n=12, length=300):
    d0 = dt.date(2019, 1, 1)
    with open(path, "w") as fh:
        fh.write("date," + ",".join(f"S{i}" for i in range(n)) + "\n")
        for t in range(length):
            vals = 0.01 * rng.standard_normal(n)
            fh.write((d0 + dt.timedelta(days=t)).isoformat() + ","
                     + ",".join(repr(float(v)) for v in vals) + "\n")


CLI_CONFIGS = {
    "toy": "experiment = toy_model\nmaster_seed = 5\nn_trials = 20000\n",
    "frontier": "experiment = frontier\nmaster_seed = 5\nn_trials = 20\n",
    "wishart": "experiment = wishart_oracle\nmaster_seed = 5\nn_trials = 20000\n",
    "bias-grid": ("experiment = asset_bias_grid\nmaster_seed = 5\nn_trials = 2\n[parameters]\n"
                  "n_grid = 10, 25\nt_over_n_grid = 1.5, 3\nn_universe = 40\npanel_length = 300\n"),
    "factor-bias": ("experiment = factor_bias\nmaster_seed = 5\nn_trials = 2\n[parameters]\n"
                    "n_assets = 200\nk_factors = 10\nt_obs = 60\nn_portfolios = 50\n"
                    "panel_length = 200\ntrailing_window = 52\n"),
    "backtest": ("experiment = backtest\nmaster_seed = 5\nn_trials = 4\n[parameters]\n"
                 "t_obs = 40\nn_assets = 8\n"),
}


def test_criterion_10_determinism(report, tmp_path):
    data = tmp_path / "returns.csv"
    _write_panel_csv(data, np.random.default_rng(1))
    mismatched = []
    for cmd, body in CLI_CONFIGS.items():
        head, _, params = body.partition("[parameters]\n")
        cfg = tmp_path / f"{cmd}.cfg"
        cfg.write_text("[experiment]\n" + head + ("[parameters]\n" + params if params else ""))
        extra = ["--data", str(data)] if cmd == "backtest" else []
        first, second = tmp_path / f"{cmd}-1", tmp_path / f"{cmd}-8"
        assert cli_run([cmd, "--config", str(cfg), "--out", str(first), "--threads", "1", *extra]) == 0
        assert cli_run([cmd, "--config", str(first / "manifest.json"), "--out", str(second),
                        "--threads", "8"]) == 0
        files = lambda d: {p.name: p.read_bytes() for p in d.iterdir() if p.name != "manifest.json"}
        if files(first) != files(second) or not files(first):
            mismatched.append(cmd)
    ok = not mismatched
    report(10, ok, f"{len(CLI_CONFIGS)} subcommands rerun from manifest at --threads 8; "
                   f"mismatched: {mismatched}")
    assert ok

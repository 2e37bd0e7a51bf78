import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sorisk import _accel
from sorisk.kernels import rolling_forecasts, trailing_std

BACKENDS = ["numpy"] + (["numba"] if _accel.NUMBA_AVAILABLE else [])


def _reference(values, window, alpha, b, demean):
    n, length = values.shape
    quad_o, real_o, quad_f, real_f = [], [], [], []
    for t in range(window - 1, length - 1):
        x = values[:, t - window + 1 : t + 1]
        if demean:
            x = x - x.mean(axis=1, keepdims=True)
        s = x @ x.T / window
        w = np.linalg.solve(s, alpha)
        quad_o.append(w @ s @ w)
        real_o.append(w @ values[:, t + 1])
        quad_f.append(b @ s @ b)
        real_f.append(b @ values[:, t + 1])
    return map(np.array, (quad_o, real_o, quad_f, real_f))


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("demean", [False, True])
def test_rolling_matches_direct_recompute(backend, demean, rng):
    values = rng.standard_normal((4, 300))
    alpha = rng.standard_normal(4)
    b = rng.standard_normal(4)
    out = rolling_forecasts(values, 20, alpha[:, None], b[:, None], demean=demean, backend=backend)
    qo, ro, qf, rf = _reference(values, 20, alpha, b, demean)
    np.testing.assert_allclose(out["opt_quad"][:, 0], qo, rtol=1e-9)
    np.testing.assert_allclose(out["opt_realized"][:, 0], ro, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(out["fix_quad"][:, 0], qf, rtol=1e-9)
    np.testing.assert_allclose(out["fix_realized"][:, 0], rf, rtol=1e-12)
    assert np.all(out["counts"] == 20)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("numba not installed")
    values = rng.standard_normal((6, 700))
    valid = rng.random(700) > 0.05
    opt = rng.standard_normal((6, 3))
    fix = rng.standard_normal((6, 2))
    a = rolling_forecasts(values, 30, opt, fix, valid=valid, demean=True, backend="numpy")
    b = rolling_forecasts(values, 30, opt, fix, valid=valid, demean=True, backend="numba")
    for key in a:
        np.testing.assert_allclose(a[key], b[key], rtol=1e-10, atol=1e-13, equal_nan=True)


def test_no_look_ahead(rng):
    # changing period t+1 must not change the forecast made at t
    values = rng.standard_normal((3, 60))
    alpha = rng.standard_normal(3)
    base = rolling_forecasts(values, 10, alpha, backend="numpy")
    bumped = values.copy()
    bumped[:, 35] += 5.0
    new = rolling_forecasts(bumped, 10, alpha, backend="numpy")
    step = 35 - 10  # forecast made at period 34 scores period 35
    np.testing.assert_array_equal(base["opt_quad"][: step + 1], new["opt_quad"][: step + 1])
    assert base["opt_realized"][step] != new["opt_realized"][step]
    assert np.array_equal(base["opt_realized"][:step], new["opt_realized"][:step])


def test_invalid_columns_are_skipped(rng):
    values = rng.standard_normal((2, 40))
    valid = np.ones(40, dtype=bool)
    valid[15] = False
    out = rolling_forecasts(values, 10, fix_targets=np.ones(2), valid=valid, backend="numpy")
    # step s covers periods s .. s + 9 and scores period s + 10
    assert out["counts"][5] == 10 and out["counts"][6] == 9
    assert np.isnan(out["fix_realized"][5])
    assert np.isfinite(out["fix_realized"][6])


@pytest.mark.parametrize("backend", BACKENDS)
def test_trailing_std_matches_numpy(backend, rng):
    z = rng.standard_normal((80, 3))
    z[10, 1] = np.nan
    got = trailing_std(z, 12, backend=backend)
    assert np.all(np.isnan(got[:11]))
    for t in range(11, 80):
        win = z[t - 11 : t + 1]
        for p in range(3):
            col = win[:, p][np.isfinite(win[:, p])]
            np.testing.assert_allclose(got[t, p], np.std(col, ddof=1), rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_quad_is_positive(n, seed):
    rng = np.random.default_rng(seed)
    out = rolling_forecasts(rng.standard_normal((n, 4 * n + 5)), 3 * n, rng.standard_normal(n),
                            backend="numpy")
    assert np.all(out["opt_quad"] > 0)

"""Hot inner loops of the rolling backtests.

Each kernel exists twice: a numba-compiled loop and a numpy reference. The
public wrappers pick one according to :mod:`sorisk._accel`; pass
``backend="numpy"`` or ``backend="numba"`` to force a path.

``rolling_forecasts`` walks a rolling estimation window over a panel of
observation columns (assets or factors). For each forecast time ``t`` the
window covers columns ``t - window + 1 .. t`` and the realized outcome is
taken from column ``t + 1``; no later column ever enters the estimate.

For every step it reports, per portfolio target vector:

* ``quad``: ``x' S x`` where ``S`` is the window second-moment matrix
* ``realized``: ``x' v[:, t + 1]`` (NaN if that column is invalid)
* ``sqnorm``: ``x' x``

where ``x = S^{-1} a`` for the optimized targets and ``x = b`` for the fixed
ones.
"""

import numpy as np

from ._accel import njit, resolve_backend

# Full recomputation cadence for the running window sums (bounds drift).
REFRESH_EVERY = 256


@njit(cache=True, nogil=True)
def _rolling_numba(values, valid, opt_rows, fix_rows, window, demean):
    # targets arrive transposed, one contiguous row per portfolio
    n, length = values.shape
    p_opt = opt_rows.shape[0]
    p_fix = fix_rows.shape[0]
    n_steps = length - window
    quad_opt = np.full((n_steps, p_opt), np.nan)
    real_opt = np.full((n_steps, p_opt), np.nan)
    norm_opt = np.full((n_steps, p_opt), np.nan)
    quad_fix = np.full((n_steps, p_fix), np.nan)
    real_fix = np.full((n_steps, p_fix), np.nan)
    norm_fix = np.full((n_steps, p_fix), np.nan)
    counts = np.zeros(n_steps, dtype=np.int64)

    gram = np.zeros((n, n))
    total = np.zeros(n)
    cnt = 0
    for step in range(n_steps):
        t = window - 1 + step
        start = t - window + 1
        if step % REFRESH_EVERY == 0:
            gram[:, :] = 0.0
            total[:] = 0.0
            cnt = 0
            for s in range(start, t + 1):
                if valid[s]:
                    cnt += 1
                    for i in range(n):
                        vi = values[i, s]
                        total[i] += vi
                        for j in range(n):
                            gram[i, j] += vi * values[j, s]
        else:
            s_old = start - 1
            if valid[s_old]:
                cnt -= 1
                for i in range(n):
                    vi = values[i, s_old]
                    total[i] -= vi
                    for j in range(n):
                        gram[i, j] -= vi * values[j, s_old]
            if valid[t]:
                cnt += 1
                for i in range(n):
                    vi = values[i, t]
                    total[i] += vi
                    for j in range(n):
                        gram[i, j] += vi * values[j, t]
        counts[step] = cnt
        if cnt < 2:
            continue
        cov = gram / cnt
        if demean:
            mean = total / cnt
            for i in range(n):
                for j in range(n):
                    cov[i, j] -= mean[i] * mean[j]
        nxt_ok = valid[t + 1]
        nxt = np.empty(n)
        for i in range(n):
            nxt[i] = values[i, t + 1]

        for p in range(p_fix):
            x = fix_rows[p]
            sx = cov @ x
            quad_fix[step, p] = np.dot(x, sx)
            norm_fix[step, p] = np.dot(x, x)
            if nxt_ok:
                real_fix[step, p] = np.dot(x, nxt)

        if p_opt == 0 or cnt <= n:
            continue
        ok = True
        try:
            chol = np.linalg.cholesky(cov)
        except Exception:  # noqa: BLE001 -- numba only supports broad catches
            ok = False
        if not ok:
            continue
        for p in range(p_opt):
            a = opt_rows[p]
            # forward then backward substitution
            y = np.empty(n)
            for i in range(n):
                acc = a[i]
                for k in range(i):
                    acc -= chol[i, k] * y[k]
                y[i] = acc / chol[i, i]
            x = np.empty(n)
            for i in range(n - 1, -1, -1):
                acc = y[i]
                for k in range(i + 1, n):
                    acc -= chol[k, i] * x[k]
                x[i] = acc / chol[i, i]
            quad_opt[step, p] = np.dot(x, a)
            norm_opt[step, p] = np.dot(x, x)
            if nxt_ok:
                real_opt[step, p] = np.dot(x, nxt)
    return quad_opt, real_opt, norm_opt, quad_fix, real_fix, norm_fix, counts


def _rolling_numpy(values, valid, opt_targets, fix_targets, window, demean):
    n, length = values.shape
    p_opt = opt_targets.shape[1]
    p_fix = fix_targets.shape[1]
    n_steps = length - window
    quad_opt = np.full((n_steps, p_opt), np.nan)
    real_opt = np.full((n_steps, p_opt), np.nan)
    norm_opt = np.full((n_steps, p_opt), np.nan)
    quad_fix = np.full((n_steps, p_fix), np.nan)
    real_fix = np.full((n_steps, p_fix), np.nan)
    norm_fix = np.full((n_steps, p_fix), np.nan)
    counts = np.zeros(n_steps, dtype=np.int64)

    masked = np.where(valid[None, :], values, 0.0)
    gram = np.zeros((n, n))
    total = np.zeros(n)
    cnt = 0
    for step in range(n_steps):
        t = window - 1 + step
        start = t - window + 1
        if step % REFRESH_EVERY == 0:
            block = masked[:, start : t + 1]
            gram = block @ block.T
            total = block.sum(axis=1)
            cnt = int(valid[start : t + 1].sum())
        else:
            old = masked[:, start - 1]
            new = masked[:, t]
            gram += np.outer(new, new) - np.outer(old, old)
            total += new - old
            cnt += int(valid[t]) - int(valid[start - 1])
        counts[step] = cnt
        if cnt < 2:
            continue
        cov = gram / cnt
        if demean:
            mean = total / cnt
            cov = cov - np.outer(mean, mean)
        nxt = values[:, t + 1]
        if p_fix:
            quad_fix[step] = np.einsum("ip,ip->p", fix_targets, cov @ fix_targets)
            norm_fix[step] = np.einsum("ip,ip->p", fix_targets, fix_targets)
            if valid[t + 1]:
                real_fix[step] = nxt @ fix_targets
        if p_opt == 0 or cnt <= n:
            continue
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            continue
        y = np.linalg.solve(chol, opt_targets)
        x = np.linalg.solve(chol.T, y)
        quad_opt[step] = np.einsum("ip,ip->p", x, opt_targets)
        norm_opt[step] = np.einsum("ip,ip->p", x, x)
        if valid[t + 1]:
            real_opt[step] = nxt @ x
    return quad_opt, real_opt, norm_opt, quad_fix, real_fix, norm_fix, counts


def rolling_forecasts(values, window, opt_targets=None, fix_targets=None,
                      valid=None, demean=False, backend=None):
    """Rolling-window quadratic forecasts and next-period outcomes.

    Parameters
    ----------
    values : ndarray, shape (n, L)
        Observation columns in time order.
    window : int
        Estimation window length in columns.
    opt_targets : ndarray, shape (n, p_opt), optional
        Vectors ``a`` for portfolios ``x = S^{-1} a`` rebuilt every step.
    fix_targets : ndarray, shape (n, p_fix), optional
        Fixed portfolio vectors ``b``.
    valid : ndarray of bool, shape (L,), optional
        Column validity; invalid columns are skipped in the window sums and
        yield NaN realized outcomes.
    demean : bool
        Subtract the window mean before forming the second moments.

    Returns
    -------
    dict
        ``opt_quad``, ``opt_realized``, ``opt_sqnorm``, ``fix_quad``,
        ``fix_realized``, ``fix_sqnorm`` (each ``(L - window, p)``) and
        ``counts`` (valid columns per window).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    n, length = values.shape
    if not 1 <= window < length:
        raise ValueError(f"window {window} needs 1 <= window < {length}")
    opt = np.zeros((n, 0)) if opt_targets is None else np.asarray(opt_targets, dtype=np.float64)
    fix = np.zeros((n, 0)) if fix_targets is None else np.asarray(fix_targets, dtype=np.float64)
    if opt.ndim == 1:
        opt = opt[:, None]
    if fix.ndim == 1:
        fix = fix[:, None]
    if opt.shape[0] != n or fix.shape[0] != n:
        raise ValueError("target vectors must have one entry per panel row")
    ok = np.ones(length, dtype=np.bool_) if valid is None else np.asarray(valid, dtype=np.bool_)
    if ok.shape != (length,):
        raise ValueError("valid must have one flag per column")
    values = np.where(ok[None, :], values, 0.0)
    if resolve_backend(backend) == "numba":
        out = _rolling_numba(values, ok, np.ascontiguousarray(opt.T),
                             np.ascontiguousarray(fix.T), int(window), bool(demean))
    else:
        out = _rolling_numpy(values, ok, opt, fix, int(window), bool(demean))
    keys = ("opt_quad", "opt_realized", "opt_sqnorm",
            "fix_quad", "fix_realized", "fix_sqnorm", "counts")
    return dict(zip(keys, out))


@njit(cache=True, nogil=True)
def _trailing_std_numba(z, window):
    n_steps, p = z.shape
    out = np.full((n_steps, p), np.nan)
    for j in range(p):
        for t in range(window - 1, n_steps):
            cnt = 0
            s = 0.0
            for k in range(t - window + 1, t + 1):
                v = z[k, j]
                if not np.isnan(v):
                    cnt += 1
                    s += v
            if cnt < 2:
                continue
            mean = s / cnt
            ss = 0.0
            for k in range(t - window + 1, t + 1):
                v = z[k, j]
                if not np.isnan(v):
                    ss += (v - mean) ** 2
            out[t, j] = np.sqrt(ss / (cnt - 1))
    return out


def _trailing_std_numpy(z, window):
    n_steps, p = z.shape
    out = np.full((n_steps, p), np.nan)
    if n_steps < window:
        return out
    views = np.lib.stride_tricks.sliding_window_view(z, window, axis=0)
    cnt = np.sum(~np.isnan(views), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nansum(views, axis=-1) / cnt
        ss = np.nansum((views - mean[..., None]) ** 2, axis=-1)
        sd = np.sqrt(ss / (cnt - 1))
    sd[cnt < 2] = np.nan
    out[window - 1 :] = sd
    return out


def trailing_std(z, window, backend=None):
    """Sample standard deviation (divisor ``count - 1``) over a trailing window.

    NaN entries are skipped. Rows before the window is full are NaN.
    """
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[:, None]
    if window < 2:
        raise ValueError("trailing window must hold at least 2 observations")
    fn = _trailing_std_numba if resolve_backend(backend) == "numba" else _trailing_std_numpy
    out = fn(np.ascontiguousarray(z), int(window))
    return out[:, 0] if squeeze else out

"""Seeded random generation: per-trial streams, covariances, Wishart draws, panels."""

import numpy as np

# Stream tags keep independent uses of one master seed apart.
STREAMS = {
    "setup": 0,
    "trial": 1,
    "panel": 2,
}


def trial_rng(master_seed, *key):
    """Generator for one unit of work, keyed by a counter tuple.

    The stream depends only on ``(master_seed, key)``, so trials can run in
    any order or concurrently and still draw identical numbers.
    """
    key = tuple(STREAMS.get(k, k) if isinstance(k, str) else int(k) for k in key)
    ss = np.random.SeedSequence(entropy=int(master_seed) % (1 << 64), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def random_orthogonal(n, rng):
    """Haar-distributed orthogonal matrix."""
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diag(r))


def random_covariance(n, rng, eig_low=0.01, eig_high=0.25):
    """``Q diag(lambda) Q'`` with Haar Q and log-uniform eigenvalues in [eig_low, eig_high]."""
    if not 0 < eig_low <= eig_high:
        raise ValueError("need 0 < eig_low <= eig_high")
    lam = np.exp(rng.uniform(np.log(eig_low), np.log(eig_high), n))
    q = random_orthogonal(n, rng)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def bartlett_factor(n, dof, size, rng):
    """Lower-triangular Bartlett factors A with ``A A' ~ Wishart(1, dof)``.

    Diagonal ``A_ii = sqrt(chi2(dof - i))`` (0-based i), strictly lower
    entries standard normal.
    """
    if dof <= n - 1:
        raise ValueError(f"Bartlett decomposition needs dof > N - 1 (dof={dof}, N={n})")
    a = np.zeros((size, n, n))
    rows, cols = np.tril_indices(n, -1)
    a[:, rows, cols] = rng.standard_normal((size, rows.size))
    diag = np.sqrt(rng.chisquare(dof - np.arange(n), size=(size, n)))
    idx = np.arange(n)
    a[:, idx, idx] = diag
    return a


def sample_wishart(cov, dof, size, rng, method="bartlett"):
    """Draw ``size`` Wishart(cov, dof) matrices, shape (size, N, N).

    ``method="bartlett"`` uses the triangular decomposition; ``"panel"``
    forms ``z z'`` from explicit Gaussian observations and serves as an
    independent cross-check.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    if method == "bartlett":
        la = chol @ bartlett_factor(n, dof, size, rng)
        w = la @ np.swapaxes(la, 1, 2)
    elif method == "panel":
        z = chol @ rng.standard_normal((size, n, int(dof)))
        w = z @ np.swapaxes(z, 1, 2)
    else:
        raise ValueError(f"unknown Wishart sampling method {method!r}")
    return 0.5 * (w + np.swapaxes(w, 1, 2))


def sample_covariance_estimates(cov, t, size, rng, method="bartlett"):
    """Sample-covariance estimates ``r r'/T`` of zero-mean Gaussian data."""
    return sample_wishart(cov, t, size, rng, method) / t


def student_t_dof(kurtosis):
    """Degrees of freedom giving a multivariate-t marginal kurtosis (Gaussian = 3)."""
    if kurtosis <= 3:
        raise ValueError("Student-t kurtosis must exceed 3")
    return 4.0 + 6.0 / (kurtosis - 3.0)


def gaussian_panel(cov, t, rng, kurtosis=None):
    """N x T zero-mean returns with covariance ``cov``.

    With ``kurtosis > 3`` each period is a multivariate Student-t draw scaled to
    the same covariance, so every asset shares that kurtosis.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    z = np.linalg.cholesky(cov) @ rng.standard_normal((n, t))
    if kurtosis is None or kurtosis == 3:
        return z
    nu = student_t_dof(kurtosis)
    mix = np.sqrt((nu - 2.0) / rng.chisquare(nu, size=t))
    return z * mix[None, :]

"""Linear factor risk models ``Omega = X F X' + Delta``."""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .covariance import ReturnsPanel
from .errors import ConditioningError, DimensionError, ParameterError
from .portfolio import Portfolio, validate_alpha


@dataclass(frozen=True)
class FactorModel:
    exposures: np.ndarray
    factor_cov: np.ndarray
    specific_var: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.exposures, dtype=float))
        f = np.atleast_2d(np.asarray(self.factor_cov, dtype=float))
        d = np.asarray(self.specific_var, dtype=float)
        if d.ndim == 0:
            d = np.full(x.shape[0], float(d))
        n, k = x.shape
        if f.shape != (k, k):
            raise DimensionError(f"factor covariance {f.shape} does not match K={k}")
        if d.shape != (n,):
            raise DimensionError("need one specific variance per asset")
        if np.any(d <= 0):
            raise ParameterError("specific variances must be positive")
        scale = max(np.max(np.abs(f)), np.finfo(float).tiny)
        if np.max(np.abs(f - f.T)) > 1e-10 * scale:
            raise ParameterError("factor covariance must be symmetric")
        if np.linalg.eigvalsh(f)[0] < -1e-10 * scale:
            raise ParameterError("factor covariance must be positive semi-definite")
        if np.linalg.matrix_rank(x) < k:
            raise ConditioningError("exposure matrix lacks full column rank")
        object.__setattr__(self, "exposures", x)
        object.__setattr__(self, "factor_cov", 0.5 * (f + f.T))
        object.__setattr__(self, "specific_var", d)

    @property
    def k(self):
        return self.exposures.shape[1]

    @property
    def n(self):
        return self.exposures.shape[0]

    def covariance(self):
        x = self.exposures
        return x @ self.factor_cov @ x.T + np.diag(self.specific_var)

    def factor_variance(self, weights):
        e = self.exposures.T @ np.asarray(weights, dtype=float)
        return float(e @ self.factor_cov @ e)

    def is_normalized(self, tol=1e-8):
        n = self.n
        gram = self.exposures.T @ self.exposures
        uniform = np.ptp(self.specific_var) <= tol * self.specific_var.max()
        return uniform and np.max(np.abs(gram - n * np.eye(self.k))) <= tol * n


@dataclass(frozen=True)
class ScaleMap:
    """Map between an original and a normalized factor basis.

    Normalized weights ``w~`` and original weights ``w`` satisfy
    ``w = asset_scale * w~``; exposures transform as ``X~ = diag(s) X R`` and
    factor returns as ``f~ = P f`` with ``P R = 1``.
    """

    asset_scale: np.ndarray
    rotation: np.ndarray
    inverse_rotation: np.ndarray
    sigma_sq: float
    rank: int

    def weights_to_original(self, w_norm):
        return self.asset_scale * np.asarray(w_norm, dtype=float)

    def weights_to_normalized(self, w):
        return np.asarray(w, dtype=float) / self.asset_scale

    def returns_to_normalized(self, values):
        return self.asset_scale[:, None] * np.asarray(values, dtype=float)

    def alpha_to_normalized(self, alpha):
        return self.asset_scale * np.asarray(alpha, dtype=float)

    def factor_returns_to_normalized(self, f):
        return self.inverse_rotation @ np.asarray(f, dtype=float)


class NormalizedModel(NamedTuple):
    model: FactorModel
    alpha: Optional[np.ndarray]
    scale_map: ScaleMap


def normalize_model_basis(model: FactorModel, alpha=None, sigma_sq: Optional[float] = None,
                          project_rank_deficient: bool = False) -> NormalizedModel:
    """Rescale assets to uniform specific variance and rotate to ``X'X = N 1``.

    Asset i is scaled by ``sigma / sigma_i`` (weights, alphas, exposures and
    returns alike), which turns the weighted regression with weights
    ``sigma_i^{-2}`` into OLS. The uniform level defaults to the mean specific
    variance. If the scaled exposures have rank ``r < K`` the model is either
    rejected or, with ``project_rank_deficient``, projected onto its rank-r
    column space.
    """
    sig2 = float(np.mean(model.specific_var)) if sigma_sq is None else float(sigma_sq)
    scale = np.sqrt(sig2 / model.specific_var)
    xs = scale[:, None] * model.exposures
    n, k = xs.shape
    evals, evecs = np.linalg.eigh(xs.T @ xs / n)
    keep = evals > evals[-1] * 1e-12
    rank = int(keep.sum())
    if rank < k and not project_rank_deficient:
        raise ConditioningError(f"exposures have rank {rank} < K={k}")
    v = evecs[:, keep]
    lam = evals[keep]
    rot = v / np.sqrt(lam)                     # K x r
    inv_rot = np.sqrt(lam)[:, None] * v.T      # r x K
    if rank == k and np.allclose(xs.T @ xs, n * np.eye(k), rtol=0, atol=1e-12 * n):
        rot = np.eye(k)
        inv_rot = np.eye(k)
    x_new = xs @ rot
    f_new = inv_rot @ model.factor_cov @ inv_rot.T
    new_model = FactorModel(x_new, f_new, np.full(n, sig2))
    new_alpha = None if alpha is None else scale * np.asarray(alpha, dtype=float)
    return NormalizedModel(new_model, new_alpha, ScaleMap(scale, rot, inv_rot, sig2, rank))


class FactorRegression(NamedTuple):
    factor_returns: np.ndarray
    residuals: np.ndarray


def estimate_factor_returns(exposures, panel, return_residuals: bool = False):
    """Cross-sectional least squares ``f_t = (X'X)^{-1} X' r_t`` for every period.

    ``panel`` may be a :class:`ReturnsPanel` or an N x T array. Returns the
    K x T factor returns, or ``(factor_returns, residuals)``.
    """
    x = np.atleast_2d(np.asarray(exposures, dtype=float))
    r = panel.values if isinstance(panel, ReturnsPanel) else np.asarray(panel, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.shape[0] != x.shape[0]:
        raise DimensionError("exposures and returns have different asset counts")
    q, rr = np.linalg.qr(x)
    diag = np.abs(np.diag(rr))
    if diag.min() <= diag.max() * 1e-12:
        raise ConditioningError("exposure matrix is rank deficient")
    f = np.linalg.solve(rr, q.T @ r)
    if not return_residuals:
        return f
    return FactorRegression(f, r - x @ f)


def estimate_factor_covariance(factor_returns, demean: bool = False):
    """``f f' / T`` over the supplied factor-return columns."""
    f = np.atleast_2d(np.asarray(factor_returns, dtype=float))
    if demean:
        f = f - f.mean(axis=1, keepdims=True)
    g = f @ f.T / f.shape[1]
    return 0.5 * (g + g.T)


@dataclass(frozen=True)
class AlphaDecomposition:
    a_vec: np.ndarray
    alpha_perp: np.ndarray

    @property
    def alpha_perp_sq(self):
        return float(self.alpha_perp @ self.alpha_perp)


def decompose_alpha(model: FactorModel, alpha) -> AlphaDecomposition:
    """Split alpha into ``X a`` in the exposure span and an orthogonal remainder.

    In a normalized basis this is ``a = X'alpha/N`` and
    ``alpha_perp = (1 - X X'/N) alpha``; for other bases the least-squares
    projection is used, which coincides with it.
    """
    alpha = np.asarray(alpha, dtype=float)
    x = model.exposures
    if alpha.shape != (x.shape[0],):
        raise DimensionError("alpha length does not match the model universe")
    a = np.linalg.lstsq(x, alpha, rcond=None)[0]
    return AlphaDecomposition(a, alpha - x @ a)


def _require_normalized(model):
    if not model.is_normalized():
        raise ParameterError("model must be in the normalized basis (X'X = N 1, uniform specific risk)")


def approx_factor_weights(model: FactorModel, alpha):
    """Unscaled leading-order weights ``alpha_perp + sigma^2 N^{-1} X F^{-1} a``."""
    _require_normalized(model)
    dec = decompose_alpha(model, alpha)
    sig2 = float(model.specific_var[0])
    try:
        finv_a = np.linalg.solve(model.factor_cov, dec.a_vec)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("factor covariance is singular") from exc
    return dec.alpha_perp + sig2 / model.n * (model.exposures @ finv_a), dec


def factor_optimal_portfolio(model: FactorModel, alpha) -> Portfolio:
    """Leading-order maximum-Sharpe weights in a normalized factor model.

    The arbitrary overall scale is fixed so that the naive total volatility
    ``sqrt(w' (X F X' + Delta) w)`` equals one; it is recorded in ``notes``.
    """
    alpha = validate_alpha(alpha, model.n)
    raw, _ = approx_factor_weights(model, alpha)
    naive = model.factor_variance(raw) + float(np.sum(raw * raw * model.specific_var))
    if not naive > 0:
        raise ConditioningError("portfolio has zero forecast variance")
    scale = 1.0 / np.sqrt(naive)
    return Portfolio(raw * scale, "sharpe_unconstrained", alpha, None,
                     (f"w_scale={float(scale)!r}", "scale: unit naive volatility"))


def portfolio_w_scale(portfolio: Portfolio) -> float:
    """Overall constant of a portfolio built by :func:`factor_optimal_portfolio`."""
    for note in portfolio.notes:
        if note.startswith("w_scale="):
            return float(note.split("=", 1)[1])
    raise ParameterError("portfolio carries no w_scale annotation")


def augment_with_alpha_factor(model: FactorModel, alpha, panel, demean: bool = False) -> FactorModel:
    """Add the off-model alpha direction as an extra factor.

    The new exposure column is ``alpha_perp`` with factor returns
    ``alpha_perp' r / |alpha_perp|^2``. Because that column is orthogonal to
    the existing exposures, the existing factor returns are unchanged; the
    (K+1) x (K+1) factor covariance is re-estimated from the panel.
    """
    dec = decompose_alpha(model, alpha)
    perp = dec.alpha_perp
    p2 = float(perp @ perp)
    alpha = np.asarray(alpha, dtype=float)
    if p2 <= 1e-24 * max(float(alpha @ alpha), np.finfo(float).tiny):
        raise ParameterError("alpha already lies in the exposure span; nothing to add")
    r = panel.values if isinstance(panel, ReturnsPanel) else np.asarray(panel, dtype=float)
    f_old = estimate_factor_returns(model.exposures, r)
    f_new = perp @ r / p2
    f_all = np.vstack([f_old, f_new[None, :]])
    x_all = np.column_stack([model.exposures, perp])
    return FactorModel(x_all, estimate_factor_covariance(f_all, demean), model.specific_var)


@dataclass(frozen=True)
class SyntheticFactorWorld:
    """Simulation-side truth: ``X = X_hat + eps`` with ``X_hat' eps = 0``."""

    model_exposures: np.ndarray
    true_exposures: np.ndarray
    true_factor_cov: np.ndarray
    exposure_noise: np.ndarray
    noise_scale: float
    specific_var: np.ndarray

    @property
    def n(self):
        return self.true_exposures.shape[0]

    @property
    def k(self):
        return self.true_exposures.shape[1]

    def model(self, factor_cov=None) -> FactorModel:
        f = self.true_factor_cov if factor_cov is None else factor_cov
        return FactorModel(self.model_exposures, f, self.specific_var)

    def simulate_returns(self, t, rng):
        """N x T returns ``X f + e`` and the true K x T factor returns ``f``."""
        chol = np.linalg.cholesky(self.true_factor_cov)
        f = chol @ rng.standard_normal((self.k, t))
        e = np.sqrt(self.specific_var)[:, None] * rng.standard_normal((self.n, t))
        return self.true_exposures @ f + e, f


def orthogonal_exposure_noise(model_exposures, rho, rng):
    """White-noise errors projected off the model exposures.

    I.i.d. Gaussian entries are projected onto the orthogonal complement of
    the exposure columns and rescaled so that ``E[eps' eps] = N rho^2 1_K``.
    """
    x = np.asarray(model_exposures, dtype=float)
    n, k = x.shape
    if rho == 0:
        return np.zeros_like(x)
    z = rng.standard_normal((n, k))
    q, _ = np.linalg.qr(x)
    z -= q @ (q.T @ z)
    return z * (rho * np.sqrt(n / (n - k)))


def build_synthetic_world(model_exposures, true_factor_cov, specific_var, rho, rng):
    x_hat = np.asarray(model_exposures, dtype=float)
    eps = orthogonal_exposure_noise(x_hat, rho, rng)
    d = np.asarray(specific_var, dtype=float)
    if d.ndim == 0:
        d = np.full(x_hat.shape[0], float(d))
    return SyntheticFactorWorld(x_hat, x_hat + eps, np.asarray(true_factor_cov, dtype=float),
                                eps, float(rho), d)


def true_factor_risk(world: SyntheticFactorWorld, portfolio) -> float:
    """``w' X F X' w`` with the true exposures and factor covariance."""
    w = portfolio.weights if isinstance(portfolio, Portfolio) else np.asarray(portfolio, dtype=float)
    if w.shape != (world.n,):
        raise DimensionError("weights do not match the world universe")
    e = world.true_exposures.T @ w
    return max(float(e @ world.true_factor_cov @ e), 0.0)


def factor_span_control_portfolio(model: FactorModel, rng) -> Portfolio:
    """Control ``w = X b`` with random ``b``: factor exposed but not optimized."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    b = rng.standard_normal(model.k)
    w = model.exposures @ b
    return Portfolio(w / np.abs(w).sum(), "factor_span_control")

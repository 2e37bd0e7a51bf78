"""Second-order risk corrections for optimized portfolios.

An optimizer aligns its weights with the estimation error of the covariance
it is fed, so the in-sample quadratic form ``w' Omega_hat w`` underforecasts
the portfolio's true variance. For ``m`` estimated dimensions (assets, or
factors in a factor model) and ``T`` effective observations the variance is
inflated by ``(1 - m/T)^{-2}``.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .covariance import CovarianceEstimate
from .errors import DimensionError, DivergenceError, ParameterError, StrategyError
from .portfolio import Portfolio, portfolio_variance


class CorrectionFactor(NamedTuple):
    variance_factor: float
    stdev_factor: float


def _correction(m, t_eff, what):
    if m < 0:
        raise ParameterError(f"{what} count must be non-negative, got {m}")
    if not t_eff > 0:
        raise ParameterError(f"effective T must be positive, got {t_eff}")
    if m >= t_eff:
        raise DivergenceError(
            f"correction diverges: number of {what} ({m}) approaches the number "
            f"of observations ({t_eff:g})")
    shrink = 1.0 - m / t_eff
    return CorrectionFactor(shrink ** -2, 1.0 / shrink)


def asset_correction_factor(n: int, t_eff: float) -> CorrectionFactor:
    """Inflation of naive variance and stdev for an N-asset covariance estimate."""
    return _correction(n, t_eff, "assets")


def factor_correction_factor(k: int, t_eff: float) -> CorrectionFactor:
    """Inflation applied to the factor part of a K-factor model forecast."""
    return _correction(k, t_eff, "factors")


def inverse_mean_coefficient(n: int, t: float, exact: bool = True) -> float:
    """Scalar c with ``E[Omega_hat^{-1}] = c Omega^{-1}`` for ``Omega_hat = W/T``.

    ``W`` is Wishart with T degrees of freedom. The exact value is
    ``T / (T - N - 1)``. ``exact=False`` returns the leading-order form
    ``1 / (1 - (N - 1)/T)``, which agrees only to first order in N/T.
    """
    if exact:
        if t <= n + 1:
            raise DivergenceError(f"E[inverse] diverges for T={t} <= N+1={n + 1}")
        return t / (t - n - 1)
    return 1.0 / (1.0 - (n - 1) / t)


def sandwich_coefficient(n: int, t: float) -> float:
    """Scalar c with ``E[Omega_hat^{-1} Omega Omega_hat^{-1}] = c Omega^{-1}``.

    Equals ``T^2 (T-1) / [(T-N)(T-N-1)(T-N-3)]``; finite only for ``T > N + 3``.
    """
    if t <= n + 3:
        raise DivergenceError(f"second inverse moment diverges for T={t} <= N+3={n + 3}")
    return t * t * (t - 1) / ((t - n) * (t - n - 1) * (t - n - 3))


def exact_asset_bias_ratio(n: int, t: float) -> float:
    """Exact ``E[w'Omega w] / E[w'Omega_hat w]`` for unnormalized ``w = Omega_hat^{-1} alpha``."""
    return sandwich_coefficient(n, t) / inverse_mean_coefficient(n, t)


@dataclass(frozen=True)
class RiskForecast:
    """Naive and corrected variance forecasts.

    At asset level ``corrected = naive * factor``. At factor level only the
    factor part is inflated: ``corrected = factor_variance * factor +
    specific_variance``.
    """

    naive_variance: float
    corrected_variance: float
    correction_factor_variance: float
    level: str
    n_or_k: int
    effective_t: float
    factor_variance: Optional[float] = None
    specific_variance: Optional[float] = None

    @property
    def naive_stdev(self):
        return float(np.sqrt(self.naive_variance))

    @property
    def corrected_stdev(self):
        return float(np.sqrt(self.corrected_variance))


def _require_optimized(portfolio):
    if not portfolio.is_optimized:
        raise StrategyError(
            f"strategy {portfolio.strategy!r} does not depend on the estimate; "
            "second-order correction applies only to optimized portfolios")


def corrected_asset_forecast(portfolio: Portfolio, cov: CovarianceEstimate,
                             n: Optional[int] = None) -> RiskForecast:
    """Naive ``w' Omega_hat w`` and its ``(1 - N/T_eff)^{-2}`` inflation."""
    _require_optimized(portfolio)
    n = cov.n if n is None else n
    cf = asset_correction_factor(n, cov.effective_t)
    naive = portfolio_variance(portfolio, cov)
    return RiskForecast(naive, naive * cf.variance_factor, cf.variance_factor,
                        "asset", int(n), float(cov.effective_t))


def corrected_factor_forecast(portfolio: Portfolio, model, t_eff: float) -> RiskForecast:
    """Factor-model forecast with the factor term inflated by ``(1 - K/T_eff)^{-2}``.

    Specific variance is left uncorrected: the diagonal specific risk matrix
    cannot be hedged against by the optimizer.
    """
    _require_optimized(portfolio)
    w = portfolio.weights
    if w.shape[0] != model.exposures.shape[0]:
        raise DimensionError("weights do not match model universe")
    cf = factor_correction_factor(model.k, t_eff)
    exposure = model.exposures.T @ w
    factor_var = max(float(exposure @ model.factor_cov @ exposure), 0.0)
    specific_var = float(np.sum(w * w * model.specific_var))
    return RiskForecast(factor_var + specific_var,
                        factor_var * cf.variance_factor + specific_var,
                        cf.variance_factor, "factor", int(model.k), float(t_eff),
                        factor_var, specific_var)


def risk_forecast(portfolio: Portfolio, cov: CovarianceEstimate) -> RiskForecast:
    """Asset-level forecast for any strategy; controls get a correction factor of 1."""
    if portfolio.is_optimized:
        return corrected_asset_forecast(portfolio, cov)
    naive = portfolio_variance(portfolio, cov)
    return RiskForecast(naive, naive, 1.0, "asset", cov.n, float(cov.effective_t))


@dataclass(frozen=True)
class CoherentErrorInputs:
    alpha_perp_sq: float
    a_vec: np.ndarray
    f_hat: np.ndarray
    sigma_sq: float
    w_scale: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a_vec, dtype=float))
        f = np.atleast_2d(np.asarray(self.f_hat, dtype=float))
        if f.shape != (a.shape[0], a.shape[0]):
            raise DimensionError("factor covariance must be K x K for a length-K a")
        if self.alpha_perp_sq < 0 or self.sigma_sq < 0:
            raise ParameterError("alpha_perp_sq and sigma_sq must be non-negative")
        object.__setattr__(self, "a_vec", a)
        object.__setattr__(self, "f_hat", f)


def coherent_exposure_correction(inputs: CoherentErrorInputs) -> float:
    """Hidden factor variance from exposure error aligned with the off-model alpha.

    Returns ``w^2 (|alpha_perp|^4 a'Fa / (a'a)^2 + 2 |alpha_perp|^2 sigma^2)``,
    to be added to the model factor risk. Assumes alpha lies in the span of
    the true exposures and white-noise exposure errors.
    """
    a = inputs.a_vec
    aa = float(a @ a)
    if aa <= 0:
        raise ParameterError("correction undefined for a zero factor component of alpha")
    p2 = inputs.alpha_perp_sq
    afa = float(a @ inputs.f_hat @ a)
    return inputs.w_scale ** 2 * (p2 * p2 * afa / aa ** 2 + 2.0 * p2 * inputs.sigma_sq)

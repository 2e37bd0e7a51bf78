"""Second-order risk: estimation-error corrections for optimized portfolio risk forecasts."""

__version__ = "0.1.0"

from .errors import (ConditioningError, ConfigError, DataFormatError, DimensionError,
                     DivergenceError, InfeasibleConstraintsError, InsufficientDataError,
                     ParameterError, SecondOrderRiskError, StrategyError)
from .covariance import (CovarianceEstimate, EffectiveWindowSpec, ReturnsPanel, effective_t,
                         estimate_ewma_covariance, estimate_sample_covariance,
                         ewma_effective_t)
from .portfolio import (LinearConstraints, Portfolio, decompose_risk, min_variance_portfolio,
                        portfolio_variance, random_control_portfolio, sharpe_optimal_portfolio)
from .second_order import (CoherentErrorInputs, CorrectionFactor, RiskForecast,
                           asset_correction_factor, coherent_exposure_correction,
                           corrected_asset_forecast, corrected_factor_forecast,
                           factor_correction_factor, risk_forecast)
from .factor_model import (FactorModel, augment_with_alpha_factor, decompose_alpha,
                           estimate_factor_covariance, estimate_factor_returns,
                           factor_optimal_portfolio, normalize_model_basis)
from .backtest import (BiasStatSeries, StrategySpec, TrimRule, apply_trim, bias_statistic,
                       rolling_asset_ensemble, rolling_backtest, rolling_factor_backtest)
from .config import ExperimentConfig, default_config, format_config, parse_config
from .experiments import ExperimentResult, run_experiment

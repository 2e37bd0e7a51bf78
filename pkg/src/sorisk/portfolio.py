"""Optimized and control portfolios, and exact risk quantities."""

from dataclasses import dataclass
from typing import NamedTuple, Optional
import warnings

import numpy as np
from scipy import linalg

from .covariance import CovarianceEstimate
from .errors import (ConditioningError, DimensionError, InfeasibleConstraintsError,
                     ParameterError)

STRATEGIES = ("sharpe_unconstrained", "min_variance_constrained",
              "random_control", "factor_span_control")
OPTIMIZED_STRATEGIES = ("sharpe_unconstrained", "min_variance_constrained")

DEFAULT_CONDITION_CAP = 1e12


class EstimationWarning(UserWarning):
    """The estimate is usable but its error moments may diverge."""


@dataclass(frozen=True)
class LinearConstraints:
    """Equality constraints ``A' w = b`` with ``A`` of shape (N, m)."""

    matrix_a: np.ndarray
    vector_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix_a, dtype=float)
        b = np.atleast_1d(np.asarray(self.vector_b, dtype=float))
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[1] < 1:
            raise DimensionError("constraint matrix must be N x m with m >= 1")
        if b.shape != (a.shape[1],):
            raise DimensionError(f"need {a.shape[1]} constraint targets, got {b.shape}")
        if np.linalg.matrix_rank(a) < a.shape[1]:
            raise InfeasibleConstraintsError("constraint matrix lacks full column rank")
        object.__setattr__(self, "matrix_a", a)
        object.__setattr__(self, "vector_b", b)

    @classmethod
    def budget_and_return(cls, alpha, target_return):
        """Fully invested with fixed expected return: ``1'w = 1``, ``alpha'w = R``."""
        alpha = np.asarray(alpha, dtype=float)
        a = np.column_stack([np.ones_like(alpha), alpha])
        return cls(a, np.array([1.0, float(target_return)]))

    @classmethod
    def budget(cls, n):
        return cls(np.ones((n, 1)), np.array([1.0]))

    def residual(self, weights):
        return self.matrix_a.T @ weights - self.vector_b


@dataclass(frozen=True)
class Portfolio:
    weights: np.ndarray
    strategy: str
    alpha_used: Optional[np.ndarray] = None
    constraints: Optional[LinearConstraints] = None
    notes: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise DimensionError("weights must be a vector")
        if not np.all(np.isfinite(w)):
            raise ParameterError("weights must be finite")
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "weights", w)

    @property
    def is_optimized(self):
        return self.strategy in OPTIMIZED_STRATEGIES

    def scaled(self, factor):
        return Portfolio(self.weights * factor, self.strategy, self.alpha_used,
                         self.constraints, self.notes)


def _matrix(cov):
    return cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)


def validate_alpha(alpha, n=None):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1:
        raise DimensionError("alpha must be a vector")
    if n is not None and alpha.shape[0] != n:
        raise DimensionError(f"alpha has length {alpha.shape[0]}, expected {n}")
    if not np.all(np.isfinite(alpha)):
        raise ParameterError("alpha must be finite")
    if not np.any(alpha):
        raise ParameterError("alpha must not be identically zero")
    return alpha


def factorize(matrix, condition_cap=DEFAULT_CONDITION_CAP):
    """Cholesky factor of a symmetric positive definite matrix with a conditioning guard."""
    eig = np.linalg.eigvalsh(matrix)
    if eig[0] <= 0:
        raise ConditioningError(
            f"matrix is not positive definite (smallest eigenvalue {eig[0]:.3g})",
            condition_number=np.inf)
    cond = eig[-1] / eig[0]
    if cond > condition_cap:
        raise ConditioningError(
            f"condition number {cond:.3g} exceeds cap {condition_cap:.3g}",
            condition_number=cond)
    return linalg.cho_factor(matrix, lower=True)


def _dimension_notes(cov, n):
    if isinstance(cov, CovarianceEstimate) and n >= cov.effective_t:
        msg = (f"N={n} is not below effective T={cov.effective_t:.4g}; "
               "inverse-Wishart moments diverge")
        warnings.warn(msg, EstimationWarning, stacklevel=3)
        return (msg,)
    return ()


def sharpe_optimal_portfolio(cov, alpha, condition_cap=DEFAULT_CONDITION_CAP) -> Portfolio:
    """Unconstrained maximum-Sharpe weights ``Omega^{-1} alpha``, left unnormalized."""
    m = _matrix(cov)
    alpha = validate_alpha(alpha, m.shape[0])
    factor = factorize(m, condition_cap)
    w = linalg.cho_solve(factor, alpha)
    return Portfolio(w, "sharpe_unconstrained", alpha, None, _dimension_notes(cov, m.shape[0]))


def min_variance_portfolio(cov, constraints: LinearConstraints,
                           condition_cap=DEFAULT_CONDITION_CAP) -> Portfolio:
    """Minimizer of ``w' Omega w`` subject to ``A' w = b``.

    Closed form ``Omega^{-1} A (A' Omega^{-1} A)^{-1} b``.
    """
    m = _matrix(cov)
    a = constraints.matrix_a
    if a.shape[0] != m.shape[0]:
        raise DimensionError("constraint matrix rows must match covariance size")
    factor = factorize(m, condition_cap)
    inv_a = linalg.cho_solve(factor, a)
    gram = a.T @ inv_a
    gram = 0.5 * (gram + gram.T)
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= eig[-1] * 1e-13:
        raise InfeasibleConstraintsError("A' Omega^{-1} A is rank deficient")
    try:
        lam = linalg.solve(gram, constraints.vector_b, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise InfeasibleConstraintsError("degenerate constraint system") from exc
    w = inv_a @ lam
    alpha = a[:, 1] if a.shape[1] > 1 else None
    return Portfolio(w, "min_variance_constrained", alpha, constraints,
                     _dimension_notes(cov, m.shape[0]))


def portfolio_variance(portfolio, cov) -> float:
    """Quadratic form ``w' Omega w``; the naive forecast when ``cov`` built the portfolio."""
    w = portfolio.weights if isinstance(portfolio, Portfolio) else np.asarray(portfolio, dtype=float)
    m = _matrix(cov)
    if m.shape != (w.shape[0], w.shape[0]):
        raise DimensionError(f"weights of length {w.shape[0]} vs matrix {m.shape}")
    return max(float(w @ m @ w), 0.0)


class RiskDecomposition(NamedTuple):
    optimal_variance: float
    estimation_penalty: float
    cross_term: float


def decompose_risk(true_cov, w_star, w_hat) -> RiskDecomposition:
    """Split ``w_hat' Omega w_hat`` into optimal risk, estimation penalty and cross term."""
    m = _matrix(true_cov)
    ws = w_star.weights if isinstance(w_star, Portfolio) else np.asarray(w_star, dtype=float)
    wh = w_hat.weights if isinstance(w_hat, Portfolio) else np.asarray(w_hat, dtype=float)
    if ws.shape != wh.shape or m.shape != (ws.shape[0], ws.shape[0]):
        raise DimensionError("portfolio and covariance dimensions disagree")
    dw = wh - ws
    return RiskDecomposition(float(ws @ m @ ws), float(dw @ m @ dw), float(2.0 * ws @ m @ dw))


def random_control_portfolio(n: int, rng) -> Portfolio:
    """I.i.d. Gaussian weights scaled to unit gross exposure (sum of |w| = 1).

    ``rng`` is a :class:`numpy.random.Generator` or anything accepted by
    :func:`numpy.random.default_rng`.
    """
    if n < 1:
        raise ParameterError("need at least one asset")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    w = rng.standard_normal(n)
    return Portfolio(w / np.abs(w).sum(), "random_control")

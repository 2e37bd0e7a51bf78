"""Covariance estimation from return panels and effective observation counts."""

from dataclasses import dataclass, field
import math
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InsufficientDataError, ParameterError

ESTIMATOR_KINDS = ("sample", "ewma", "newey_west")


@dataclass(frozen=True)
class ReturnsPanel:
    """N x T matrix of simple returns with asset and date labels.

    ``valid`` is an optional N x T mask; entries marked False were dropped by a
    trimming rule and must be excluded from estimation and evaluation.
    """

    assets: tuple
    dates: tuple
    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError("panel values must be a 2-D N x T array")
        n, t = values.shape
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.assets) != n or len(self.dates) != t:
            raise DimensionError(
                f"labels ({len(self.assets)} assets, {len(self.dates)} dates) "
                f"do not match values shape {values.shape}"
            )
        if n < 1:
            raise DimensionError("panel needs at least one asset")
        if t < 2:
            raise InsufficientDataError(f"panel needs T >= 2 periods, got {t}")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ParameterError("panel dates must be strictly increasing")
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise DimensionError("valid mask must match values shape")
            object.__setattr__(self, "valid", valid)
        elif not np.all(np.isfinite(values)):
            raise ParameterError("panel contains missing or non-finite returns")

    @classmethod
    def from_array(cls, values, assets=None, dates=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        n, t = values.shape
        assets = tuple(f"A{i}" for i in range(n)) if assets is None else assets
        dates = tuple(range(t)) if dates is None else dates
        return cls(assets, dates, values)

    @property
    def n_assets(self):
        return self.values.shape[0]

    @property
    def n_periods(self):
        return self.values.shape[1]

    def column_valid(self):
        """Boolean per period: True when every asset is valid."""
        if self.valid is None:
            return np.ones(self.n_periods, dtype=bool)
        return self.valid.all(axis=0)

    def select(self, asset_index=None, period_slice=None):
        """Sub-panel by asset positions and/or a period slice."""
        rows = slice(None) if asset_index is None else np.asarray(asset_index)
        cols = slice(None) if period_slice is None else period_slice
        values = self.values[rows][:, cols]
        valid = None if self.valid is None else self.valid[rows][:, cols]
        assets = np.asarray(self.assets, dtype=object)[rows]
        dates = np.asarray(self.dates, dtype=object)[cols]
        return ReturnsPanel(tuple(np.atleast_1d(assets)), tuple(dates), values, valid)


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    effective_t: float
    estimator_kind: str = "sample"
    demeaned: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("covariance matrix must be square")
        scale = max(np.max(np.abs(m)), np.finfo(float).tiny)
        if np.max(np.abs(m - m.T)) > 1e-12 * scale:
            raise ParameterError("covariance matrix is not symmetric")
        object.__setattr__(self, "matrix", m)
        if not self.effective_t > 0:
            raise ParameterError("effective_t must be positive")
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ParameterError(f"unknown estimator kind {self.estimator_kind!r}")

    @property
    def n(self):
        return self.matrix.shape[0]

    def is_psd(self, rel_tol=1e-10):
        eig = np.linalg.eigvalsh(self.matrix)
        return eig[0] >= -rel_tol * max(eig[-1], 0.0)


@dataclass(frozen=True)
class EffectiveWindowSpec:
    """Raw observation count plus optional estimator adjustments."""

    base_t: int
    ewma_half_life: Optional[float] = None
    newey_west_lags: Optional[int] = None
    kurtosis: Optional[float] = None

    def __post_init__(self):
        if not self.base_t > 0:
            raise ParameterError("base_t must be positive")
        if self.ewma_half_life is not None and not self.ewma_half_life > 0:
            raise ParameterError("EWMA half-life must be positive")
        if self.newey_west_lags is not None and self.newey_west_lags < 0:
            raise ParameterError("Newey-West lag count must be non-negative")
        if self.kurtosis is not None and not self.kurtosis > 1:
            raise ParameterError(f"kurtosis must exceed 1, got {self.kurtosis}")


def _usable_columns(panel):
    values = panel.values
    ok = panel.column_valid()
    if not ok.all():
        values = values[:, ok]
    return values


def _symmetrize(m):
    return 0.5 * (m + m.T)


def estimate_sample_covariance(panel: ReturnsPanel, demean: bool = True) -> CovarianceEstimate:
    """Equal-weight estimate ``r r' / T`` (divisor T, not T - 1).

    Periods with any dropped entry are excluded; ``effective_t`` is the count
    of periods actually used.
    """
    r = _usable_columns(panel)
    t = r.shape[1]
    if t < 2:
        raise InsufficientDataError(f"need at least 2 usable periods, got {t}")
    if demean:
        r = r - r.mean(axis=1, keepdims=True)
    matrix = _symmetrize(r @ r.T / t)
    return CovarianceEstimate(matrix, float(t), "sample", demean)


def ewma_effective_t(half_life: float) -> float:
    """Equivalent equal-weight window ``2 tau / ln 2`` of an EWMA estimator."""
    if not half_life > 0:
        raise ParameterError(f"half-life must be positive, got {half_life}")
    return 2.0 * half_life / math.log(2.0)


def estimate_ewma_covariance(panel: ReturnsPanel, half_life: float,
                             demean: bool = True) -> CovarianceEstimate:
    """Exponentially weighted estimate with weight ``2^{-(T-s)/tau}`` on period s.

    Weights are normalized to sum to one, so the infinite half-life limit is the
    sample estimator. De-meaning uses the same weights.
    """
    if not half_life > 0:
        raise ParameterError(f"half-life must be positive, got {half_life}")
    r = _usable_columns(panel)
    t = r.shape[1]
    if t < 2:
        raise InsufficientDataError(f"need at least 2 usable periods, got {t}")
    age = np.arange(t - 1, -1, -1, dtype=float)
    w = np.exp2(-age / half_life)
    w /= w.sum()
    if demean:
        r = r - (r @ w)[:, None]
    matrix = _symmetrize((r * w) @ r.T)
    return CovarianceEstimate(matrix, ewma_effective_t(half_life), "ewma", demean)


def effective_t(spec: EffectiveWindowSpec) -> float:
    """Effective observation count after estimator adjustments.

    Applied in a fixed order: the EWMA half-life (if any) replaces the raw
    count with ``2 tau / ln 2``; Newey-West lags ``n >= 1`` then rescale by
    ``3 / (2 (n + 1))``; a uniform kurtosis ``k`` finally rescales by
    ``2 / (k - 1)``. Zero lags leave the count unchanged.
    """
    t = float(spec.base_t)
    if spec.ewma_half_life is not None:
        t = ewma_effective_t(spec.ewma_half_life)
    if spec.newey_west_lags:
        t = 3.0 * t / (2.0 * (spec.newey_west_lags + 1))
    if spec.kurtosis is not None:
        t = 2.0 * t / (spec.kurtosis - 1.0)
    return t

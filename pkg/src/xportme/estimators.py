"""Estimators for the ATE and for the control-arm error mean.

The naive ATE contrasts the mis-measured outcome between trial arms; its
bias is the gap between the treatment and control error means.  The
control error mean is estimated from validation rows, either directly or
after reweighting validation rows towards the trial population.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EstimateReport, StackedDataset
from .errors import DegenerateWeights, DimensionMismatch, EmptyArm, MissingTruth


@dataclass(frozen=True)
class MeasurementErrorSpec:
    """Error model ``Y - Z ~ N(alpha0 + alpha_treat*A + alpha_x . X, sigma_y2)``."""

    alpha0: float = 0.0
    alpha_treat: float = 0.0
    alpha_x: tuple = ()
    sigma_y2: float = 1.0

    def __post_init__(self):
        if self.sigma_y2 < 0:
            raise ValueError("sigma_y2 must be nonnegative")
        object.__setattr__(self, "alpha_x", tuple(float(a) for a in self.alpha_x))


@dataclass(frozen=True)
class CovariateShiftSpec:
    """Covariates ``X = beta0 + beta1 * 1[S=v] + e``, ``var(e) = sigma_x2``."""

    beta0: tuple
    beta1: tuple
    sigma_x2: tuple

    def __post_init__(self):
        for name in ("beta0", "beta1", "sigma_x2"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not len(self.beta0) == len(self.beta1) == len(self.sigma_x2):
            raise DimensionMismatch("beta0, beta1 and sigma_x2 must have equal lengths")
        if any(s < 0 for s in self.sigma_x2):
            raise ValueError("sigma_x2 must be nonnegative")


def _validation_errors(d: StackedDataset) -> np.ndarray:
    v = d.is_validation
    if not np.all(d.z_observed[v]):
        missing = np.flatnonzero(v & ~d.z_observed)
        raise MissingTruth(f"validation rows without z_true: {missing[:10].tolist()}")
    return d.y[v] - d.z[v]


def naive_ate(d: StackedDataset) -> EstimateReport:
    """Difference in mean reported outcome between trial arms, Welch SE."""
    y1 = d.y[d.is_trial & (d.treatment == 1)]
    y0 = d.y[d.is_trial & (d.treatment == 0)]
    if len(y1) == 0 or len(y0) == 0:
        raise EmptyArm(f"trial arms have {len(y1)} treated and {len(y0)} control rows")
    est = float(y1.mean() - y0.mean())
    se = None
    if len(y1) > 1 and len(y0) > 1:
        se = math.sqrt(y1.var(ddof=1) / len(y1) + y0.var(ddof=1) / len(y0))
    return EstimateReport("naive_ate", est, se, n_effective=float(len(y1) + len(y0)))


def naive_mu0(d: StackedDataset) -> EstimateReport:
    """Unweighted mean of ``Y - Z`` over validation rows."""
    e = _validation_errors(d)
    n = len(e)
    if n == 0:
        raise MissingTruth("no validation rows")
    se = float(e.std(ddof=1) / math.sqrt(n)) if n > 1 else None
    return EstimateReport("mu0_naive", float(e.mean()), se, n_effective=float(n))


def _check_weights(w: np.ndarray) -> None:
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DegenerateWeights("weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise DegenerateWeights("weights sum to zero")


def weighted_covariance(y, z, w) -> float:
    """Weighted covariance ``sum w (y - ybar)(z - zbar) / sum w``.

    ``ybar`` and ``zbar`` are the ``w``-weighted means.  With equal weights
    this is the population (ddof=0) covariance.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if not len(y) == len(z) == len(w):
        raise DimensionMismatch(f"lengths {len(y)}, {len(z)}, {len(w)} differ")
    _check_weights(w)
    sw = w.sum()
    ybar = np.dot(w, y) / sw
    zbar = np.dot(w, z) / sw
    return float(np.dot(w, (y - ybar) * (z - zbar)) / sw)


def kish_ess(w) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.dot(w, w))


def weighted_mu0(d: StackedDataset, w, se_denominator: str = "ess") -> EstimateReport:
    """Weighted mean of ``Y - Z`` over validation rows.

    Parameters
    ----------
    d : StackedDataset
    w : WeightSet or array_like
        Weights aligned with the rows of ``d``; only validation entries are used.
    se_denominator : {"ess", "n"}
        Sample size dividing the weighted variance of ``Y - Z``.  ``"ess"``
        uses the Kish effective sample size of the validation weights,
        ``"n"`` the raw validation count.  The two agree for equal weights.
    """
    weights = np.asarray(getattr(w, "weights", w), dtype=float)
    if len(weights) != d.n:
        raise DimensionMismatch(f"{len(weights)} weights for {d.n} rows")
    e = _validation_errors(d)
    v = d.is_validation
    wv = weights[v]
    _check_weights(wv)
    y, z = d.y[v], d.z[v]
    est = float(np.dot(wv, e) / wv.sum())
    var_diff = (weighted_covariance(y, y, wv) + weighted_covariance(z, z, wv)
                - 2.0 * weighted_covariance(y, z, wv))
    var_diff = max(var_diff, 0.0)
    ess = kish_ess(wv)
    if se_denominator == "ess":
        denom = ess
    elif se_denominator == "n":
        denom = float(len(wv))
    else:
        raise ValueError(f"unknown se_denominator {se_denominator!r}")
    return EstimateReport("mu0_weighted", est, math.sqrt(var_diff / denom),
                          n_effective=ess)


def analytic_ate_bias(spec: MeasurementErrorSpec) -> float:
    """Bias of the naive ATE: the treatment-by-error term."""
    return float(spec.alpha_treat)


def analytic_mu0_bias(spec: MeasurementErrorSpec, shift: CovariateShiftSpec) -> float:
    """Bias of the naive control error mean: ``alpha_x . beta1``."""
    if len(spec.alpha_x) != len(shift.beta1):
        raise DimensionMismatch(
            f"alpha_x has {len(spec.alpha_x)} terms, beta1 has {len(shift.beta1)}"
        )
    return float(np.dot(spec.alpha_x, shift.beta1))


def corrected_ate(d: StackedDataset, mu0_hat: EstimateReport,
                  mu1_grid: Sequence[float]) -> list:
    """Sensitivity analysis over the unidentified treatment-arm error mean.

    For every assumed ``mu1`` the corrected effect is
    ``naive_ate - (mu1 - mu0_hat)``.  ``mu1`` is treated as fixed, so the SE
    combines the naive ATE and ``mu0_hat`` SEs in quadrature.
    """
    grid = [float(m) for m in mu1_grid]
    if not grid:
        raise ValueError("mu1_grid must be nonempty")
    ate = naive_ate(d)
    se = None
    if ate.se is not None and mu0_hat.se is not None:
        se = math.hypot(ate.se, mu0_hat.se)
    return [
        EstimateReport("corrected_ate", ate.estimate - (mu1 - mu0_hat.estimate), se,
                       n_effective=ate.n_effective, extra={"mu1": mu1})
        for mu1 in grid
    ]


def trial_mu0(d: StackedDataset) -> float:
    """Mean of ``Y - Z`` in trial control rows (needs ``Z`` observed there)."""
    m = d.is_trial & (d.treatment == 0)
    if not m.any():
        raise EmptyArm("no trial control rows")
    if not np.all(d.z_observed[m]):
        raise MissingTruth("trial control rows lack z_true")
    return float(np.mean(d.y[m] - d.z[m]))


def empirical_mu0_bias(d: StackedDataset, mu0_hat: EstimateReport) -> float:
    """``mu0_hat`` minus the control error mean observed in the trial."""
    return float(mu0_hat.estimate - trial_mu0(d))

"""Domain types for stacked trial + validation data.

A stacked dataset holds the rows of an intervention trial (``S = rct``) and
of an external validation study (``S = v``) in one table.  Validation rows
are control-only and carry both the mis-measured outcome ``Y`` and the
error-free outcome ``Z``; trial rows carry ``Y`` and may or may not carry
``Z``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch

Z_CRIT = 1.96


class SampleLabel(str, enum.Enum):
    VALIDATION = "v"
    TRIAL = "rct"

    @classmethod
    def parse(cls, value) -> "SampleLabel":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip())


@dataclass(frozen=True)
class StackedRow:
    sample: SampleLabel
    treatment: int
    y_reported: float
    z_true: Optional[float] = None
    covariates: tuple = ()


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class StackedDataset:
    """Column-oriented stacked dataset.

    Attributes
    ----------
    is_trial : ndarray of bool
        True for trial rows, False for validation rows.
    treatment : ndarray of int
        Treatment indicator ``A``.
    y : ndarray of float
        Outcome measured with error.
    z : ndarray of float
        Error-free outcome; entries where ``z_observed`` is False carry no
        information and are stored as NaN.
    z_observed : ndarray of bool
        Whether ``Z`` was recorded on the row.
    X : ndarray, shape (n, p)
        Covariates, already numerically encoded.
    covariate_names : tuple of str
    prob : ndarray of float, optional
        Externally computed probabilities of trial membership.
    """

    is_trial: np.ndarray
    treatment: np.ndarray
    y: np.ndarray
    z: np.ndarray
    z_observed: np.ndarray
    X: np.ndarray
    covariate_names: tuple = ()
    prob: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, 0)
        names = tuple(self.covariate_names) or tuple(
            f"x{j + 1}" for j in range(X.shape[1])
        )
        for name, arr in [("is_trial", self.is_trial), ("treatment", self.treatment),
                          ("z", self.z), ("z_observed", self.z_observed)]:
            if len(arr) != n:
                raise DimensionMismatch(f"{name} has {len(arr)} rows, expected {n}")
        if X.shape[0] != n:
            raise DimensionMismatch(f"X has {X.shape[0]} rows, expected {n}")
        if len(names) != X.shape[1]:
            raise DimensionMismatch(
                f"{len(names)} covariate names for {X.shape[1]} covariate columns"
            )
        if self.prob is not None and len(self.prob) != n:
            raise DimensionMismatch(f"prob has {len(self.prob)} rows, expected {n}")
        set_ = object.__setattr__
        set_(self, "is_trial", _readonly(np.asarray(self.is_trial, dtype=bool)))
        set_(self, "treatment", _readonly(np.asarray(self.treatment, dtype=int)))
        set_(self, "y", _readonly(np.asarray(self.y, dtype=float)))
        set_(self, "z", _readonly(np.asarray(self.z, dtype=float)))
        set_(self, "z_observed", _readonly(np.asarray(self.z_observed, dtype=bool)))
        set_(self, "X", _readonly(X))
        set_(self, "covariate_names", names)
        if self.prob is not None:
            set_(self, "prob", _readonly(np.asarray(self.prob, dtype=float)))

    @classmethod
    def from_arrays(cls, sample, treatment, y, z=None, X=None,
                    covariate_names: Sequence[str] = (), prob=None) -> "StackedDataset":
        """Build a dataset from loose columns.

        ``sample`` may hold booleans (True = trial) or labels ``"v"``/``"rct"``.
        Absent ``Z`` values may be given as ``None`` or NaN.
        """
        if isinstance(sample, np.ndarray) and sample.dtype == bool:
            is_trial = sample
        else:
            is_trial = np.array(
                [s if isinstance(s, (bool, np.bool_))
                 else SampleLabel.parse(s) is SampleLabel.TRIAL for s in sample],
                dtype=bool)
        n = len(is_trial)
        if z is None:
            z_arr = np.full(n, np.nan)
        else:
            z_arr = np.array([np.nan if v is None else v for v in z], dtype=float)
        z_obs = ~np.isnan(z_arr)
        if X is None:
            X = np.empty((n, 0))
        return cls(is_trial=is_trial, treatment=treatment, y=y, z=z_arr,
                   z_observed=z_obs, X=np.asarray(X, dtype=float),
                   covariate_names=tuple(covariate_names), prob=prob)

    @classmethod
    def from_rows(cls, rows: Iterable[StackedRow],
                  covariate_names: Sequence[str] = ()) -> "StackedDataset":
        rows = list(rows)
        widths = {len(r.covariates) for r in rows}
        if len(widths) > 1:
            raise DimensionMismatch(f"ragged covariate vectors: lengths {sorted(widths)}")
        p = widths.pop() if widths else len(covariate_names)
        X = np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), p)
        return cls.from_arrays(
            sample=[r.sample for r in rows],
            treatment=[r.treatment for r in rows],
            y=[r.y_reported for r in rows],
            z=[r.z_true for r in rows],
            X=X,
            covariate_names=covariate_names,
        )

    def rows(self) -> Iterator[StackedRow]:
        for i in range(self.n):
            yield StackedRow(
                sample=SampleLabel.TRIAL if self.is_trial[i] else SampleLabel.VALIDATION,
                treatment=int(self.treatment[i]),
                y_reported=float(self.y[i]),
                z_true=float(self.z[i]) if self.z_observed[i] else None,
                covariates=tuple(float(v) for v in self.X[i]),
            )

    def subset(self, mask) -> "StackedDataset":
        mask = np.asarray(mask)
        return StackedDataset(
            is_trial=self.is_trial[mask], treatment=self.treatment[mask],
            y=self.y[mask], z=self.z[mask], z_observed=self.z_observed[mask],
            X=self.X[mask], covariate_names=self.covariate_names,
            prob=None if self.prob is None else self.prob[mask],
        )

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]

    @property
    def is_validation(self) -> np.ndarray:
        return ~self.is_trial

    @property
    def n_v(self) -> int:
        return int(np.count_nonzero(~self.is_trial))

    @property
    def n_rct(self) -> int:
        return int(np.count_nonzero(self.is_trial))

    @property
    def labels(self) -> list:
        return [SampleLabel.TRIAL.value if t else SampleLabel.VALIDATION.value
                for t in self.is_trial]


@dataclass(frozen=True)
class ErrorMoments:
    mu: float
    sigma2: float
    sample: SampleLabel
    arm: int
    n: int = 0


def error_moments(d: StackedDataset) -> list:
    """Mean and variance of ``Y - Z`` for every (sample, arm) cell with ``Z`` observed."""
    out = []
    for label, in_sample in [(SampleLabel.VALIDATION, d.is_validation),
                             (SampleLabel.TRIAL, d.is_trial)]:
        for arm in (0, 1):
            m = in_sample & (d.treatment == arm) & d.z_observed
            k = int(m.sum())
            if k == 0:
                continue
            e = d.y[m] - d.z[m]
            out.append(ErrorMoments(mu=float(e.mean()),
                                    sigma2=float(e.var(ddof=1)) if k > 1 else 0.0,
                                    sample=label, arm=arm, n=k))
    return out


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with optional normal-theory 95% interval."""

    label: str
    estimate: float
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    n_effective: float = math.nan
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.se is not None:
            if self.se < 0 or math.isnan(self.se):
                raise ValueError(f"standard error must be nonnegative, got {self.se}")
            if self.ci_low is None and self.ci_high is None:
                object.__setattr__(self, "ci_low", self.estimate - Z_CRIT * self.se)
                object.__setattr__(self, "ci_high", self.estimate + Z_CRIT * self.se)

    def covers(self, value: float) -> bool:
        if self.ci_low is None or self.ci_high is None:
            raise ValueError(f"{self.label} has no confidence interval")
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        out = {"label": self.label, "estimate": self.estimate, "se": self.se,
               "ci_low": self.ci_low, "ci_high": self.ci_high,
               "n_effective": self.n_effective}
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class Violation:
    rule: str
    row: Optional[int] = None

    def __str__(self):
        where = "dataset" if self.row is None else f"row {self.row}"
        return f"{where}: {self.rule}"


def validate_dataset(d: StackedDataset) -> list:
    """Return every invariant violation in ``d``; an empty list means valid."""
    out = []
    v = d.is_validation
    for i in np.flatnonzero(v & (d.treatment != 0)):
        out.append(Violation("validation rows must be control", int(i)))
    for i in np.flatnonzero(v & ~d.z_observed):
        out.append(Violation("validation rows must have z_true", int(i)))
    for i in np.flatnonzero((d.treatment != 0) & (d.treatment != 1)):
        out.append(Violation("treatment must be 0 or 1", int(i)))
    for i in np.flatnonzero(~np.isfinite(d.y)):
        out.append(Violation("y_reported must be finite", int(i)))
    if d.n_covariates:
        for i in np.flatnonzero(~np.isfinite(d.X).all(axis=1)):
            out.append(Violation("covariates must be finite", int(i)))
    if d.n_v < 2:
        out.append(Violation("need at least 2 validation rows"))
    if d.n_rct < 2:
        out.append(Violation("need at least 2 trial rows"))
    trial_arms = d.treatment[d.is_trial]
    if not np.any(trial_arms == 1):
        out.append(Violation("trial needs at least one treated row"))
    if not np.any(trial_arms == 0):
        out.append(Violation("trial needs at least one control row"))
    return out

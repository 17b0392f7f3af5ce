"""Sample-membership model, transport weights and balance diagnostics.

A logistic model for ``P(S = rct | X)`` is fitted on the stacked data by
iteratively reweighted least squares.  Validation rows are then weighted by
the odds of trial membership so that they resemble the trial population;
trial rows get weight zero.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .core import StackedDataset
from .errors import (DimensionMismatch, NotConverged, ProbabilityOutOfRange,
                     RankDeficient, SeparationDetected, ZeroSpread)

ASMD_CONVENTION = (
    "|mean_a - mean_b| / sqrt((var_a + var_b) / 2); var = p(1-p) for 0/1 covariates, "
    "else sample variance (reliability-weighted when weights are given)"
)
QUANTILE_METHOD = "linear"

_PROB_LO = np.finfo(float).tiny
_PROB_HI = 1.0 - np.finfo(float).epsneg


@dataclass(frozen=True)
class TermSet:
    """Terms of a membership model, indexed by 0-based covariate position.

    Columns are laid out as: intercept, main effects ascending, quadratics
    ascending, interactions in lexicographic order.
    """

    main_effects: tuple = ()
    quadratics: tuple = ()
    interactions: tuple = ()
    include_intercept: bool = True

    def __post_init__(self):
        mains = tuple(int(i) for i in self.main_effects)
        quads = tuple(int(i) for i in self.quadratics)
        pairs = tuple(tuple(sorted((int(a), int(b)))) for a, b in self.interactions)
        for name, items in [("main effect", mains), ("quadratic", quads),
                            ("interaction", pairs)]:
            if len(set(items)) != len(items):
                raise ValueError(f"duplicate {name} term")
        if any(a == b for a, b in pairs):
            raise ValueError("an interaction of a covariate with itself is a quadratic")
        if any(i < 0 for i in mains + quads + sum(pairs, ())):
            raise ValueError("covariate indices must be nonnegative")
        object.__setattr__(self, "main_effects", tuple(sorted(mains)))
        object.__setattr__(self, "quadratics", tuple(sorted(quads)))
        object.__setattr__(self, "interactions", tuple(sorted(pairs)))

    @classmethod
    def mains(cls, p: int, include_intercept: bool = True) -> "TermSet":
        return cls(main_effects=tuple(range(p)), include_intercept=include_intercept)

    @classmethod
    def parse(cls, text: str, covariate_names: Sequence[str] = ()) -> "TermSet":
        """Parse ``"x1+x2+x3:x4+x3^2"``.

        Names resolve against ``covariate_names`` first, then as ``xK`` with
        1-based ``K``.  A ``-1`` (or ``0``) term drops the intercept.
        """
        names = list(covariate_names)

        def index(tok: str) -> int:
            tok = tok.strip()
            if tok in names:
                return names.index(tok)
            m = re.fullmatch(r"[xX](\d+)", tok)
            if m and int(m.group(1)) >= 1:
                return int(m.group(1)) - 1
            raise ValueError(f"unknown covariate {tok!r} in term specification")

        mains, quads, pairs = [], [], []
        intercept = True
        for raw in re.split(r"\s*\+\s*|(?=-1\b)", text.strip()):
            tok = raw.strip()
            if not tok:
                continue
            if tok in ("-1", "0"):
                intercept = False
            elif tok == "1":
                intercept = True
            elif ":" in tok:
                a, b = tok.split(":")
                pairs.append((index(a), index(b)))
            elif tok.endswith("^2"):
                quads.append(index(tok[:-2]))
            else:
                mains.append(index(tok))
        return cls(tuple(mains), tuple(quads), tuple(pairs), intercept)

    @property
    def n_columns(self) -> int:
        return (int(self.include_intercept) + len(self.main_effects)
                + len(self.quadratics) + len(self.interactions))

    @property
    def max_index(self) -> int:
        idx = self.main_effects + self.quadratics + sum(self.interactions, ())
        return max(idx) if idx else -1

    def names(self, covariate_names: Sequence[str] = ()) -> list:
        def nm(i):
            return covariate_names[i] if i < len(covariate_names) else f"x{i + 1}"
        out = ["(Intercept)"] if self.include_intercept else []
        out += [nm(i) for i in self.main_effects]
        out += [f"{nm(i)}^2" for i in self.quadratics]
        out += [f"{nm(a)}:{nm(b)}" for a, b in self.interactions]
        return out

    def __str__(self):
        s = "+".join(self.names()[int(self.include_intercept):])
        return s if self.include_intercept else (s + "-1" if s else "-1")


def build_design(d, terms: TermSet) -> np.ndarray:
    """Design matrix for ``terms`` from raw covariates (no standardization)."""
    X = d.X if isinstance(d, StackedDataset) else np.asarray(d, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if terms.max_index >= X.shape[1]:
        raise DimensionMismatch(
            f"term references covariate {terms.max_index + 1}, data has {X.shape[1]}"
        )
    cols = []
    if terms.include_intercept:
        cols.append(np.ones(X.shape[0]))
    cols += [X[:, i] for i in terms.main_effects]
    cols += [X[:, i] ** 2 for i in terms.quadratics]
    cols += [X[:, a] * X[:, b] for a, b in terms.interactions]
    if not cols:
        return np.empty((X.shape[0], 0))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class MembershipModel:
    terms: TermSet
    theta: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    cov: Optional[np.ndarray] = None
    loglik: float = math.nan
    loglik_path: tuple = ()
    covariate_names: tuple = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def coefficients(self) -> dict:
        return dict(zip(self.terms.names(self.covariate_names), self.theta.tolist()))


def _loglik(eta: np.ndarray, s: np.ndarray) -> float:
    return float(np.sum(s * log_expit(eta) + (1.0 - s) * log_expit(-eta)))


def fit_logistic(D: np.ndarray, s: np.ndarray, max_iter: int = 100, tol: float = 1e-8,
                 max_halvings: int = 30):
    """Maximum-likelihood logistic regression by IRLS with step-halving.

    Returns ``(theta, iterations, score_norm, cov, loglik_path)``.  The fit
    converges when the max-norm of the score ``D'(s - p)`` is at most ``tol``.
    """
    D = np.asarray(D, dtype=float)
    s = np.asarray(s, dtype=float)
    n, k = D.shape
    if k == 0:
        raise RankDeficient("empty design")
    if np.linalg.matrix_rank(D) < k:
        raise RankDeficient(f"design with {k} columns has rank {np.linalg.matrix_rank(D)}")
    pos = s == 1
    theta = np.zeros(k)
    eta = np.zeros(n)
    ll = _loglik(eta, s)
    path = [ll]
    for it in range(max_iter + 1):
        p = expit(eta)
        score = D.T @ (s - p)
        gnorm = float(np.max(np.abs(score)))
        if gnorm <= tol:
            # a linear predictor that orders the classes perfectly means the MLE
            # is at infinity; the score merely flattened out along the way
            if pos.any() and (~pos).any() and eta[pos].min() > eta[~pos].max():
                raise SeparationDetected(
                    f"classes are linearly separated (|theta| = {np.linalg.norm(theta):.3g})")
            H = D.T @ (D * (p * (1.0 - p))[:, None])
            return theta, it, gnorm, np.linalg.inv(H), tuple(path)
        if it == max_iter:
            break
        H = D.T @ (D * (p * (1.0 - p))[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            _raise_if_separated(theta, p, pos, force=True)
            raise NotConverged("singular information matrix")
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = theta + t * step
            eta_c = D @ cand
            ll_c = _loglik(eta_c, s)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            raise NotConverged(f"no ascent step after {max_halvings} halvings "
                               f"(iteration {it + 1}, score norm {gnorm:.3g})")
        theta, eta, ll = cand, eta_c, max(ll_c, ll)
        path.append(ll_c)
        _raise_if_separated(theta, expit(eta), pos)
    _raise_if_separated(theta, expit(eta), pos, force=True)
    raise NotConverged(f"score norm {gnorm:.3g} > {tol:g} after {max_iter} iterations")


def _raise_if_separated(theta, p, pos, force=False):
    lo, hi = p < 1e-10, p > 1.0 - 1e-10
    one_class = (pos.any() and np.all(hi[pos])) or ((~pos).any() and np.all(lo[~pos]))
    extreme = np.any(lo | hi)
    if one_class or (extreme and (force or np.linalg.norm(theta) > 1e6)):
        raise SeparationDetected(
            f"fitted probabilities hit 0/1 (|theta| = {np.linalg.norm(theta):.3g})"
        )


def fit_membership(d: StackedDataset, terms: Optional[TermSet] = None,
                   max_iter: int = 100, tol: float = 1e-8) -> MembershipModel:
    """Fit ``logit P(S = rct) = theta' design(X)`` on the stacked rows."""
    if terms is None:
        terms = TermSet.mains(d.n_covariates)
    if d.n_rct == 0 or d.n_v == 0:
        raise DimensionMismatch("both samples must be nonempty")
    D = build_design(d, terms)
    theta, it, gnorm, cov, path = fit_logistic(D, d.is_trial.astype(float), max_iter, tol)
    return MembershipModel(terms=terms, theta=theta, converged=True, iterations=it,
                           final_gradient_norm=gnorm, cov=cov, loglik=path[-1],
                           loglik_path=path, covariate_names=d.covariate_names)


def predict_prob(m: MembershipModel, d) -> np.ndarray:
    """Predicted trial-membership probabilities, clipped inside (0, 1)."""
    D = build_design(d, m.terms)
    if D.shape[1] != len(m.theta):
        raise DimensionMismatch(f"design has {D.shape[1]} columns, model {len(m.theta)}")
    return np.clip(expit(D @ m.theta), _PROB_LO, _PROB_HI)


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Per-row transport weights.

    ``raw_weights`` keeps the untrimmed odds so trimming is always computed
    from the original distribution.
    """

    weights: np.ndarray
    validation: np.ndarray
    trimmed: bool = False
    trim_threshold: Optional[float] = None
    trim_quantile: Optional[float] = None
    raw_weights: Optional[np.ndarray] = None
    quantile_method: str = QUANTILE_METHOD

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        v = np.array(self.validation, dtype=bool)
        if w.shape != v.shape:
            raise DimensionMismatch("weights and validation mask differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(w[~v] != 0):
            raise ValueError("trial rows must have weight 0")
        if self.trimmed and np.any(w[v] > self.trim_threshold):
            raise ValueError("trimmed weights exceed the recorded threshold")
        raw = w if self.raw_weights is None else np.array(self.raw_weights, dtype=float)
        for a in (w, v, raw):
            a.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "validation", v)
        object.__setattr__(self, "raw_weights", raw)

    def __len__(self):
        return len(self.weights)

    @property
    def validation_weights(self) -> np.ndarray:
        return self.weights[self.validation]


def make_weights(probs, d: StackedDataset) -> WeightSet:
    """Odds weights ``e / (1 - e)`` on validation rows, 0 on trial rows."""
    e = np.asarray(probs, dtype=float)
    if len(e) != d.n:
        raise DimensionMismatch(f"{len(e)} probabilities for {d.n} rows")
    bad = ~((e > 0) & (e < 1))
    if bad.any():
        raise ProbabilityOutOfRange(
            f"probabilities outside (0, 1) at rows {np.flatnonzero(bad)[:10].tolist()}"
        )
    w = np.where(d.is_trial, 0.0, e / (1.0 - e))
    return WeightSet(weights=w, validation=d.is_validation)


def trim_weights(w: WeightSet, upper_quantile: float = 0.9) -> WeightSet:
    """Cap validation weights at their ``upper_quantile`` quantile.

    The quantile is taken over the untrimmed validation weights with linear
    interpolation between order statistics; weights at or below it are left
    alone, so repeated calls are idempotent and never raise a weight.
    """
    if not 0 < upper_quantile < 1:
        raise ValueError("upper_quantile must lie in (0, 1)")
    raw_v = w.raw_weights[w.validation]
    if len(raw_v) == 0:
        return w
    q = float(np.quantile(raw_v, upper_quantile, method=QUANTILE_METHOD))
    new = np.where(w.validation, np.minimum(w.weights, q), 0.0)
    return WeightSet(weights=new, validation=w.validation, trimmed=True,
                     trim_threshold=q, trim_quantile=upper_quantile,
                     raw_weights=w.raw_weights)


def _is_binary(x: np.ndarray) -> bool:
    return bool(np.all((x == 0) | (x == 1)))


def _moments(x: np.ndarray, w: Optional[np.ndarray], binary: bool):
    if w is None:
        m = float(np.mean(x))
        if binary:
            return m, m * (1.0 - m)
        return m, float(np.var(x, ddof=1)) if len(x) > 1 else 0.0
    sw = float(w.sum())
    m = float(np.dot(w, x) / sw)
    if binary:
        return m, m * (1.0 - m)
    denom = sw - float(np.dot(w, w)) / sw
    if denom <= 0:
        return m, 0.0
    return m, float(np.dot(w, (x - m) ** 2) / denom)


def asmd(a, b, weights_a=None, weights_b=None, binary: Optional[bool] = None) -> float:
    """Absolute standardized mean difference between two samples.

    ``binary=None`` detects 0/1 data (both samples) and uses ``p(1-p)`` as
    the variance.  Optional weights give weighted means and variances.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("asmd needs two nonempty samples")
    if binary is None:
        binary = _is_binary(a) and _is_binary(b)
    wa = None if weights_a is None else np.asarray(weights_a, dtype=float)
    wb = None if weights_b is None else np.asarray(weights_b, dtype=float)
    ma, va = _moments(a, wa, binary)
    mb, vb = _moments(b, wb, binary)
    pooled = math.sqrt(max((va + vb) / 2.0, 0.0))
    diff = abs(ma - mb)
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0
        raise ZeroSpread(f"means differ by {diff:g} with zero pooled spread")
    return diff / pooled


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    trial_mean: float
    validation_mean: float
    asmd: float
    weighted: bool = False


def balance_table(d: StackedDataset, w: Optional[WeightSet] = None) -> list:
    """Per-covariate ASMD of trial rows against (optionally weighted) validation rows."""
    t, v = d.is_trial, d.is_validation
    wv = None if w is None else np.asarray(getattr(w, "weights", w), dtype=float)[v]
    rows = []
    for j, name in enumerate(d.covariate_names):
        xt, xv = d.X[t, j], d.X[v, j]
        binary = _is_binary(xt) and _is_binary(xv)
        try:
            value = asmd(xt, xv, weights_b=wv, binary=binary)
        except ZeroSpread:
            value = math.inf
        mv = float(np.mean(xv)) if wv is None else float(np.dot(wv, xv) / wv.sum())
        rows.append(BalanceRow(name, float(np.mean(xt)), mv, value, w is not None))
    return rows


def dom(pi_fitted, pi_true) -> float:
    """Degree of misspecification: mean |fitted - true| over sd(true)."""
    f = np.asarray(pi_fitted, dtype=float)
    t = np.asarray(pi_true, dtype=float)
    if f.shape != t.shape:
        raise DimensionMismatch(f"lengths {len(f)} and {len(t)} differ")
    sd = float(np.std(t, ddof=1)) if len(t) > 1 else 0.0
    if not sd > 0:
        raise ZeroSpread("true probabilities have zero spread")
    return float(np.mean(np.abs(f - t)) / sd)

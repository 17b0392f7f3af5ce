"""Monte Carlo engine for transported control-arm error means.

Each replicate draws a covariate population, assigns trial membership from
one of seven logistic forms, samples ``n`` trial and ``n`` validation
members, generates true and mis-measured potential outcomes, and compares
three estimators of the trial's control error mean: unweighted, weighted by
the correctly specified membership fit, and weighted by a main-effects-only
fit.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import StackedDataset
from .errors import InsufficientStratum, XportmeError, ZeroSpread
from .estimators import naive_mu0, trial_mu0, weighted_mu0
from .membership import (TermSet, asmd, build_design, dom, fit_membership,
                         make_weights, predict_prob)

N_COVARIATES = 4
GRID_GAMMAS = tuple(round(0.2 * k, 1) for k in range(6))
GRID_MODELS = tuple(range(1, 8))

# 0-based covariate indices; X3 -> 2, X4 -> 3.
MODEL_FORMS = {
    1: TermSet((0, 1, 2, 3)),
    2: TermSet((0, 1, 2, 3), quadratics=(2,)),
    3: TermSet((0, 1, 2, 3), quadratics=(3,)),
    4: TermSet((0, 1, 2, 3), interactions=((2, 3),)),
    5: TermSet((0, 1, 2, 3), quadratics=(2, 3), interactions=((2, 3),)),
    6: TermSet((0, 1, 2, 3), interactions=((0, 3),)),
    7: TermSet((0, 1, 2, 3), interactions=((0, 2),)),
}


class FittedForm(str, Enum):
    TRUE_FORM = "true"
    MAIN_EFFECTS_ONLY = "mains"


ESTIMATORS = ("naive", "weighted_true", "weighted_mains")

RESULT_COLUMNS = ("gamma1", "gamma2", "true_model", "estimator", "mean_bias",
                  "abs_bias", "mc_se", "coverage", "asmd_true_probs",
                  "failed_replicates")


def model_terms(true_model: int, include_intercept: bool = True) -> TermSet:
    if true_model not in MODEL_FORMS:
        raise ValueError(f"true_model must be in 1..7, got {true_model}")
    t = MODEL_FORMS[true_model]
    return TermSet(t.main_effects, t.quadratics, t.interactions, include_intercept)


@dataclass(frozen=True)
class CoefficientTable:
    """Scaled coefficients for one (gamma1, gamma2, model form) cell.

    Membership base coefficients are ``(g1, 0, g1/2, 2 g1)`` and error
    coefficients ``(0, g2, 2 g2, g2/2)`` over X1..X4.  A quadratic term gets
    half its covariate's base coefficient, an interaction the mean of the
    two base coefficients.
    """

    gamma1: float
    gamma2: float
    true_model: int = 1

    @property
    def membership_base(self) -> np.ndarray:
        g = self.gamma1
        return np.array([g, 0.0, 0.5 * g, 2.0 * g])

    @property
    def error_coeffs(self) -> np.ndarray:
        g = self.gamma2
        return np.array([0.0, g, 2.0 * g, 0.5 * g])

    @property
    def terms(self) -> TermSet:
        return model_terms(self.true_model, include_intercept=False)

    @property
    def membership_coeffs(self) -> np.ndarray:
        """Coefficients aligned with the columns of ``build_design(X, self.terms)``."""
        base = self.membership_base
        t = self.terms
        return np.concatenate([
            base[list(t.main_effects)],
            0.5 * base[list(t.quadratics)],
            np.array([(base[a] + base[b]) / 2.0 for a, b in t.interactions]),
        ])

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return build_design(X, self.terms) @ self.membership_coeffs


@dataclass(frozen=True)
class ScenarioSpec:
    gamma1: float
    gamma2: float
    true_model: int = 1
    population_size: int = 1_000_000
    sample_size: int = 1000
    replicates: int = 1000
    seed: int = 0
    stream: int = 0
    noise_var: float = 1.5

    def __post_init__(self):
        for g in (self.gamma1, self.gamma2):
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"gamma values must lie in [0, 1], got {g}")
        if self.true_model not in MODEL_FORMS:
            raise ValueError(f"true_model must be in 1..7, got {self.true_model}")
        if min(self.population_size, self.sample_size, self.replicates) <= 0:
            raise ValueError("sizes and replicate count must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def coefficients(self) -> CoefficientTable:
        return CoefficientTable(self.gamma1, self.gamma2, self.true_model)

    def rng(self, replicate: int) -> np.random.Generator:
        """Independent counter-based stream for one replicate of this scenario."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, replicate))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class Population:
    X: np.ndarray
    p: np.ndarray
    S: np.ndarray


@dataclass(frozen=True, eq=False)
class SampleSkeleton:
    """Sampled rows: trial rows first, then validation rows."""

    X: np.ndarray
    is_trial: np.ndarray
    p: np.ndarray


def generate_population(spec: ScenarioSpec, rng: np.random.Generator) -> Population:
    X = rng.standard_normal((spec.population_size, N_COVARIATES))
    p = expit(spec.coefficients.linear_predictor(X))
    S = rng.random(spec.population_size) < p
    return Population(X=X, p=p, S=S)


def draw_samples(pop: Population, n: int, rng: np.random.Generator) -> SampleSkeleton:
    """Sample ``n`` members without replacement from each stratum of ``S``."""
    trial_idx = np.flatnonzero(pop.S)
    val_idx = np.flatnonzero(~pop.S)
    if len(trial_idx) < n or len(val_idx) < n:
        raise InsufficientStratum(
            f"strata have {len(trial_idx)} trial and {len(val_idx)} validation "
            f"members, need {n} each"
        )
    it = rng.choice(trial_idx, n, replace=False)
    iv = rng.choice(val_idx, n, replace=False)
    idx = np.concatenate([it, iv])
    return SampleSkeleton(X=pop.X[idx], is_trial=np.arange(2 * n) < n, p=pop.p[idx])


def generate_outcomes(sk: SampleSkeleton, spec: ScenarioSpec,
                      rng: np.random.Generator) -> StackedDataset:
    """Attach treatment, true and mis-measured outcomes to sampled rows.

    ``Z(0) ~ N(0, 1)``, ``Z(1) ~ N(2, 1)``, and
    ``Y(a) ~ N(Z(a) + error_coeffs . X, noise_var)``.  Treatment is
    Bernoulli(0.5) in the trial and 0 in validation.  Both ``Y`` and ``Z``
    are kept on every row.
    """
    m = len(sk.is_trial)
    shift = sk.X @ spec.coefficients.error_coeffs
    sd = math.sqrt(spec.noise_var)
    z0 = rng.normal(0.0, 1.0, m)
    z1 = rng.normal(2.0, 1.0, m)
    y0 = z0 + shift + rng.normal(0.0, sd, m)
    y1 = z1 + shift + rng.normal(0.0, sd, m)
    a = np.where(sk.is_trial, rng.random(m) < 0.5, False).astype(int)
    z = np.where(a == 1, z1, z0)
    y = np.where(a == 1, y1, y0)
    names = tuple(f"x{j + 1}" for j in range(N_COVARIATES))
    return StackedDataset(is_trial=sk.is_trial, treatment=a, y=y, z=z,
                          z_observed=np.ones(m, dtype=bool), X=sk.X,
                          covariate_names=names)


def asmd_of_true_probs(p_trial, p_validation) -> float:
    """ASMD between true membership probabilities of the two samples."""
    try:
        return asmd(p_trial, p_validation, binary=False)
    except ZeroSpread:
        return 0.0


@dataclass(frozen=True)
class EstimateOutcome:
    value: float
    se: float
    ci_covers: bool


@dataclass(frozen=True)
class ReplicateResult:
    mu0_rct_true: float
    estimates: dict
    eq5_oracle: float = math.nan
    asmd_true_probs: float = math.nan
    dom_mains: float = math.nan


@dataclass(frozen=True)
class EstimatorSummary:
    mean_bias: float
    abs_mean_bias: float
    mc_se: float
    coverage: float
    n: int


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    scenario: ScenarioSpec
    estimators: dict
    asmd_true_probs: float
    dom_mains: float = math.nan
    eq5_oracle: float = math.nan
    failed_replicates: int = 0
    failure_reasons: dict = field(default_factory=dict)
    error: Optional[str] = None
    replicate_results: tuple = ()


def _outcome(report, truth: float) -> EstimateOutcome:
    return EstimateOutcome(report.estimate, report.se, report.ci_low <= truth <= report.ci_high)


def run_replicate(spec: ScenarioSpec, replicate: int) -> ReplicateResult:
    rng = spec.rng(replicate)
    pop = generate_population(spec, rng)
    sk = draw_samples(pop, spec.sample_size, rng)
    d = generate_outcomes(sk, spec, rng)

    truth = trial_mu0(d)
    ctrl = d.is_trial & (d.treatment == 0)
    v = d.is_validation
    eq5 = float(spec.coefficients.error_coeffs @ (d.X[v].mean(axis=0) - d.X[ctrl].mean(axis=0)))
    asmd_p = asmd_of_true_probs(sk.p[sk.is_trial], sk.p[~sk.is_trial])

    mains_model = fit_membership(d, model_terms(1))
    if spec.true_model == 1:
        true_model = mains_model
    else:
        true_model = fit_membership(d, model_terms(spec.true_model))
    p_mains = predict_prob(mains_model, d)
    p_true = p_mains if true_model is mains_model else predict_prob(true_model, d)
    try:
        dom_value = dom(p_mains, p_true)
    except ZeroSpread:
        dom_value = 0.0

    estimates = {
        "naive": _outcome(naive_mu0(d), truth),
        "weighted_true": _outcome(weighted_mu0(d, make_weights(p_true, d)), truth),
        "weighted_mains": _outcome(weighted_mu0(d, make_weights(p_mains, d)), truth),
    }
    return ReplicateResult(mu0_rct_true=truth, estimates=estimates, eq5_oracle=eq5,
                           asmd_true_probs=asmd_p, dom_mains=dom_value)


def summarize(spec: ScenarioSpec, reps: Sequence[ReplicateResult], failures: Counter,
              keep_replicates: bool = False) -> ScenarioResult:
    summaries = {}
    for label in ESTIMATORS:
        bias = np.array([r.estimates[label].value - r.mu0_rct_true for r in reps])
        cover = np.array([r.estimates[label].ci_covers for r in reps], dtype=float)
        k = len(bias)
        mean_bias = float(bias.mean()) if k else math.nan
        summaries[label] = EstimatorSummary(
            mean_bias=mean_bias,
            abs_mean_bias=abs(mean_bias),
            mc_se=float(bias.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan,
            coverage=float(cover.mean()) if k else math.nan,
            n=k,
        )

    def avg(attr):
        return float(np.mean([getattr(r, attr) for r in reps])) if reps else math.nan

    return ScenarioResult(
        scenario=spec, estimators=summaries,
        asmd_true_probs=avg("asmd_true_probs"), dom_mains=avg("dom_mains"),
        eq5_oracle=avg("eq5_oracle"), failed_replicates=sum(failures.values()),
        failure_reasons=dict(sorted(failures.items())),
        replicate_results=tuple(reps) if keep_replicates else (),
    )


def run_scenario(spec: ScenarioSpec, keep_replicates: bool = False) -> ScenarioResult:
    """Run every replicate of one scenario and aggregate bias and coverage.

    Replicates whose membership fits fail (separation, rank deficiency,
    non-convergence) or whose strata are too small are dropped and counted.
    """
    reps = []
    failures = Counter()
    for r in range(spec.replicates):
        try:
            reps.append(run_replicate(spec, r))
        except XportmeError as exc:
            failures[type(exc).__name__] += 1
    return summarize(spec, reps, failures, keep_replicates)


def _run_safely(spec: ScenarioSpec) -> ScenarioResult:
    try:
        return run_scenario(spec)
    except Exception as exc:  # one bad cell must not sink the grid
        nan = EstimatorSummary(math.nan, math.nan, math.nan, math.nan, 0)
        return ScenarioResult(scenario=spec, estimators={k: nan for k in ESTIMATORS},
                              asmd_true_probs=math.nan, failed_replicates=spec.replicates,
                              error=f"{type(exc).__name__}: {exc}")


def run_grid(specs: Sequence[ScenarioSpec], parallelism: int = 1,
             executor: str = "thread") -> list:
    """Run scenarios, in parallel if asked; output order follows ``specs``.

    Every replicate draws from its own stream keyed by ``(seed, stream,
    replicate)``, so results do not depend on ``parallelism``.
    """
    specs = list(specs)
    if not specs:
        return []
    if parallelism <= 1 or len(specs) == 1:
        return [_run_safely(s) for s in specs]
    pool_cls = {"thread": ThreadPoolExecutor, "process": ProcessPoolExecutor}[executor]
    with pool_cls(max_workers=parallelism) as pool:
        return list(pool.map(_run_safely, specs))


def build_grid(gamma1s: Sequence[float] = GRID_GAMMAS,
               gamma2s: Sequence[float] = GRID_GAMMAS,
               models: Sequence[int] = GRID_MODELS, *, seed: int = 0,
               **spec_kwargs) -> list:
    """Cartesian grid of scenarios; ``stream`` numbers cells in grid order."""
    specs = []
    for m in models:
        for g2 in gamma2s:
            for g1 in gamma1s:
                specs.append(ScenarioSpec(gamma1=float(g1), gamma2=float(g2),
                                          true_model=int(m), seed=seed,
                                          stream=len(specs), **spec_kwargs))
    return specs


def _fmt(x) -> str:
    if isinstance(x, float):
        return "NA" if math.isnan(x) else repr(x)
    return str(x)


def result_rows(results: Sequence[ScenarioResult]) -> list:
    rows = []
    for res in results:
        s = res.scenario
        for label in ESTIMATORS:
            e = res.estimators[label]
            rows.append({
                "gamma1": s.gamma1, "gamma2": s.gamma2, "true_model": s.true_model,
                "estimator": label, "mean_bias": e.mean_bias,
                "abs_bias": e.abs_mean_bias, "mc_se": e.mc_se, "coverage": e.coverage,
                "asmd_true_probs": res.asmd_true_probs,
                "failed_replicates": res.failed_replicates,
            })
    return rows


def results_to_csv(results: Sequence[ScenarioResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for row in result_rows(results):
        w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()

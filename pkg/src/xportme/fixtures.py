"""Synthetic stacked datasets shaped like a dietary sodium trial plus an
external biomarker validation study.

Covariates are drawn independently within each sample, so the log odds of
trial membership are linear in the encoded covariates and a main-effects
logistic model is correctly specified.  The control-arm error depends on
sex, race and education, which differ in distribution between samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import StackedDataset

COVARIATES = ("male", "age_41_45", "age_46_50", "age_51_55", "age_56_60",
              "age_61_plus", "bmi", "black", "college", "grad_school")

AGE_BANDS = ("le_40",) + COVARIATES[1:6]


@dataclass(frozen=True)
class SampleProfile:
    n: int
    male: float
    age: tuple  # probabilities for <=40, 41-45, 46-50, 51-55, 56-60, >=61
    bmi_mean: float
    black: float
    education: tuple  # probabilities for college, grad school, neither


TRIAL_PROFILE = SampleProfile(810, 0.38, (0.14, 0.17, 0.24, 0.21, 0.13, 0.12),
                              33.06, 0.34, (0.59, 0.32, 0.09))
# Race and BMI gaps are milder than in the reference cohorts so that
# top-decile trimming does not undo most of the correction.
VALIDATION_PROFILE = SampleProfile(484, 0.54, (0.03, 0.17, 0.21, 0.20, 0.15, 0.24),
                                   30.0, 0.15, (0.55, 0.32, 0.13))

# error = intercept + male + black + college + grad_school terms
ERROR_COEFFS = {"intercept": -0.30, "male": 0.30, "black": -0.42,
                "college": 0.135, "grad_school": 0.15}


def _draw_covariates(profile: SampleProfile, rng, bmi_sd: float) -> np.ndarray:
    n = profile.n
    male = rng.random(n) < profile.male
    age = rng.choice(6, size=n, p=np.asarray(profile.age) / np.sum(profile.age))
    bmi = rng.normal(profile.bmi_mean, bmi_sd, n)
    black = rng.random(n) < profile.black
    edu = rng.choice(3, size=n, p=profile.education)
    cols = [male] + [age == k for k in range(1, 6)] + [bmi, black, edu == 0, edu == 1]
    return np.column_stack(cols).astype(float)


def control_error_mean(X: np.ndarray) -> np.ndarray:
    """Covariate-dependent part of the error, one value per row."""
    idx = {name: COVARIATES.index(name) for name in ERROR_COEFFS if name != "intercept"}
    out = np.full(X.shape[0], ERROR_COEFFS["intercept"])
    for name, j in idx.items():
        out = out + ERROR_COEFFS[name] * X[:, j]
    return out


def sodium_like(seed: int = 2020, trial: SampleProfile = TRIAL_PROFILE,
                validation: SampleProfile = VALIDATION_PROFILE,
                bmi_sd: float = 5.46, error_sd: float = 0.1,
                treat_effect: float = -0.12, treat_error: float = -0.05,
                p_treated: float = 2 / 3, observe_trial_z: bool = True) -> StackedDataset:
    """Stacked trial + validation data on a log-sodium-like scale.

    Trial rows are treated with probability ``p_treated``; validation rows
    are all controls.  ``treat_error`` shifts the error mean under
    treatment, making the naive ATE biased.  With ``observe_trial_z`` the
    trial keeps its biomarker outcome, so the realized trial control error
    mean is available as a benchmark.
    """
    rng = np.random.default_rng(seed)
    Xt = _draw_covariates(trial, rng, bmi_sd)
    Xv = _draw_covariates(validation, rng, bmi_sd)
    X = np.vstack([Xt, Xv])
    n_t, n_v = trial.n, validation.n
    is_trial = np.arange(n_t + n_v) < n_t
    a = np.where(is_trial, rng.random(n_t + n_v) < p_treated, False).astype(int)
    z = rng.normal(8.1, 0.4, n_t + n_v) + treat_effect * a
    err = control_error_mean(X) + treat_error * a + rng.normal(0.0, error_sd, n_t + n_v)
    y = z + err
    z_obs = np.ones(n_t + n_v, dtype=bool) if observe_trial_z else ~is_trial
    z = np.where(z_obs, z, np.nan)
    return StackedDataset(is_trial=is_trial, treatment=a, y=y, z=z, z_observed=z_obs,
                          X=X, covariate_names=COVARIATES)

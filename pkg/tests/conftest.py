import numpy as np
import pytest

from xportme.core import StackedDataset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(y_trial_treated, y_trial_control, y_val, z_val, X=None):
    """Small stacked dataset: treated trial rows, control trial rows, validation rows."""
    n1, n0, nv = len(y_trial_treated), len(y_trial_control), len(y_val)
    n = n1 + n0 + nv
    is_trial = np.r_[np.ones(n1 + n0, bool), np.zeros(nv, bool)]
    a = np.r_[np.ones(n1, int), np.zeros(n0 + nv, int)]
    y = np.r_[y_trial_treated, y_trial_control, y_val].astype(float)
    z = np.r_[np.full(n1 + n0, np.nan), z_val].astype(float)
    if X is None:
        X = np.zeros((n, 0))
    return StackedDataset(is_trial=is_trial, treatment=a, y=y, z=z,
                          z_observed=~np.isnan(z), X=X)

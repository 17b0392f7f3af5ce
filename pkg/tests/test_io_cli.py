import csv
import json

import numpy as np
import pytest

from xportme.cli import main
from xportme.core import StackedDataset
from xportme.errors import BadLabel, MissingColumn, NonNumeric, ValidationRowTreated
from xportme.estimators import empirical_mu0_bias, naive_mu0, weighted_mu0
from xportme.fixtures import sodium_like
from xportme.io import parse_stacked_csv, write_stacked_csv
from xportme.membership import fit_membership, make_weights, predict_prob, trim_weights


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- parsing -------------------------------------------------------------------

def test_parse_minimal(tmp_path):
    p = write(tmp_path / "d.csv", "S,A,Y,Z,age,male\nrct,1,2.0,,40,1\nrct,0,1.0,,50,0\n"
                                  "v,0,1.5,1.7,45,1\nv,0,0.5,0.4,60,0\n")
    d = parse_stacked_csv(p)
    assert d.covariate_names == ("age", "male")
    assert d.labels == ["rct", "rct", "v", "v"]
    assert d.z_observed.tolist() == [False, False, True, True]
    assert d.X[2].tolist() == [45.0, 1.0]
    assert d.prob is None


@pytest.mark.parametrize("text, exc, where", [
    ("S,A,x1\nrct,0,1\n", MissingColumn, "'Y'"),
    ("S,A,Y\ntrial,0,1\n", BadLabel, "row 1"),
    ("S,A,Y,x1\nrct,0,1,2\nv,0,abc,1\n", NonNumeric, "row 2"),
    ("S,A,Y\nrct,2,1\n", NonNumeric, "row 1"),
    ("S,A,Y,Z\nrct,0,1,\nv,1,1,1\n", ValidationRowTreated, "row 2"),
])
def test_parse_errors_name_the_row(tmp_path, text, exc, where):
    with pytest.raises(exc, match=where):
        parse_stacked_csv(write(tmp_path / "bad.csv", text))


def test_round_trip(tmp_path, rng):
    n = 30
    d = StackedDataset.from_arrays(
        sample=["rct"] * 15 + ["v"] * 15, treatment=np.r_[rng.integers(0, 2, 15), np.zeros(15)],
        y=rng.normal(size=n), z=[None] * 15 + list(rng.normal(size=15)),
        X=rng.normal(size=(n, 3)), covariate_names=["a", "b", "c"], prob=rng.random(n))
    write_stacked_csv(d, tmp_path / "rt.csv")
    back = parse_stacked_csv(tmp_path / "rt.csv")
    for attr in ("y", "X", "prob"):
        np.testing.assert_allclose(getattr(back, attr), getattr(d, attr), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(back.z_observed, d.z_observed)
    np.testing.assert_allclose(back.z[d.z_observed], d.z[d.z_observed], atol=1e-12)
    assert back.covariate_names == d.covariate_names


# -- estimate / weights ----------------------------------------------------------

def homogeneous(rng, n=200):
    """Both samples from the same covariate distribution."""
    X = rng.normal(size=(2 * n, 2))
    s = np.r_[np.ones(n, bool), np.zeros(n, bool)]
    a = np.r_[rng.integers(0, 2, n), np.zeros(n, int)]
    z = rng.normal(size=2 * n)
    y = z + 0.3 + rng.normal(0, 0.2, 2 * n)
    return StackedDataset(is_trial=s, treatment=a, y=y, z=z,
                          z_observed=np.ones(2 * n, bool), X=X)


def test_estimate_on_unshifted_data(tmp_path, rng):
    d = homogeneous(rng)
    write_stacked_csv(d, tmp_path / "d.csv")
    assert main(["estimate", "--data", str(tmp_path / "d.csv"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "estimate.json").read_text())
    est = rep["estimates"]
    assert abs(est["mu0_weighted"]["estimate"] - est["mu0_naive"]["estimate"]) < 0.05
    assert len(rep["corrected_ate"]) == 9
    assert rep["membership"]["source"] == "fitted"
    assert {"metadata.json", "balance.csv"} <= {p.name for p in tmp_path.iterdir()}


def test_prob_column_matches_fitted_model(tmp_path, rng):
    d = homogeneous(rng)
    probs = predict_prob(fit_membership(d), d)
    with_prob = StackedDataset(is_trial=d.is_trial, treatment=d.treatment, y=d.y, z=d.z,
                               z_observed=d.z_observed, X=d.X, prob=probs)
    write_stacked_csv(d, tmp_path / "fit.csv")
    write_stacked_csv(with_prob, tmp_path / "prob.csv")
    for name in ("fit", "prob"):
        assert main(["estimate", "--data", str(tmp_path / f"{name}.csv"),
                     "--out", str(tmp_path / name)]) == 0
    a = json.loads((tmp_path / "fit" / "estimate.json").read_text())["estimates"]
    b = json.loads((tmp_path / "prob" / "estimate.json").read_text())["estimates"]
    assert b["mu0_weighted"]["estimate"] == pytest.approx(a["mu0_weighted"]["estimate"],
                                                          abs=1e-12)


def test_weights_balance_and_trim(tmp_path, rng):
    n = 400
    X = np.r_[rng.normal(0.8, 1, (n, 2)), rng.normal(0, 1, (n, 2))]
    trial = np.arange(2 * n) < n
    d = StackedDataset(is_trial=trial, treatment=np.arange(2 * n) % 2 * trial,
                       y=rng.normal(size=2 * n), z=rng.normal(size=2 * n),
                       z_observed=np.ones(2 * n, bool), X=X)
    write_stacked_csv(d, tmp_path / "d.csv")
    assert main(["weights", "--data", str(tmp_path / "d.csv"), "--trim-quantile", "0.9",
                 "--out", str(tmp_path)]) == 0
    bal = read_csv(tmp_path / "balance.csv")
    assert all(float(r["asmd_weighted"]) <= float(r["asmd"]) for r in bal)
    rows = read_csv(tmp_path / "weights.csv")
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    raw = np.array([float(r["weight"]) for r in rows if r["S"] == "v"])
    trimmed = np.array([float(r["weight_trimmed"]) for r in rows if r["S"] == "v"])
    assert diag["trim_threshold"] == np.quantile(raw, 0.9)
    assert trimmed.max() == diag["trim_threshold"]
    assert all(float(r["weight"]) == 0 for r in rows if r["S"] == "rct")


def test_estimate_reports_invalid_data(tmp_path, capsys):
    write(tmp_path / "d.csv", "S,A,Y,Z\nrct,0,1,\nv,0,1,1\nv,0,2,\n")
    assert main(["estimate", "--data", str(tmp_path / "d.csv"), "--out", str(tmp_path)]) == 1
    assert "validation rows must have z_true" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["estimate", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 1


# -- dom -----------------------------------------------------------------------

def test_dom_command(tmp_path, capsys):
    write(tmp_path / "p.csv", "fitted,true\n0.2,0.1\n0.5,0.5\n0.6,0.9\n")
    assert main(["dom", "--data", str(tmp_path / "p.csv"), "--out", str(tmp_path)]) == 0
    t = np.array([0.1, 0.5, 0.9])
    expected = np.mean([0.1, 0.0, 0.3]) / t.std(ddof=1)
    assert json.loads((tmp_path / "dom.json").read_text())["dom"] == pytest.approx(expected)
    assert float(capsys.readouterr().out) == pytest.approx(expected)
    assert main(["dom", "--data", str(tmp_path / "p.csv"), "--true-col", "truth",
                 "--out", str(tmp_path)]) == 1


# -- simulate --------------------------------------------------------------------

SIM = ["simulate", "--gamma1", "0.4", "--gamma2", "0.4", "--models", "1",
       "--replicates", "3", "--n", "100", "--pop-size", "5000"]


def test_simulate_single_cell(tmp_path):
    assert main(SIM + ["--seed", "1", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "results.csv")
    assert [r["estimator"] for r in rows] == ["naive", "weighted_true", "weighted_mains"]
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["base_seed"] == 1 and meta["n_scenarios"] == 1


def test_simulate_same_seed_same_bytes(tmp_path):
    for k in ("a", "b"):
        assert main(SIM + ["--seed", "7", "--out", str(tmp_path / k)]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == \
        (tmp_path / "b" / "results.csv").read_bytes()
    assert main(SIM + ["--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "results.csv").read_bytes() != \
        (tmp_path / "a" / "results.csv").read_bytes()


def test_simulate_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("XPORTME_SEED", "42")
    assert main(SIM + ["--out", str(tmp_path / "env")]) == 0
    assert json.loads((tmp_path / "env" / "metadata.json").read_text())["base_seed"] == 42
    write(tmp_path / "cfg.json", json.dumps({"seed": 5, "replicates": 2}))
    assert main(SIM[:7] + ["--config", str(tmp_path / "cfg.json"),
                           "--out", str(tmp_path / "cfg")]) == 0
    meta = json.loads((tmp_path / "cfg" / "metadata.json").read_text())
    assert meta["base_seed"] == 5 and meta["config"]["replicates"] == 2
    assert main(SIM + ["--config", str(tmp_path / "cfg.json"), "--seed", "3",
                       "--out", str(tmp_path / "flag")]) == 0
    meta = json.loads((tmp_path / "flag" / "metadata.json").read_text())
    assert meta["base_seed"] == 3 and meta["config"]["replicates"] == 3


@pytest.mark.parametrize("extra", [["--gamma1", "1.5"], ["--models", "9"]])
def test_simulate_bad_config(tmp_path, extra):
    assert main(SIM + extra + ["--out", str(tmp_path)]) == 1


def test_bad_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("XPORTME_SEED", "abc")
    assert main(SIM + ["--out", str(tmp_path)]) == 1


# -- sodium-like fixture -----------------------------------------------------------

def _emp_bias_ratio(seed):
    d = sodium_like(seed=seed)
    w = trim_weights(make_weights(predict_prob(fit_membership(d), d), d), 0.9)
    return (abs(empirical_mu0_bias(d, weighted_mu0(d, w)))
            / abs(empirical_mu0_bias(d, naive_mu0(d))))


def test_sodium_fixture_shape():
    d = sodium_like()
    assert (d.n_rct, d.n_v) == (810, 484)
    assert not d.treatment[d.is_validation].any()
    assert d.z_observed.all()
    assert not sodium_like(observe_trial_z=False).z_observed[d.is_trial].any()


@pytest.mark.slow
def test_sodium_fixture_halves_bias_on_most_seeds():
    ratios = [_emp_bias_ratio(s) for s in range(40)]
    assert np.mean(np.array(ratios) <= 0.5) >= 0.9

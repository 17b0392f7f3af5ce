"""Command-line interface: ``xportme {estimate,weights,simulate,dom}``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import error_moments, validate_dataset
from .errors import ConfigError, FitError, XportmeError
from .estimators import (corrected_ate, empirical_mu0_bias, naive_ate, naive_mu0,
                         weighted_mu0)
from .io import load_config, parse_stacked_csv, write_json, write_rows_csv
from .membership import (ASMD_CONVENTION, QUANTILE_METHOD, TermSet, asmd,
                         balance_table, dom, fit_membership, make_weights,
                         predict_prob, trim_weights)
from .simulation import (GRID_GAMMAS, GRID_MODELS, RESULT_COLUMNS, build_grid,
                         results_to_csv, run_grid)

SEED_ENV = "XPORTME_SEED"
MU1_OFFSETS = (-0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2)

BALANCE_COLUMNS = ("covariate", "trial_mean", "validation_mean", "asmd",
                   "validation_mean_weighted", "asmd_weighted")
WEIGHTS_COLUMNS = ("row", "S", "prob", "weight", "weight_trimmed")

DEFAULTS = {
    "estimate": {"terms": None, "trim_quantile": None, "mu1_grid": None,
                 "ignore_prob": False, "max_iter": 100, "tol": 1e-8,
                 "se_denominator": "ess", "out": "."},
    "weights": {"terms": None, "trim_quantile": None, "ignore_prob": False,
                "max_iter": 100, "tol": 1e-8, "out": "."},
    "simulate": {"gamma1": "0.2", "gamma2": "0.2", "models": "1", "replicates": 100,
                 "n": 1000, "pop_size": 100_000, "threads": 1, "noise_var": 1.5,
                 "full_grid": False, "executor": "thread", "out": "."},
    "dom": {"fitted_col": "fitted", "true_col": "true", "out": "."},
}

EPILOG = f"""\
output files (UTF-8, fixed column order):
  estimate  estimate.json, balance.csv, metadata.json
  weights   weights.csv, balance.csv, diagnostics.json, metadata.json
  simulate  results.csv, metadata.json
  dom       dom.json, metadata.json

  results.csv  columns: {",".join(RESULT_COLUMNS)}
  balance.csv  columns: {",".join(BALANCE_COLUMNS)}
  weights.csv  columns: {",".join(WEIGHTS_COLUMNS)}

The base seed comes from --seed, then the config file, then ${SEED_ENV}, then 0.
"""


def _floats(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _ints(value) -> list:
    return [int(v) for v in _floats(value)]


def _resolve_seed(cfg: dict) -> int:
    if cfg.get("seed") is not None:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"]).resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metadata(command: str, cfg: dict, **extra) -> dict:
    return {"command": command, "version": __version__, "config": cfg, **extra}


def _membership(d, cfg: dict):
    """Probabilities from the prob column when present, else a fitted model."""
    if d.prob is not None and not cfg.get("ignore_prob"):
        return d.prob, {"source": "prob_column"}
    terms = (TermSet.parse(cfg["terms"], d.covariate_names) if cfg.get("terms")
             else TermSet.mains(d.n_covariates))
    try:
        m = fit_membership(d, terms, max_iter=int(cfg["max_iter"]), tol=float(cfg["tol"]))
    except FitError as exc:
        raise type(exc)(f"membership model {terms.names(d.covariate_names)}: {exc}") from None
    info = {"source": "fitted", "terms": str(terms),
            "coefficients": m.coefficients(), "converged": m.converged,
            "iterations": m.iterations, "score_max_norm": m.final_gradient_norm}
    return predict_prob(m, d), info


def _load(cfg: dict):
    d = parse_stacked_csv(cfg["data"])
    problems = validate_dataset(d)
    if problems:
        raise XportmeError("invalid dataset: " + "; ".join(str(p) for p in problems[:10]))
    return d


def _balance_rows(d, w) -> list:
    pre = balance_table(d)
    post = balance_table(d, w)
    return [{"covariate": a.covariate, "trial_mean": a.trial_mean,
             "validation_mean": a.validation_mean, "asmd": a.asmd,
             "validation_mean_weighted": b.validation_mean, "asmd_weighted": b.asmd}
            for a, b in zip(pre, post)]


def _weights(d, probs, cfg):
    w = make_weights(probs, d)
    if cfg.get("trim_quantile") is not None:
        w = trim_weights(w, float(cfg["trim_quantile"]))
    return w


def cmd_estimate(cfg: dict) -> dict:
    d = _load(cfg)
    probs, info = _membership(d, cfg)
    w = _weights(d, probs, cfg)
    mu0_n = naive_mu0(d)
    mu0_w = weighted_mu0(d, w, se_denominator=cfg["se_denominator"])
    ate = naive_ate(d)
    grid = _floats(cfg.get("mu1_grid")) or [mu0_w.estimate + o for o in MU1_OFFSETS]
    corrected = corrected_ate(d, mu0_w, grid)

    trial_ctrl = d.is_trial & (d.treatment == 0)
    empirical = None
    if trial_ctrl.any() and d.z_observed[trial_ctrl].all():
        empirical = {"mu0_naive": empirical_mu0_bias(d, mu0_n),
                     "mu0_weighted": empirical_mu0_bias(d, mu0_w)}

    report = {
        "n_v": d.n_v, "n_rct": d.n_rct,
        "membership": info,
        "asmd_probs": asmd(probs[d.is_trial], probs[d.is_validation], binary=False),
        "weights": {"trimmed": w.trimmed, "trim_quantile": w.trim_quantile,
                    "trim_threshold": w.trim_threshold, "quantile_method": QUANTILE_METHOD,
                    "effective_sample_size": mu0_w.n_effective},
        "estimates": {r.label: r.to_dict() for r in (ate, mu0_n, mu0_w)},
        "empirical_mu0_bias": empirical,
        "corrected_ate": [r.to_dict() for r in corrected],
        "error_moments": [{"sample": m.sample.value, "arm": m.arm, "mu": m.mu,
                           "sigma2": m.sigma2, "n": m.n} for m in error_moments(d)],
        "asmd_convention": ASMD_CONVENTION,
    }
    out = _outdir(cfg)
    write_json(out / "estimate.json", report)
    write_rows_csv(out / "balance.csv", BALANCE_COLUMNS, _balance_rows(d, w))
    write_json(out / "metadata.json", _metadata("estimate", cfg))
    return report


def cmd_weights(cfg: dict) -> dict:
    d = _load(cfg)
    probs, info = _membership(d, cfg)
    raw = make_weights(probs, d)
    w = _weights(d, probs, cfg)
    labels = d.labels
    rows = [{"row": i + 1, "S": labels[i], "prob": float(probs[i]),
             "weight": float(raw.weights[i]), "weight_trimmed": float(w.weights[i])}
            for i in range(d.n)]
    vw = w.validation_weights
    diag = {
        "membership": info,
        "asmd_probs": asmd(probs[d.is_trial], probs[d.is_validation], binary=False),
        "trimmed": w.trimmed, "trim_quantile": w.trim_quantile,
        "trim_threshold": w.trim_threshold, "quantile_method": QUANTILE_METHOD,
        "max_weight": float(vw.max()) if len(vw) else None,
        "mean_weight": float(vw.mean()) if len(vw) else None,
        "effective_sample_size": float(vw.sum() ** 2 / np.dot(vw, vw)),
        "asmd_convention": ASMD_CONVENTION,
    }
    out = _outdir(cfg)
    write_rows_csv(out / "weights.csv", WEIGHTS_COLUMNS, rows)
    write_rows_csv(out / "balance.csv", BALANCE_COLUMNS, _balance_rows(d, w))
    write_json(out / "diagnostics.json", diag)
    write_json(out / "metadata.json", _metadata("weights", cfg))
    return diag


def cmd_simulate(cfg: dict) -> dict:
    seed = _resolve_seed(cfg)
    if cfg.get("full_grid"):
        g1, g2, models = list(GRID_GAMMAS), list(GRID_GAMMAS), list(GRID_MODELS)
    else:
        g1, g2, models = _floats(cfg["gamma1"]), _floats(cfg["gamma2"]), _ints(cfg["models"])
    for g in g1 + g2:
        if not 0.0 <= g <= 1.0:
            raise ConfigError(f"gamma value {g} outside [0, 1]")
    if any(m not in GRID_MODELS for m in models):
        raise ConfigError(f"models must be within 1..7, got {models}")
    try:
        specs = build_grid(g1, g2, models, seed=seed,
                           population_size=int(cfg["pop_size"]),
                           sample_size=int(cfg["n"]), replicates=int(cfg["replicates"]),
                           noise_var=float(cfg["noise_var"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    results = run_grid(specs, parallelism=int(cfg["threads"]), executor=cfg["executor"])
    out = _outdir(cfg)
    (out / "results.csv").write_text(results_to_csv(results), encoding="utf-8")
    cells = [{"gamma1": r.scenario.gamma1, "gamma2": r.scenario.gamma2,
              "true_model": r.scenario.true_model, "stream": r.scenario.stream,
              "failed_replicates": r.failed_replicates,
              "failure_reasons": r.failure_reasons, "error": r.error,
              "dom_mains": r.dom_mains, "eq5_oracle": r.eq5_oracle}
             for r in results]
    meta = _metadata("simulate", cfg,
                     base_seed=seed, n_scenarios=len(specs),
                     total_failed_replicates=sum(r.failed_replicates for r in results),
                     cells=cells)
    write_json(out / "metadata.json", meta)
    return meta


def cmd_dom(cfg: dict) -> dict:
    import csv

    fitted, true = [], []
    with open(cfg["data"], newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in (cfg["fitted_col"], cfg["true_col"]):
            if col not in (reader.fieldnames or []):
                raise ConfigError(f"column {col!r} not found in {cfg['data']}")
        for rec in reader:
            fitted.append(float(rec[cfg["fitted_col"]]))
            true.append(float(rec[cfg["true_col"]]))
    value = dom(fitted, true)
    out = _outdir(cfg)
    report = {"dom": value, "n": len(fitted)}
    write_json(out / "dom.json", report)
    write_json(out / "metadata.json", _metadata("dom", cfg))
    print(repr(value))
    return report


COMMANDS = {"estimate": cmd_estimate, "weights": cmd_weights,
            "simulate": cmd_simulate, "dom": cmd_dom}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xportme", epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Transportability-weighted correction of outcome measurement error.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter,
                           argument_default=None)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="output directory (default: current directory)")
        return p

    for name, help_text in [("estimate", "estimate the control error mean, weighted and not"),
                            ("weights", "fit the membership model and emit weights")]:
        p = add(name, help_text)
        p.add_argument("--data", help="stacked CSV (columns S, A, Y, [Z], [prob], covariates)")
        p.add_argument("--terms", help="membership terms, e.g. 'x1+x2+x3:x4+x3^2'")
        p.add_argument("--trim-quantile", type=float,
                       help="cap validation weights at this quantile (e.g. 0.9)")
        p.add_argument("--ignore-prob", action="store_true", default=None,
                       help="fit the membership model even if a prob column exists")
        p.add_argument("--max-iter", type=int)
        p.add_argument("--tol", type=float)
        if name == "estimate":
            p.add_argument("--mu1-grid", help="comma list of assumed treatment error means")
            p.add_argument("--se-denominator", choices=["ess", "n"])

    p = add("simulate", "run the Monte Carlo scenario grid")
    p.add_argument("--gamma1", help="comma list of membership scales in [0, 1]")
    p.add_argument("--gamma2", help="comma list of error scales in [0, 1]")
    p.add_argument("--models", help="comma list of true membership forms (1-7)")
    p.add_argument("--full-grid", action="store_true", default=None,
                   help="gammas 0..1 by 0.2 and all seven forms")
    p.add_argument("--replicates", type=int)
    p.add_argument("--n", type=int, help="sample size per study")
    p.add_argument("--pop-size", type=int, help="population size (1000000 in the original design)")
    p.add_argument("--noise-var", type=float, help="variance of the outcome noise")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--executor", choices=["thread", "process"])

    p = add("dom", "degree of misspecification between two probability columns")
    p.add_argument("--data", help="CSV with fitted and true probability columns")
    p.add_argument("--fitted-col")
    p.add_argument("--true-col")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        cfg.update(load_config(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    if args.command != "simulate":
        if not cfg.get("data"):
            raise ConfigError("--data is required")
        cfg["data"] = str(Path(cfg["data"]).resolve())
    cfg["out"] = str(Path(cfg["out"]).resolve())
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except (XportmeError, OSError, ValueError) as exc:
        print(f"xportme {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""CSV and JSON reading/writing for stacked datasets and reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .core import SampleLabel, StackedDataset
from .errors import (BadLabel, ConfigError, MissingColumn, NonNumeric,
                     ValidationRowTreated)

REQUIRED = ("S", "A", "Y")
OPTIONAL = ("Z",)


def _num(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumeric(f"row {row}, column {col!r}: {text!r} is not numeric") from None
    if not math.isfinite(value):
        raise NonNumeric(f"row {row}, column {col!r}: {text!r} is not finite")
    return value


def parse_stacked_csv(path, prob_column: Optional[str] = "prob") -> StackedDataset:
    """Read a stacked CSV with columns ``S, A, Y`` and optional ``Z``, ``prob``.

    Every other column is a numeric covariate, kept in header order.  Rows
    are numbered from 1 (the first data line) in error messages.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file, no header row") from None
        for col in REQUIRED:
            if col not in header:
                raise MissingColumn(f"{path}: required column {col!r} not in header")
        pos = {h: i for i, h in enumerate(header)}
        special = set(REQUIRED) | set(OPTIONAL)
        if prob_column:
            special.add(prob_column)
        cov_names = [h for h in header if h not in special]

        labels, treat, ys, zs, probs, X = [], [], [], [], [], []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise MissingColumn(f"row {r}: {len(rec)} fields, header has {len(header)}")
            s_raw = rec[pos["S"]].strip()
            try:
                label = SampleLabel.parse(s_raw)
            except ValueError:
                raise BadLabel(f"row {r}: S = {s_raw!r}, expected 'v' or 'rct'") from None
            a = _num(rec[pos["A"]], r, "A")
            if a not in (0.0, 1.0):
                raise NonNumeric(f"row {r}: A = {rec[pos['A']]!r}, expected 0 or 1")
            if label is SampleLabel.VALIDATION and a == 1.0:
                raise ValidationRowTreated(f"row {r}: validation rows must have A = 0")
            labels.append(label is SampleLabel.TRIAL)
            treat.append(int(a))
            ys.append(_num(rec[pos["Y"]], r, "Y"))
            if "Z" in pos and rec[pos["Z"]].strip():
                zs.append(_num(rec[pos["Z"]], r, "Z"))
            else:
                zs.append(math.nan)
            if prob_column and prob_column in pos:
                probs.append(_num(rec[pos[prob_column]], r, prob_column))
            X.append([_num(rec[pos[c]], r, c) for c in cov_names])

    z = np.array(zs, dtype=float)
    return StackedDataset(
        is_trial=np.array(labels, dtype=bool), treatment=np.array(treat, dtype=int),
        y=np.array(ys, dtype=float), z=z, z_observed=~np.isnan(z),
        X=np.array(X, dtype=float).reshape(len(ys), len(cov_names)),
        covariate_names=tuple(cov_names),
        prob=np.array(probs, dtype=float) if prob_column and prob_column in pos else None,
    )


def fmt_float(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "NA" if math.isnan(x) else repr(x)


def write_stacked_csv(d: StackedDataset, path, prob_column: str = "prob") -> None:
    header = ["S", "A", "Y", "Z"]
    if d.prob is not None:
        header.append(prob_column)
    header += list(d.covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        labels = d.labels
        for i in range(d.n):
            row = [labels[i], int(d.treatment[i]), repr(float(d.y[i])),
                   repr(float(d.z[i])) if d.z_observed[i] else ""]
            if d.prob is not None:
                row.append(repr(float(d.prob[i])))
            row += [repr(float(v)) for v in d.X[i]]
            w.writerow(row)


def write_rows_csv(path, columns, rows) -> None:
    """Write dict rows with a fixed column order; floats keep full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt_float(row[c]) if isinstance(row[c], (float, np.floating))
                        else row[c] for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def load_config(path) -> dict:
    """Load a JSON config file (a flat object of option names to values)."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}

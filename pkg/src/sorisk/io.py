"""Return-panel ingestion, result table writers and run manifests."""

import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .backtest import TrimRule, apply_trim
from .covariance import ReturnsPanel
from .errors import DataFormatError

log = logging.getLogger(__name__)

MISSING = ("", "na", "nan", "null", "none")


def _parse_date(text, lineno):
    try:
        return _dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataFormatError(f"line {lineno}: invalid ISO-8601 date {text!r}") from None


def load_returns_csv(path, trim: TrimRule = None) -> ReturnsPanel:
    """Read a ``date,<asset>,...`` CSV of simple returns into a panel.

    Assets with any missing value are dropped (the count is logged at
    WARNING level). Malformed rows, duplicate dates and decreasing dates
    raise :class:`DataFormatError` naming the line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0].lower() != "date":
            raise DataFormatError(f"{path}: line 1: header must be 'date,<asset>,...'")
        assets = header[1:]
        if len(set(assets)) != len(assets):
            raise DataFormatError(f"{path}: line 1: duplicate asset names")
        dates, rows = [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, "
                                      f"got {len(row)}")
            d = _parse_date(row[0], lineno)
            if dates and d == dates[-1]:
                raise DataFormatError(f"{path}: line {lineno}: duplicate date {d.isoformat()}")
            if dates and d < dates[-1]:
                raise DataFormatError(f"{path}: line {lineno}: date {d.isoformat()} is before "
                                      f"{dates[-1].isoformat()} (dates must increase)")
            vals = []
            for cell in row[1:]:
                c = cell.strip()
                if c.lower() in MISSING:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(c)
                except ValueError:
                    raise DataFormatError(f"{path}: line {lineno}: cannot parse {c!r} "
                                          "as a number") from None
                if not math.isfinite(v):
                    raise DataFormatError(f"{path}: line {lineno}: non-finite value {c!r}")
                vals.append(v)
            dates.append(d)
            rows.append(vals)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least 2 dated rows, got {len(rows)}")
    values = np.array(rows, dtype=float).T
    complete = np.all(np.isfinite(values), axis=1)
    dropped = int((~complete).sum())
    if dropped:
        log.warning("%s: dropped %d of %d assets with incomplete history",
                    path, dropped, len(assets))
    if not complete.any():
        raise DataFormatError(f"{path}: no asset has a complete history")
    kept = [a for a, ok in zip(assets, complete) if ok]
    panel = ReturnsPanel(kept, [d.isoformat() for d in dates], values[complete])
    return panel if trim is None else apply_trim(panel, trim)


def write_returns_csv(path, panel: ReturnsPanel):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.assets])
        for j, d in enumerate(panel.dates):
            w.writerow([d, *(repr(float(v)) for v in panel.values[:, j])])


# ------------------------------------------------------------ result tables

def _cell(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


def _text(v):
    v = _cell(v)
    return repr(v) if isinstance(v, float) else str(v)


def _column_type(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind in "US":
        return "string"
    if arr.dtype.kind in "iub":
        return "integer"
    return "number"


def _rows(table):
    keys = list(table)
    n = len(table[keys[0]]) if keys else 0
    return keys, [[table[k][i] for k in keys] for i in range(n)]


def write_table(path, table, fmt="csv"):
    """Write a columnar table as CSV (floats in round-trip ``repr``) or JSON rows."""
    keys, rows = _rows(table)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for r in rows:
                w.writerow([_text(v) for v in r])
    elif fmt == "json":
        def clean(v):
            v = _cell(v)
            return None if isinstance(v, float) and not math.isfinite(v) else v
        data = [{k: clean(v) for k, v in zip(keys, r)} for r in rows]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, allow_nan=False)
            fh.write("\n")
    else:
        raise ValueError(f"unknown output format {fmt!r}")


def read_table_csv(path):
    """Inverse of :func:`write_table` for CSV; numeric columns parse to arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        keys = next(reader)
        cols = {k: [] for k in keys}
        for row in reader:
            for k, v in zip(keys, row):
                cols[k].append(v)
    out = {}
    for k, vals in cols.items():
        try:
            out[k] = np.array([int(v) for v in vals])
        except ValueError:
            try:
                out[k] = np.array([float(v) for v in vals])
            except ValueError:
                out[k] = np.array(vals)
    return out


COLUMN_DOCS = {
    "trial": "trial index within its cell or grid point",
    "cell": "grid cell index",
    "step": "rolling-window step index (forecast at step uses data up to that period)",
    "portfolio": "portfolio index within the ensemble",
    "group": "portfolio ensemble: optimized or control",
    "moment": "which inverse moment: inverse or sandwich",
    "t_obs": "estimation window length T",
    "n_assets": "number of assets N",
    "k_factors": "number of factors K",
    "n_trials": "number of trials",
    "n_worlds": "number of simulated factor worlds",
    "n_portfolios": "portfolios per ensemble",
    "t_over_n": "ratio T/N of the grid cell",
    "true_sigma": "true per-period volatility",
    "sd_asset1": "sample stdev of asset 1 (zero-mean estimator)",
    "sd_asset2": "sample stdev of asset 2 (zero-mean estimator)",
    "chosen_asset": "asset held by the active manager (1 or 2)",
    "active_forecast": "risk forecast of the active manager",
    "passive_forecast": "risk forecast of the passive manager (asset 1)",
    "expected_passive": "exact expectation of the passive forecast",
    "R": "target expected return",
    "r_index": "index into the target-return grid",
    "true_frontier": "minimum risk attainable at R with the true covariance",
    "naive": "naive stdev forecast sqrt(w' Omega_hat w)",
    "realized": "realized stdev sqrt(w' Omega w)",
    "corrected": "corrected stdev forecast",
    "realized_above_frontier": "1 if realized risk is at least the true frontier risk",
    "naive_over_realized": "mean naive over mean realized",
    "corrected_over_realized": "mean corrected over mean realized",
    "min_realized_minus_frontier": "smallest realized minus frontier risk over trials",
    "inverse_coefficient": "tr(Omega Omega_hat^-1)/N for the trial",
    "sandwich_coefficient": "tr(Omega Omega_hat^-1 Omega Omega_hat^-1)/N for the trial",
    "coefficient_exact": "exact coefficient c in E[M] = c Omega^-1",
    "coefficient_leading": "leading-order coefficient",
    "mc_coefficient": "Monte Carlo coefficient estimate",
    "se_coefficient": "standard error of the Monte Carlo coefficient",
    "z_exact": "(MC - exact) / SE",
    "z_leading": "(MC - leading-order) / SE",
    "max_rel_dev_exact": "max elementwise |MC mean - exact| relative to max |exact|",
    "max_rel_dev_leading": "max elementwise |MC mean - leading| relative to max |leading|",
    "max_abs_z_exact": "max elementwise |z| against the exact target",
    "max_abs_z_leading": "max elementwise |z| against the leading-order target",
    "b_naive": "full-sample bias statistic of the naive forecast",
    "b_corrected": "full-sample bias statistic of the corrected forecast",
    "b_control": "full-sample bias statistic of the control portfolio",
    "corrected_minus_control": "mean of corrected minus control bias statistic",
    "expected_naive": "predicted naive bias statistic (1 - m/T)^-1",
    "opt_naive": "ensemble mean trailing bias statistic, optimized, naive",
    "opt_corrected": "ensemble mean trailing bias statistic, optimized, corrected",
    "control_naive": "ensemble mean trailing bias statistic, control",
    "mean_opt_naive": "time average of opt_naive",
    "mean_opt_corrected": "time average of opt_corrected",
    "mean_control": "time average of control_naive",
    "max_abs_corrected_minus_control": "largest |opt_corrected - control_naive| over time",
    "naive_variance": "naive variance forecast",
    "corrected_variance": "corrected variance forecast",
    "true_variance": "true variance w' Omega w",
    "naive_factor_variance": "naive factor variance forecast",
    "corrected_factor_variance": "corrected factor variance forecast",
    "true_factor_variance": "factor variance under the true model",
    "specific_variance": "specific variance forecast",
    "mean_specific_share": "mean share of specific in naive total variance",
    "naive_over_true": "mean naive over mean true variance",
    "corrected_over_true": "mean corrected over mean true variance",
    "expected_naive_over_true": "predicted naive over true ratio",
    "rho": "exposure noise level",
    "model_factor_risk": "model factor variance of the portfolio",
    "correction": "coherent exposure-error correction",
    "predicted": "model factor variance plus correction",
    "ratio": "predicted over realized",
    "mean_predicted_over_realized": "mean of predicted/realized",
    "mean_model_over_realized": "mean of model/realized",
    "ratio_of_means": "mean predicted over mean realized",
    "mean_naive": "mean naive stdev", "mean_realized": "mean realized stdev",
    "mean_corrected": "mean corrected stdev", "mean_true": "mean true variance",
    "mean_active": "mean active forecast", "mean_passive": "mean passive forecast",
}


def describe_column(name):
    if name in COLUMN_DOCS:
        return COLUMN_DOCS[name]
    if name.startswith("se_"):
        return "standard error of " + name[3:]
    if name.startswith("mean_b_"):
        return "trial mean of b_" + name[7:]
    if name.startswith("full_"):
        return "ensemble mean full-sample bias statistic (" + name[5:] + ")"
    return name.replace("_", " ")


def table_schema(name, table):
    return {"table": name,
            "columns": [{"name": k, "type": _column_type(v), "description": describe_column(k)}
                        for k, v in table.items()]}


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    """Provenance of one run: config echo, versions, seed, times, files and digests."""

    config: dict
    library_version: str
    master_seed: int
    started_at: str
    finished_at: str = ""
    outputs: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    command: str = ""
    seed_info: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"

    def write(self, path):
        _atomic_write_text(path, self.to_json())

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def utc_now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_result(result, out_dir, base, fmt="csv"):
    """Write every table of ``result`` plus a schema per table; returns ``{file: sha256}``."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for name, table in result.tables.items():
        stem = base if name == "summary" else f"{base}_{name}"
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        write_table(path, table, fmt)
        schema_path = os.path.join(out_dir, f"{stem}.schema.json")
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump(table_schema(name, table), fh, indent=1)
            fh.write("\n")
        for p in (path, schema_path):
            written[os.path.basename(p)] = sha256_file(p)
    return written

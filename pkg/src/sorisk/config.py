"""Experiment configuration: INI-style files with strict validation.

A config file has an ``[experiment]`` section (``experiment``,
``master_seed``, ``n_trials``) and an optional ``[parameters]`` section with
experiment-specific keys. Unknown sections and keys are rejected; omitted
keys take the documented defaults for the experiment.

Example::

    [experiment]
    experiment = frontier
    master_seed = 7
    n_trials = 200

    [parameters]
    n_assets = 50
    t_obs = 100
    r_grid = 0.0, 0.02, 0.05, 0.1, 0.2
"""

import configparser
from dataclasses import dataclass, fields, replace
import json
import re
from typing import Optional

from .errors import ConfigError

CLI_EXPERIMENTS = ("toy_model", "frontier", "wishart_oracle", "asset_bias_grid",
                   "factor_bias", "backtest")
LIBRARY_EXPERIMENTS = ("asset_correction", "factor_correction", "coherent_exposure")
EXPERIMENTS = CLI_EXPERIMENTS + LIBRARY_EXPERIMENTS

HEADER_KEYS = ("experiment", "master_seed", "n_trials")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int = 0
    n_trials: Optional[int] = None
    n_assets: Optional[int] = None
    t_obs: Optional[int] = None
    k_factors: Optional[int] = None
    true_sigma: Optional[float] = None
    true_cov_spec: Optional[str] = None
    eig_low: Optional[float] = None
    eig_high: Optional[float] = None
    r_grid: Optional[tuple] = None
    alpha_scale: Optional[float] = None
    rho: Optional[float] = None
    rho_grid: Optional[tuple] = None
    kurtosis: Optional[float] = None
    n_grid: Optional[tuple] = None
    t_over_n_grid: Optional[tuple] = None
    n_universe: Optional[int] = None
    panel_length: Optional[int] = None
    n_portfolios: Optional[int] = None
    trailing_window: Optional[int] = None
    demean: Optional[bool] = None
    normalization: Optional[str] = None
    sampler: Optional[str] = None
    block_size: Optional[int] = None
    trim_mode: Optional[str] = None
    trim_lower: Optional[float] = None
    trim_upper: Optional[float] = None
    trim_sigma_cap: Optional[float] = None

    def with_defaults(self):
        """Fill every unset applicable field from the experiment's defaults."""
        base = DEFAULTS[self.experiment]
        updates = {k: v for k, v in base.items() if getattr(self, k) is None}
        return replace(self, **updates)

    def as_dict(self):
        """Applicable fields only (header first), values as plain JSON types."""
        out = {}
        for name in HEADER_KEYS + tuple(sorted(ALLOWED[self.experiment])):
            v = getattr(self, name)
            out[name] = list(v) if isinstance(v, tuple) else v
        return out


_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"
_FLOATS = "floats"
_INTS = "ints"
_OPT_FLOAT = "optional_float"

FIELD_KINDS = {
    "experiment": _STR, "master_seed": _INT, "n_trials": _INT,
    "n_assets": _INT, "t_obs": _INT, "k_factors": _INT,
    "true_sigma": _FLOAT, "true_cov_spec": _STR, "eig_low": _FLOAT, "eig_high": _FLOAT,
    "r_grid": _FLOATS, "alpha_scale": _FLOAT, "rho": _FLOAT, "rho_grid": _FLOATS,
    "kurtosis": _OPT_FLOAT, "n_grid": _INTS, "t_over_n_grid": _FLOATS,
    "n_universe": _INT, "panel_length": _INT, "n_portfolios": _INT,
    "trailing_window": _INT, "demean": _BOOL, "normalization": _STR, "sampler": _STR,
    "block_size": _INT, "trim_mode": _STR, "trim_lower": _OPT_FLOAT,
    "trim_upper": _OPT_FLOAT, "trim_sigma_cap": _OPT_FLOAT,
}

DEFAULTS = {
    "toy_model": dict(n_trials=100000, n_assets=2, t_obs=10, true_sigma=0.10, block_size=10000),
    "frontier": dict(n_trials=200, n_assets=50, t_obs=100, true_cov_spec="random",
                     eig_low=0.01, eig_high=0.25, r_grid=(0.0, 0.02, 0.05, 0.1, 0.2),
                     alpha_scale=0.05, sampler="bartlett"),
    "wishart_oracle": dict(n_trials=100000, n_assets=2, t_obs=10, true_cov_spec="identity",
                           eig_low=0.01, eig_high=0.25, sampler="bartlett", block_size=10000),
    "asset_bias_grid": dict(n_trials=50, n_grid=(10, 25, 50, 100),
                            t_over_n_grid=(1.5, 1.75, 2.0, 2.5, 3.0, 4.0),
                            n_universe=200, panel_length=1500, eig_low=0.01, eig_high=0.25,
                            kurtosis=None, demean=False),
    "factor_bias": dict(n_trials=1, n_assets=500, k_factors=20, t_obs=156, n_portfolios=500,
                        trailing_window=52, panel_length=156 + 520 + 1, rho=0.0, demean=False),
    "backtest": dict(n_trials=50, n_assets=None, t_obs=250, trailing_window=52, demean=True,
                     kurtosis=None, trim_mode="clamp", trim_lower=-0.5, trim_upper=0.8,
                     trim_sigma_cap=None),
    "asset_correction": dict(n_trials=10000, n_assets=20, t_obs=60, true_cov_spec="random",
                             eig_low=0.01, eig_high=0.25, normalization="unit_naive",
                             sampler="bartlett"),
    "factor_correction": dict(n_trials=5000, n_assets=1000, k_factors=10, t_obs=40, rho=0.1,
                              normalization="unit_naive"),
    "coherent_exposure": dict(n_trials=100, n_assets=2000, k_factors=5,
                              rho_grid=(0.01, 0.02, 0.05)),
}

# keys that may appear in [parameters] per experiment
ALLOWED = {name: frozenset(d) - {"n_trials"} for name, d in DEFAULTS.items()}

CHOICES = {
    "true_cov_spec": ("identity", "random"),
    "normalization": ("unit_naive", "none"),
    "sampler": ("bartlett", "panel"),
    "trim_mode": ("clamp", "drop", "none"),
}


def _convert(kind, raw, key):
    raw = raw.strip()
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _OPT_FLOAT:
            return None if raw.lower() in ("", "none") else float(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == _FLOATS:
            return tuple(float(p) for p in raw.split(",") if p.strip())
        if kind == _INTS:
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"field {key!r}: cannot parse {raw!r} as {kind}") from None


def _line_of(text, section, key):
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped):
            return lineno
    return None


def config_from_mapping(values: dict, experiment: Optional[str] = None,
                        where=lambda key: "") -> ExperimentConfig:
    """Build and validate a config from already-typed or string values."""
    values = dict(values)
    name = values.pop("experiment", None) or experiment
    if name is None:
        raise ConfigError("missing required field 'experiment'")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}{where('experiment')}; "
                          f"expected one of {', '.join(EXPERIMENTS)}")
    if experiment is not None and name != experiment:
        raise ConfigError(f"config is for {name!r} but {experiment!r} was requested")
    typed = {}
    for key, raw in values.items():
        if key not in FIELD_KINDS or (key not in HEADER_KEYS and key not in ALLOWED[name]):
            raise ConfigError(f"unknown key {key!r} for experiment {name!r}{where(key)}")
        kind = FIELD_KINDS[key]
        if isinstance(raw, str):
            typed[key] = _convert(kind, raw, key + where(key))
        else:
            typed[key] = tuple(raw) if isinstance(raw, list) else raw
    cfg = ExperimentConfig(experiment=name, **typed).with_defaults()
    validate_config(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read a config file (INI text, or a run manifest JSON) into a validated config."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON manifest: {exc}") from None
        if "config" not in data:
            raise ConfigError(f"{path}: JSON manifest has no 'config' entry")
        return config_from_mapping(data["config"])
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in ("experiment", "parameters"):
            raise ConfigError(f"{path}:{_line_of(text, section, '') or '?'}: "
                              f"unknown section [{section}]")
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    values = {}
    origin = {}
    for section in ("experiment", "parameters"):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if section == "experiment" and key not in HEADER_KEYS:
                raise ConfigError(f"{path}:{_line_of(text, section, key)}: key {key!r} "
                                  "belongs in [parameters]")
            if section == "parameters" and key in HEADER_KEYS:
                raise ConfigError(f"{path}:{_line_of(text, section, key)}: key {key!r} "
                                  "belongs in [experiment]")
            values[key] = raw
            origin[key] = _line_of(text, section, key)

    def where(key):
        line = origin.get(key)
        return f" (line {line} of {path})" if line else ""

    if "master_seed" not in values:
        raise ConfigError(f"{path}: missing required field 'master_seed'")
    return config_from_mapping(values, where=where)


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config`` of it reproduces ``cfg``."""
    lines = ["[experiment]"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in HEADER_KEYS]
    lines += ["", "[parameters]"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in sorted(ALLOWED[cfg.experiment])
              if getattr(cfg, k) is not None]
    return "\n".join(lines) + "\n"


def _fail(msg):
    raise ConfigError(msg)


def validate_config(cfg: ExperimentConfig):
    """Range and precondition checks; raises :class:`ConfigError`."""
    if not 0 <= cfg.master_seed < 2 ** 64:
        _fail("master_seed must be an unsigned 64-bit integer")
    if cfg.n_trials is None or cfg.n_trials < 1:
        _fail("n_trials must be at least 1")
    for key, options in CHOICES.items():
        v = getattr(cfg, key)
        if v is not None and v not in options:
            _fail(f"field {key!r} must be one of {options}, got {v!r}")
    for key in ("true_sigma", "eig_low", "eig_high", "alpha_scale", "rho"):
        v = getattr(cfg, key)
        if v is not None and v < 0:
            _fail(f"field {key!r} must be non-negative")
    if cfg.eig_low is not None and not 0 < cfg.eig_low <= cfg.eig_high:
        _fail("need 0 < eig_low <= eig_high")
    if cfg.block_size is not None and cfg.block_size < 1:
        _fail("block_size must be positive")
    if cfg.kurtosis is not None and cfg.kurtosis <= 3 and cfg.experiment == "asset_bias_grid":
        _fail("synthetic fat tails need kurtosis > 3 (Gaussian is 3)")
    if cfg.kurtosis is not None and cfg.kurtosis <= 1:
        _fail("kurtosis must exceed 1")
    n, t, k = cfg.n_assets, cfg.t_obs, cfg.k_factors
    e = cfg.experiment
    if e == "toy_model":
        if n != 2:
            _fail("the toy model has exactly 2 assets")
        if t < 2:
            _fail("t_obs must be at least 2")
    elif e in ("frontier", "asset_correction"):
        if n < 3 and e == "frontier":
            _fail("frontier needs at least 3 assets for two constraints")
        if n >= t:
            _fail(f"n_assets={n} >= t_obs={t}: the estimation-error correction diverges "
                  "as the number of assets approaches the number of observations")
        if e == "frontier" and not cfg.r_grid:
            _fail("r_grid must list at least one target return")
        if e == "asset_correction" and t <= n + 3:
            _fail(f"t_obs={t} <= n_assets+3={n + 3}: the true-risk moment diverges")
    elif e == "wishart_oracle":
        if n < 1:
            _fail("n_assets must be positive")
        if t <= n + 3:
            _fail(f"t_obs={t} <= n_assets+3={n + 3}: the second inverse Wishart moment "
                  "diverges (requires T - N - 3 > 0)")
    elif e == "asset_bias_grid":
        if not cfg.n_grid or not cfg.t_over_n_grid:
            _fail("n_grid and t_over_n_grid must be non-empty")
        if min(cfg.t_over_n_grid) <= 1:
            _fail("every T/N ratio must exceed 1: the correction diverges at N >= T")
        if max(cfg.n_grid) > cfg.n_universe:
            _fail("n_universe is smaller than the largest N in n_grid")
        t_max = max(grid_window(nn, r) for nn in cfg.n_grid for r in cfg.t_over_n_grid)
        if cfg.panel_length <= t_max + 1:
            _fail(f"panel_length={cfg.panel_length} must exceed the longest window + 1 "
                  f"({t_max + 1})")
    elif e == "factor_bias":
        if k >= t:
            _fail(f"k_factors={k} >= t_obs={t}: the factor correction diverges")
        if n <= k:
            _fail("n_assets must exceed k_factors")
        if cfg.panel_length <= t + cfg.trailing_window:
            _fail("panel_length too short for one full trailing window")
    elif e == "factor_correction":
        if k >= t:
            _fail(f"k_factors={k} >= t_obs={t}: the factor correction diverges")
        if n <= k:
            _fail("n_assets must exceed k_factors")
    elif e == "coherent_exposure":
        if n <= k:
            _fail("n_assets must exceed k_factors")
    elif e == "backtest":
        if t < 2:
            _fail("t_obs must be at least 2")
        if n is not None and n >= t:
            _fail(f"n_assets={n} >= t_obs={t}: the correction diverges")
        if cfg.trim_mode != "none" and (cfg.trim_lower is None or cfg.trim_upper is None
                                        or cfg.trim_lower >= cfg.trim_upper):
            _fail("trim bounds must satisfy trim_lower < trim_upper")
    return cfg


def grid_window(n, t_over_n):
    """Estimation window for a grid cell: ``round(N * T/N)``."""
    return int(round(n * t_over_n))


def default_config(experiment, master_seed=0, **overrides) -> ExperimentConfig:
    values = dict(overrides, master_seed=master_seed)
    return config_from_mapping(values, experiment)


def config_fields():
    return [f.name for f in fields(ExperimentConfig)]

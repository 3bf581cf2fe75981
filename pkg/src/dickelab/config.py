"""Run configuration: strict TOML schema shared by every CLI command.

Grammar (TOML; only the [model] table is mandatory):

    [model]                 # physical constants
    n = 1                   # mode count
    epsilon = 1.0           # atomic level splitting
    gamma1 = 0.5            # transverse damping
    gamma2 = 0.8            # longitudinal damping (0 < gamma2 <= 2 gamma1)
    eta = 0.3               # pump, in [-1, 1]
    omega = [1.0]           # per-mode frequencies (> 0, length n)
    kappa = [0.5]           # per-mode dampings (> 0, length n)
    lambda = [1.0]          # per-mode couplings (real, length n)

    [macro]                 # trajectory runs (also feeds `micro`)
    x0 = "normal"           # "normal" or a packed 5n-vector of reals
    perturb = 0.0           # kick added to Re alpha_0 when x0 = "normal"
    t_end = 100.0
    tol = 1e-8              # in (0, 1e-3]
    sample_dt = 0.01

    [scan]                  # pump scan
    eta_min = 0.0
    eta_max = 1.0
    points = 51
    perturb = 0.1
    tol = 1e-8
    sample_dt = 0.05
    lyap_sample = 200.0

    [micro]                 # per-site Bloch reconstruction
    sites = [0]
    t_window = [39.0, 50.0] # omit for automatic post-transient window
    samples = 20

    [entropy]               # maximum-entropy audit
    target = "normal"       # or "coherent" (runs the macro flow first)
    trials = 1000
    block_size = 2          # periods per block, <= 3
    seed = 12345
    time = 0.0              # evaluation time of the coherent family

    [oracle]                # finite-size validation
    N_list = [0, 1, 2]
    cutoffs = 0             # 0 -> automatic coherent-tail-safe cutoff
    t_grid = [0.0, 0.5, 1.0, 1.5, 2.0]
    theta0 = [0.6, 0.0, 0.2]
    alpha_re = [0.3]
    alpha_im = [0.0]
    tol = 1e-8
    cap = 4096

    [output]
    directory = "out"
    format = "csv"          # or "json"

Unknown tables or keys are rejected by name.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import ModelParams, validate_params
from .errors import ConfigError, ParameterError


def _as_float(x, path):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {x!r}")
    return float(x)


def _as_int(x, path):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{path}: expected an integer, got {x!r}")
    return int(x)


def _as_str(x, path):
    if not isinstance(x, str):
        raise ConfigError(f"{path}: expected a string, got {x!r}")
    return x


def _as_float_list(x, path):
    if not isinstance(x, list):
        raise ConfigError(f"{path}: expected an array, got {x!r}")
    return [_as_float(v, f"{path}[{i}]") for i, v in enumerate(x)]


def _as_int_list(x, path):
    if not isinstance(x, list):
        raise ConfigError(f"{path}: expected an array, got {x!r}")
    return [_as_int(v, f"{path}[{i}]") for i, v in enumerate(x)]


@dataclass(frozen=True)
class MacroSection:
    x0: object = "normal"  # "normal" or list of packed reals
    perturb: float = 0.0
    t_end: float = 100.0
    tol: float = 1e-8
    sample_dt: float = 0.01


@dataclass(frozen=True)
class ScanSection:
    eta_min: float = 0.0
    eta_max: float = 1.0
    points: int = 51
    perturb: float = 0.1
    tol: float = 1e-8
    sample_dt: float = 0.05
    lyap_sample: float = 200.0


@dataclass(frozen=True)
class MicroSection:
    sites: tuple = (0,)
    t_window: Optional[tuple] = None
    samples: int = 20


@dataclass(frozen=True)
class EntropySection:
    target: str = "normal"
    trials: int = 1000
    block_size: int = 2
    seed: int = 12345
    time: float = 0.0


@dataclass(frozen=True)
class OracleSection:
    N_list: tuple = (0, 1, 2)
    cutoffs: int = 0  # 0 -> automatic
    t_grid: tuple = (0.0, 0.5, 1.0, 1.5, 2.0)
    theta0: tuple = (0.6, 0.0, 0.2)
    alpha_re: tuple = (0.3,)
    alpha_im: tuple = (0.0,)
    tol: float = 1e-8
    cap: int = 4096


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    macro: MacroSection
    scan: ScanSection
    micro: MicroSection
    entropy: EntropySection
    oracle: OracleSection
    output: OutputSection
    config_hash: str


_MODEL_KEYS = {"n", "epsilon", "gamma1", "gamma2", "eta", "omega", "kappa", "lambda"}


def _parse_model(table) -> ModelParams:
    unknown = set(table) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"model.{sorted(unknown)[0]}: unknown key")
    missing = _MODEL_KEYS - set(table)
    if missing:
        raise ConfigError(f"model.{sorted(missing)[0]}: required key missing")
    params = ModelParams(
        n=_as_int(table["n"], "model.n"),
        epsilon=_as_float(table["epsilon"], "model.epsilon"),
        gamma1=_as_float(table["gamma1"], "model.gamma1"),
        gamma2=_as_float(table["gamma2"], "model.gamma2"),
        eta=_as_float(table["eta"], "model.eta"),
        omega=_as_float_list(table["omega"], "model.omega"),
        kappa=_as_float_list(table["kappa"], "model.kappa"),
        lam=_as_float_list(table["lambda"], "model.lambda"),
    )
    try:
        return validate_params(params)
    except ParameterError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_section(table, cls, name, converters):
    unknown = set(table) - set(converters)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for key, conv in converters.items():
        if key in table:
            kwargs[key] = conv(table[key], f"{name}.{key}")
    return cls(**kwargs)


def _conv_x0(x, path):
    if isinstance(x, str):
        if x != "normal":
            raise ConfigError(f"{path}: must be \"normal\" or an array of reals")
        return x
    return _as_float_list(x, path)


def _conv_window(x, path):
    vals = _as_float_list(x, path)
    if len(vals) != 2 or vals[1] <= vals[0]:
        raise ConfigError(f"{path}: expected [t_lo, t_hi] with t_hi > t_lo")
    return tuple(vals)


def _conv_format(x, path):
    s = _as_str(x, path)
    if s not in ("csv", "json"):
        raise ConfigError(f"{path}: format must be \"csv\" or \"json\"")
    return s


def _conv_target(x, path):
    s = _as_str(x, path)
    if s not in ("normal", "coherent"):
        raise ConfigError(f"{path}: target must be \"normal\" or \"coherent\"")
    return s


_SECTIONS = {
    "macro": (MacroSection, {
        "x0": _conv_x0,
        "perturb": _as_float,
        "t_end": _as_float,
        "tol": _as_float,
        "sample_dt": _as_float,
    }),
    "scan": (ScanSection, {
        "eta_min": _as_float,
        "eta_max": _as_float,
        "points": _as_int,
        "perturb": _as_float,
        "tol": _as_float,
        "sample_dt": _as_float,
        "lyap_sample": _as_float,
    }),
    "micro": (MicroSection, {
        "sites": lambda x, p: tuple(_as_int_list(x, p)),
        "t_window": _conv_window,
        "samples": _as_int,
    }),
    "entropy": (EntropySection, {
        "target": _conv_target,
        "trials": _as_int,
        "block_size": _as_int,
        "seed": _as_int,
        "time": _as_float,
    }),
    "oracle": (OracleSection, {
        "N_list": lambda x, p: tuple(_as_int_list(x, p)),
        "cutoffs": _as_int,
        "t_grid": lambda x, p: tuple(_as_float_list(x, p)),
        "theta0": lambda x, p: tuple(_as_float_list(x, p)),
        "alpha_re": lambda x, p: tuple(_as_float_list(x, p)),
        "alpha_im": lambda x, p: tuple(_as_float_list(x, p)),
        "tol": _as_float,
        "cap": _as_int,
    }),
    "output": (OutputSection, {
        "directory": _as_str,
        "format": _conv_format,
    }),
}


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration document.

    Missing optional keys take their documented defaults; unknown tables
    or keys raise ConfigError naming the offender.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    if "model" not in doc:
        raise ConfigError("model: required table missing")
    known = {"model", *(_SECTIONS)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown table")
    params = _parse_model(doc["model"])
    sections = {}
    for name, (cls, conv) in _SECTIONS.items():
        sections[name] = _parse_section(doc.get(name, {}), cls, name, conv)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    cfg = RunConfig(params=params, config_hash=digest, **sections)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: RunConfig) -> None:
    n = cfg.params.n
    if isinstance(cfg.macro.x0, list) and len(cfg.macro.x0) != 5 * n:
        raise ConfigError(f"macro.x0: packed vector needs 5n = {5 * n} entries, "
                          f"got {len(cfg.macro.x0)}")
    if not 0 < cfg.macro.tol <= 1e-3:
        raise ConfigError("macro.tol: must lie in (0, 1e-3]")
    if cfg.scan.points < 2:
        raise ConfigError("scan.points: need at least 2 grid points")
    if len(cfg.oracle.theta0) != 3:
        raise ConfigError("oracle.theta0: expected 3 components")
    if len(cfg.oracle.alpha_re) != n or len(cfg.oracle.alpha_im) != n:
        raise ConfigError(f"oracle.alpha_re/alpha_im: expected length n = {n}")
    if not 1 <= cfg.entropy.block_size <= 3:
        raise ConfigError("entropy.block_size: must be in [1, 3]")
    if cfg.entropy.trials < 1:
        raise ConfigError("entropy.trials: must be >= 1")

"""Run configuration: strict JSON schema with precise error paths.

A run config is one JSON object with only the known sections below;
unknown keys anywhere raise ConfigValidationError naming the offending
path, so typos fail loudly instead of silently using defaults.

    estimator      "prom" | "prom+" | "sdv" | "odv" | "nco" | "mle"
    covariance     {"mode": "data"|"model", "snr": [...], "coils": int,
                    "noise_sigma": number}
    offset         number or null (left edge of the output window)
    top_m          integer >= 1 (candidates kept per voxel)
    mask_threshold number in [0, 1]
    truth          path to a PROMVMAP with ground truth (optional)
    design         {"p_max", "q_max", "snr", "coils", "eps": [e1, e2],
                    "omega_eps", "gamma_m_tau", "trials_override"}
    simulation     {"recipe", "trials", "seed", "s21", "venc",
                    "snr", "v", "grid": [lo, hi, step]}
    postprocess    {"span", "lam"}
    seed           integer
    output_dir     string
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .covariance import SnrMatrix
from .design import DesignSpec
from .errors import ConfigValidationError, ValidationError

ESTIMATORS = ("prom", "prom+", "sdv", "odv", "nco", "mle")


def _fail(path: str, message: str):
    raise ConfigValidationError(f"{path}: {message}", path=path)


def _want(value, kinds, path, what):
    if not isinstance(value, kinds) or isinstance(value, bool):
        _fail(path, f"expected {what}")
    return value


def _number(value, path, positive=False):
    _want(value, (int, float), path, "a number")
    if positive and not value > 0:
        _fail(path, "must be positive")
    return float(value)


def _integer(value, path, minimum=None):
    _want(value, int, path, "an integer")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}")
    return int(value)


def _known_keys(section: dict, allowed, path):
    for key in section:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _snr_matrix(section: dict, path: str) -> SnrMatrix | None:
    if "snr" not in section:
        return None
    rows = section["snr"]
    _want(rows, list, f"{path}.snr", "a list of per-encoding values")
    coils = section.get("coils", 1)
    _integer(coils, f"{path}.coils", minimum=1)
    try:
        per = np.asarray(rows, dtype=np.float64)
        return SnrMatrix.from_per_encoding(per, int(coils))
    except (TypeError, ValueError, ValidationError) as exc:
        _fail(f"{path}.snr", str(exc))


@dataclasses.dataclass(frozen=True)
class CovarianceConfig:
    mode: str = "data"
    snr: SnrMatrix | None = None
    noise_sigma: float | None = None


@dataclasses.dataclass(frozen=True)
class SimulationConfig:
    recipe: str | None = None
    trials: int | None = None
    seed: int | None = None
    s21: float | None = None
    venc: tuple | None = None
    snr: SnrMatrix | None = None
    v: float | None = None
    grid: tuple | None = None


@dataclasses.dataclass(frozen=True)
class PostprocessConfig:
    span: float = 0.25
    lam: float = 1.0


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Parsed, validated run configuration plus its canonical hash."""

    estimator: str | None
    covariance: CovarianceConfig
    offset: float | None
    top_m: int
    mask_threshold: float | None
    truth: str | None
    design: DesignSpec | None
    simulation: SimulationConfig
    postprocess: PostprocessConfig
    seed: int
    output_dir: str | None
    raw: dict
    sha256: str


def _parse_covariance(section, path) -> CovarianceConfig:
    _want(section, dict, path, "an object")
    _known_keys(section, {"mode", "snr", "coils", "noise_sigma"}, path)
    mode = section.get("mode", "data")
    if mode not in ("data", "model"):
        _fail(f"{path}.mode", "must be 'data' or 'model'")
    snr = _snr_matrix(section, path)
    if mode == "model" and snr is None:
        _fail(f"{path}.snr", "model covariance needs per-encoding snr values")
    noise_sigma = section.get("noise_sigma")
    if noise_sigma is not None:
        noise_sigma = _number(noise_sigma, f"{path}.noise_sigma", positive=True)
    return CovarianceConfig(mode=mode, snr=snr, noise_sigma=noise_sigma)


def _parse_design(section, path) -> DesignSpec:
    _want(section, dict, path, "an object")
    _known_keys(section, {"p_max", "q_max", "snr", "coils", "eps",
                          "omega_eps", "gamma_m_tau", "trials_override"}, path)
    for key in ("p_max", "q_max", "snr", "eps", "omega_eps", "gamma_m_tau"):
        if key not in section:
            _fail(f"{path}.{key}", "required for design runs")
    eps = section["eps"]
    _want(eps, list, f"{path}.eps", "a two-element list")
    if len(eps) != 2:
        _fail(f"{path}.eps", "needs exactly [eps1, eps2]")
    override = section.get("trials_override")
    if override is not None:
        override = _integer(override, f"{path}.trials_override", minimum=1)
    snr = _snr_matrix(section, path)
    try:
        return DesignSpec(
            p_max=_integer(section["p_max"], f"{path}.p_max"),
            q_max=_integer(section["q_max"], f"{path}.q_max"),
            snr=snr,
            eps=(_number(eps[0], f"{path}.eps[0]"),
                 _number(eps[1], f"{path}.eps[1]")),
            omega_eps=_number(section["omega_eps"], f"{path}.omega_eps"),
            gamma_m_tau=_number(section["gamma_m_tau"], f"{path}.gamma_m_tau"),
            trials_override=override)
    except ValidationError as exc:
        _fail(path, str(exc))


def _parse_simulation(section, path) -> SimulationConfig:
    _want(section, dict, path, "an object")
    _known_keys(section, {"recipe", "trials", "seed", "s21", "venc", "snr",
                          "coils", "v", "grid"}, path)
    recipe = section.get("recipe")
    if recipe is not None:
        _want(recipe, str, f"{path}.recipe", "a string")
    trials = section.get("trials")
    if trials is not None:
        trials = _integer(trials, f"{path}.trials", minimum=1)
    seed = section.get("seed")
    if seed is not None:
        seed = _integer(seed, f"{path}.seed")
    s21 = section.get("s21")
    if s21 is not None:
        s21 = _number(s21, f"{path}.s21", positive=True)
    venc = section.get("venc")
    if venc is not None:
        _want(venc, list, f"{path}.venc", "a list of pair vencs")
        venc = tuple(_number(x, f"{path}.venc[{i}]", positive=True)
                     for i, x in enumerate(venc))
    v = section.get("v")
    if v is not None:
        v = _number(v, f"{path}.v")
    grid = section.get("grid")
    if grid is not None:
        _want(grid, list, f"{path}.grid", "[lo, hi, step]")
        if len(grid) != 3:
            _fail(f"{path}.grid", "needs exactly [lo, hi, step]")
        grid = tuple(_number(x, f"{path}.grid[{i}]")
                     for i, x in enumerate(grid))
    return SimulationConfig(recipe=recipe, trials=trials, seed=seed, s21=s21,
                            venc=venc, snr=_snr_matrix(section, path), v=v,
                            grid=grid)


def _parse_postprocess(section, path) -> PostprocessConfig:
    _want(section, dict, path, "an object")
    _known_keys(section, {"span", "lam"}, path)
    span = section.get("span", 0.25)
    lam = section.get("lam", 1.0)
    return PostprocessConfig(span=_number(span, f"{path}.span", positive=True),
                             lam=_number(lam, f"{path}.lam", positive=True))


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded JSON object into a RunConfig."""
    _want(raw, dict, "config", "a JSON object")
    _known_keys(raw, {"estimator", "covariance", "offset", "top_m",
                      "mask_threshold", "truth", "design", "simulation",
                      "postprocess", "seed", "output_dir"}, "")
    estimator = raw.get("estimator")
    if estimator is not None and estimator not in ESTIMATORS:
        _fail("estimator", f"must be one of {', '.join(ESTIMATORS)}")
    offset = raw.get("offset")
    if offset is not None:
        offset = _number(offset, "offset")
    top_m = _integer(raw.get("top_m", 2), "top_m", minimum=1)
    mask_threshold = raw.get("mask_threshold")
    if mask_threshold is not None:
        mask_threshold = _number(mask_threshold, "mask_threshold")
        if not 0.0 <= mask_threshold <= 1.0:
            _fail("mask_threshold", "must lie in [0, 1]")
    truth = raw.get("truth")
    if truth is not None:
        _want(truth, str, "truth", "a path string")
    output_dir = raw.get("output_dir")
    if output_dir is not None:
        _want(output_dir, str, "output_dir", "a path string")
    digest = hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    return RunConfig(
        estimator=estimator,
        covariance=_parse_covariance(raw.get("covariance", {}), "covariance"),
        offset=offset,
        top_m=top_m,
        mask_threshold=mask_threshold,
        truth=truth,
        design=(_parse_design(raw["design"], "design")
                if "design" in raw else None),
        simulation=_parse_simulation(raw.get("simulation", {}), "simulation"),
        postprocess=_parse_postprocess(raw.get("postprocess", {}),
                                       "postprocess"),
        seed=_integer(raw.get("seed", 0), "seed"),
        output_dir=output_dir,
        raw=raw,
        sha256=digest)


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigValidationError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)

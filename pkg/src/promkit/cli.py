"""Batch command-line front end.

Subcommands wire the library into reproducible runs:

    estimate   container -> velocity map, candidate file, summary JSON
    design     config -> venc design result JSON
    simulate   named recipe -> containers / CSV curves (fig5..fig9)
    analyze    named recipe -> CSV curves (fig1, fig2)

Every run writes a manifest (config hash, seed, package versions)
sufficient to re-run bit-identically.  Exit codes: 0 success,
2 validation problem, 3 I/O or container problem, 4 infeasible design.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import kernels
from ._rng import derive_seed
from .analysis import crlb_velocity, estimate_distribution
from .baselines import GridSpec, complex_mle_grid
from .config import RunConfig, load_config, parse_config
from .congruence import (EncodingScheme, VencSet, pair_products,
                         symmetric_moments_from_vencs, vencs_from_moments,
                         wrap_to_range, wrapped_from_products)
from .containers import (ComplexImage, read_complex_image, read_velocity_map,
                         write_candidates, write_complex_image, write_json,
                         write_velocity_map)
from .covariance import SnrMatrix, cosine_similarity, model_phase_cov
from .design import design_three_point
from .errors import (ConfigValidationError, ContainerFormatError,
                     InfeasibleDesignError, PromkitError, ValidationError)
from .estimator import PromModel, neg_log_likelihood
from .postprocess import estimate_velocity_field, prom_plus
from .simulate import monte_carlo_rmse, score_phantom_map, vessel_phantom

SIMULATE_RECIPES = ("fig5", "fig6", "fig7", "fig8", "fig9")
ANALYZE_RECIPES = ("fig1", "fig2")

FIG7_S21 = (2.0, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0)


def _versions() -> dict:
    import scipy
    out = {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "promkit": __import__("promkit").__version__,
    }
    if kernels.BACKEND == "numba":
        import numba
        out["numba"] = numba.__version__
    return out


def _write_manifest(outdir: str, label: str, command: str, cfg: RunConfig,
                    seed: int, outputs: list) -> str:
    path = os.path.join(outdir, f"{label}_manifest.json")
    write_json(path, {
        "command": command,
        "label": label,
        "config_sha256": cfg.sha256,
        "seed": seed,
        "backend": kernels.BACKEND,
        "versions": _versions(),
        "outputs": sorted(os.path.basename(p) for p in outputs),
    })
    return path


def _resolve_threads(value: str | None) -> None:
    if value is None:
        value = os.environ.get("PROMKIT_THREADS")
    if value is None:
        return
    try:
        n = int(value)
    except ValueError:
        raise ValidationError(f"thread count must be an integer, got {value!r}")
    if n < 1:
        raise ValidationError("thread count must be positive")
    if kernels.BACKEND == "numba":
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_DEFAULT_NUM_THREADS))


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(args.seed))
    if args.output is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    return cfg


def _outdir(cfg: RunConfig) -> str:
    out = cfg.output_dir or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path: str, header: list, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(f"{x:.10g}" for x in row) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def _scheme_from_venc(venc) -> EncodingScheme:
    venc = np.asarray(venc, dtype=np.float64)
    if venc.size != 3:
        raise ValidationError("recipes need a three-point venc triple")
    return symmetric_moments_from_vencs(float(venc[1]), float(venc[2]))


def _snr_pattern(s21: float, coils: int = 1) -> SnrMatrix:
    # the sweep convention throughout: middle encoding at s21, outer at half
    return SnrMatrix.from_per_encoding(
        np.array([0.5 * s21, s21, 0.5 * s21]), coils)


# ------------------------------------------------------------------ estimate

def _mask_from_magnitude(y: np.ndarray, threshold: float) -> np.ndarray:
    mag = np.sqrt(np.sum(np.abs(y) ** 2, axis=1)).mean(axis=0)
    return mag < threshold * float(mag.max())


def _estimate_field(image: ComplexImage, cfg: RunConfig, estimator: str,
                    offset: float | None):
    scheme = image.scheme()
    snr = cfg.covariance.snr if cfg.covariance.mode == "model" else None
    kwargs = {}
    if cfg.mask_threshold is not None:
        kwargs["mask_threshold"] = cfg.mask_threshold
    field = estimate_velocity_field(
        image.y, scheme, snr=snr, offset=offset, top_m=cfg.top_m,
        noise_sigma=cfg.covariance.noise_sigma, **kwargs)
    extra = {}
    if estimator == "prom+":
        result = prom_plus(field, span=cfg.postprocess.span,
                           lam=cfg.postprocess.lam)
        field = result.field
        extra = {"iterations": result.iterations,
                 "selection_changes": [int(c)
                                       for c in result.selection_changes]}
    return field.velocity_map(), field, extra


def _estimate_baseline(image: ComplexImage, cfg: RunConfig, estimator: str,
                       offset: float | None) -> np.ndarray:
    scheme = image.scheme()
    vencs = vencs_from_moments(scheme)
    omega = vencs.range()
    ne, nc, ny, nx = image.y.shape
    threshold = cfg.mask_threshold if cfg.mask_threshold is not None else 0.3
    mask = _mask_from_magnitude(image.y, threshold)
    flat = np.ascontiguousarray(
        np.moveaxis(image.y.reshape(ne, nc, ny * nx), 2, 0))
    args = kernels.scheme_args(scheme, vencs)
    if estimator == "sdv":
        width = 2.0 * float(vencs.venc[0])
        est = kernels.field_sdv(flat, args["pa"], args["pb"], args["venc"])
        lo = -0.5 * width if offset is None else offset
    elif estimator in ("odv", "nco"):
        width = omega
        grid = GridSpec.default_for(vencs)
        gvals = grid.values()
        est = kernels.field_grid2(flat, args["pa"], args["pb"], args["venc"],
                                  float(gvals[0]), grid.step, int(gvals.size),
                                  weighted=(estimator == "nco"))
        lo = -0.5 * omega if offset is None else offset
    else:  # mle
        if nc != 1:
            raise ValidationError("mle estimation handles a single coil only")
        width = omega
        lo = -0.5 * omega if offset is None else offset
        grid = GridSpec(lo, lo + omega, float(vencs.venc[1]) / 1000.0)
        est = np.empty(ny * nx)
        voxels = flat.reshape(ny * nx, ne, nc)
        for i in range(ny * nx):
            if mask.ravel()[i]:
                est[i] = np.nan
                continue
            est[i] = complex_mle_grid(voxels[i], scheme, grid)[0]
    est = wrap_to_range(est, width, lo)
    est[mask.ravel()] = np.nan
    return est.reshape(ny, nx)


def run_estimate(args) -> int:
    cfg = _load_run_config(args)
    estimator = args.estimator or cfg.estimator
    if estimator is None:
        raise ValidationError("pick an estimator via --estimator or config")
    if estimator not in ("prom", "prom+", "sdv", "odv", "nco", "mle"):
        raise ValidationError(f"unknown estimator {estimator!r}")
    outdir = _outdir(cfg)
    image = read_complex_image(args.input)
    offset = cfg.offset if cfg.offset is not None else image.offset

    label = estimator.replace("+", "_plus")
    t0 = time.perf_counter()
    extra: dict = {}
    candfile = None
    if estimator in ("prom", "prom+"):
        vmap, field, extra = _estimate_field(image, cfg, estimator, offset)
        width = field.omega
        lo = field.offset
        ny, nx = vmap.shape
        candfile = os.path.join(outdir, f"{label}_candidates.cand")
        write_candidates(candfile,
                         field.cand_v.reshape(ny, nx, -1),
                         field.cand_nll.reshape(ny, nx, -1),
                         {"top_m": cfg.top_m, "omega": width, "offset": lo,
                          "units": {"velocity": "cm/s"}})
    else:
        vmap = _estimate_baseline(image, cfg, estimator, offset)
        vencs = vencs_from_moments(image.scheme())
        width = 2.0 * float(vencs.venc[0]) if estimator == "sdv" \
            else vencs.range()
        lo = (-0.5 * width) if offset is None else offset
    wall = time.perf_counter() - t0

    vmapfile = os.path.join(outdir, f"{label}_velocity.vmap")
    write_velocity_map(vmapfile, vmap, {
        "estimator": estimator, "window_width": width, "offset": lo,
        "units": {"velocity": "cm/s"}, "seed": image.seed,
    })

    voxels = int(vmap.size)
    masked = int(np.count_nonzero(~np.isfinite(vmap)))
    summary = {
        "estimator": estimator,
        "voxels": voxels,
        "masked_voxels": masked,
        "wall_s": wall,
        "voxels_per_s": (voxels - masked) / wall if wall > 0 else None,
        "backend": kernels.BACKEND,
        "status": "empty-output" if masked == voxels else "ok",
        **extra,
    }
    if masked == voxels:
        print("warning: every voxel fell below the magnitude mask; "
              "velocity map is empty", file=sys.stderr)
    if cfg.truth is not None:
        truth, _ = read_velocity_map(cfg.truth)
        if truth.shape != vmap.shape:
            raise ValidationError("truth map shape does not match the image")
        live = np.isfinite(vmap) & np.isfinite(truth)
        err = vmap[live] - truth[live]
        aliased = np.abs(err) > 0.5 * width
        summary["aliased_voxels"] = int(np.count_nonzero(aliased))
        keep = err[~aliased]
        summary["rmse_vs_truth"] = (
            float(np.sqrt(np.mean(keep ** 2))) if keep.size else None)
    sumfile = os.path.join(outdir, f"{label}_summary.json")
    write_json(sumfile, summary)
    outputs = [vmapfile, vmapfile + ".json", sumfile]
    if candfile:
        outputs += [candfile, candfile + ".json"]
    _write_manifest(outdir, label, "estimate", cfg, cfg.seed, outputs)
    print(f"{estimator}: {voxels - masked}/{voxels} voxels in {wall:.3f}s")
    return 0


# -------------------------------------------------------------------- design

def run_design(args) -> int:
    cfg = _load_run_config(args)
    if cfg.design is None:
        raise ConfigValidationError("design: section required for design runs",
                                    path="design")
    outdir = _outdir(cfg)
    result = design_three_point(cfg.design, seed=cfg.seed)
    payload = {
        "p": result.p, "q": result.q, "c": result.c,
        "venc": [float(v) for v in result.venc.venc],
        "gamma_m1": [float(g) for g in result.moments.gamma_m1],
        "predicted_rmse": result.predicted_rmse,
        "unwrap_error_prob": result.unwrap_error_prob,
        "trials": result.trials,
        "seed": result.seed,
        "candidates": [
            {"p": c.p, "q": c.q, "status": c.status,
             "trials_run": c.trials_run, "error_count": c.error_count,
             "objective": c.objective, "note": c.note}
            for c in result.candidates],
    }
    path = os.path.join(outdir, "design_result.json")
    write_json(path, payload)
    _write_manifest(outdir, "design", "design", cfg, cfg.seed, [path])
    print(f"(p,q)=({result.p},{result.q}) c={result.c:.6g} "
          f"venc={[round(float(v), 4) for v in result.venc.venc]}")
    return 0


# ---------------------------------------------------------------- recipes

def _recipe_fig1(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    venc = sim.venc or (15.0, 6.0, 10.0)
    scheme = _scheme_from_venc(venc)
    snr = sim.snr or _snr_pattern(sim.s21 or 5.0)
    v_true = sim.v if sim.v is not None else 0.0
    seed = sim.seed if sim.seed is not None else cfg.seed
    model = PromModel(scheme, snr)
    y = kernels.simulate_batch(seed, 0, 1, float(v_true),
                               scheme.gamma_m1, snr.s)[0]
    wrapped = wrapped_from_products(pair_products(y), model.vencs)
    omega = model.omega
    grid = np.arange(-0.5 * omega, 0.5 * omega, omega / 2000.0)
    cost = np.array([neg_log_likelihood(wrapped, float(g), model.sigma_pinv)
                     for g in grid])
    path = os.path.join(outdir, "fig1_cost.csv")
    _write_csv(path, ["v", "cost"], zip(grid, cost))
    write_json(os.path.join(outdir, "fig1_summary.json"), {
        "v_true": v_true, "seed": seed,
        "global_min_v": float(grid[int(np.argmin(cost))]),
    })
    return [path]


def _recipe_fig2(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    venc = sim.venc or (15.0, 6.0, 10.0)
    scheme = _scheme_from_venc(venc)
    trials = sim.trials or 100_000
    seed = sim.seed if sim.seed is not None else cfg.seed
    rows = []
    for i, s21 in enumerate(np.arange(0.5, 20.5, 0.5)):
        snr = _snr_pattern(float(s21))
        model_cov = model_phase_cov(snr).matrix
        y = kernels.simulate_batch(derive_seed(seed, i), 0, trials, 0.0,
                                   scheme.gamma_m1, snr.s)
        r = np.einsum("tac,tbc->tab", y, np.conj(y))
        pairs = scheme.pairs
        theta = np.stack([np.angle(r[:, a - 1, b - 1]) for a, b in pairs],
                         axis=1)
        sample = np.cov(theta.T)
        rows.append((float(s21), cosine_similarity(model_cov, sample)))
    path = os.path.join(outdir, "fig2_similarity.csv")
    _write_csv(path, ["s21", "cosine_similarity"], rows)
    return [path]


def _recipe_fig5(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    venc = sim.venc or (99.0, 18.0, 22.0)
    scheme = _scheme_from_venc(venc)
    s21 = sim.s21 or 5.0
    trials = sim.trials or 100_000
    seed = sim.seed if sim.seed is not None else cfg.seed
    v_true = sim.v if sim.v is not None else 0.0
    comps = estimate_distribution(float(v_true), _snr_pattern(s21), scheme,
                                  trials, top_m=5, seed=seed)
    path = os.path.join(outdir, "fig5_histogram.csv")
    _write_csv(path, ["center", "weight"],
               ((c.center, c.weight) for c in comps))
    return [path]


def _rmse_sweep(cfg: RunConfig, outdir: str, name: str, arms: list,
                v_grid: np.ndarray, trials: int, seed: int) -> list:
    curves = {}
    for i, (arm, estimator, scheme, snr, exclude) in enumerate(arms):
        curves[arm] = monte_carlo_rmse(estimator, scheme, snr, v_grid,
                                       trials, seed=derive_seed(seed, i),
                                       exclude_above=exclude)
    path = os.path.join(outdir, f"{name}_rmse.csv")
    names = [arm for arm, _, _, _, _ in arms]
    _write_csv(path, ["v"] + [f"rmse_{n}" for n in names],
               zip(v_grid, *(curves[n].rmse for n in names)))
    means = {n: float(np.mean(curves[n].rmse)) for n in names}
    write_json(os.path.join(outdir, f"{name}_summary.json"), {
        "trials": trials, "seed": seed, "mean_rmse": means,
        "reduction_vs": {n: 1.0 - means[names[0]] / means[n]
                         for n in names[1:]},
    })
    return [path]


def _recipe_fig6(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    venc = sim.venc or (15.0, 6.0, 10.0)
    scheme = _scheme_from_venc(venc)
    snr = sim.snr or SnrMatrix.from_per_encoding(np.array([10.0, 20.0, 10.0]), 1)
    trials = sim.trials or 10_000
    seed = sim.seed if sim.seed is not None else cfg.seed
    if sim.grid is not None:
        lo, hi, step = sim.grid
    else:
        lo, hi, step = -30.0, 30.0, 0.5
    v_grid = np.arange(lo, hi + 0.5 * step, step)
    arms = [("prom", "prom", scheme, snr, None),
            ("odv", "odv", scheme, snr, None),
            ("sdv", "sdv", scheme, snr, None)]
    return _rmse_sweep(cfg, outdir, "fig6", arms, v_grid, trials, seed)


def _design_venc_iiia() -> EncodingScheme:
    """The venc triple the III-A design arithmetic yields at (p, q) = (6, 5)."""
    from scipy.special import ndtri
    base = symmetric_moments_from_vencs(5.0, 6.0)
    snr = SnrMatrix.from_per_encoding(np.array([10.0, 20.0, 10.0]), 1)
    model = PromModel(base, snr)
    sigma = math.sqrt(model.predicted_variance)
    c = 300.0 / (model.omega - 2.0 * float(ndtri(1.0 - 1e-7)) * sigma)
    return symmetric_moments_from_vencs(c * 5.0, c * 6.0)


def _recipe_fig8(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    trials = sim.trials or 10_000
    seed = sim.seed if sim.seed is not None else cfg.seed
    if sim.grid is not None:
        lo, hi, step = sim.grid
    else:
        lo, hi, step = -150.0, 150.0, 2.5
    v_grid = np.arange(lo, hi + 0.5 * step, step)
    snr_prom = sim.snr or SnrMatrix.from_per_encoding(
        np.array([10.0, 20.0, 10.0]), 1)
    snr_base = SnrMatrix.from_per_encoding(np.array([20.0, 20.0, 20.0]), 1)
    scheme_prom = _scheme_from_venc(sim.venc) if sim.venc else \
        _design_venc_iiia()
    # the dual-venc arm reports residual accuracy with lobe failures
    # dropped (half the fine venc separates them from noise), matching
    # the aliased-voxel exclusion used for phantom maps
    arms = [("prom", "prom", scheme_prom, snr_prom, None),
            ("odv", "odv", _scheme_from_venc((150.0, 50.0, 75.0)), snr_base,
             None),
            ("sdv", "sdv", _scheme_from_venc((150.0, 60.0, 100.0)), snr_base,
             30.0)]
    return _rmse_sweep(cfg, outdir, "fig8", arms, v_grid, trials, seed)


def _recipe_fig7(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    venc = sim.venc or (15.0, 6.0, 10.0)
    scheme = _scheme_from_venc(venc)
    trials = sim.trials or 100_000
    seed = sim.seed if sim.seed is not None else cfg.seed
    v_true = sim.v if sim.v is not None else 0.0
    rows = []
    for i, s21 in enumerate(FIG7_S21):
        snr = _snr_pattern(float(s21))
        crlb = crlb_velocity(float(v_true), 0.0, snr.s[:, 0],
                             np.ones(1), 1.0, scheme)
        pseed = derive_seed(seed, i)
        prom = monte_carlo_rmse("prom", scheme, snr, [v_true], trials,
                                seed=pseed).rmse[0]
        mle = monte_carlo_rmse("mle", scheme, snr, [v_true], trials,
                               seed=pseed).rmse[0]
        rows.append((float(s21), math.sqrt(crlb), float(mle), float(prom)))
    path = os.path.join(outdir, "fig7_crlb.csv")
    _write_csv(path, ["s21", "crlb_sqrt", "rmse_mle", "rmse_prom"], rows)
    return [path]


def _recipe_fig9(cfg: RunConfig, outdir: str) -> list:
    sim = cfg.simulation
    seed = sim.seed if sim.seed is not None else cfg.seed
    scheme = _scheme_from_venc(sim.venc) if sim.venc else None
    phantom = vessel_phantom(scheme=scheme, seed=seed)
    vencs = vencs_from_moments(phantom.scheme)
    omega = vencs.range()
    cimg = os.path.join(outdir, "fig9_phantom.cimg")
    write_complex_image(cimg, ComplexImage(
        y=phantom.y, gamma_m1=phantom.scheme.gamma_m1, venc=vencs.venc,
        offset=-0.5 * omega, seed=seed,
        provenance={"generator": "vessel_phantom",
                    "sigma": phantom.sigma,
                    "fov_mm": list(phantom.fov_mm)}))
    tmap = os.path.join(outdir, "fig9_truth.vmap")
    write_velocity_map(tmap, phantom.velocity, {
        "content": "ground_truth", "units": {"velocity": "cm/s"},
        "seed": seed, "window_width": omega, "offset": -0.5 * omega})
    write_json(os.path.join(outdir, "fig9_summary.json"), {
        "seed": seed, "sigma": phantom.sigma,
        "grid": list(phantom.velocity.shape),
        "vessel_voxels": int(phantom.vessel_mask.sum()),
        "venc": [float(v) for v in vencs.venc],
    })
    return [cimg, tmap]


_RECIPES = {
    "fig1": _recipe_fig1, "fig2": _recipe_fig2, "fig5": _recipe_fig5,
    "fig6": _recipe_fig6, "fig7": _recipe_fig7, "fig8": _recipe_fig8,
    "fig9": _recipe_fig9,
}


def _run_recipe(args, allowed: tuple, command: str) -> int:
    cfg = _load_run_config(args)
    recipe = args.recipe or cfg.simulation.recipe
    if recipe is None:
        raise ValidationError("pick a recipe via --recipe or config")
    if recipe not in allowed:
        raise ValidationError(
            f"unknown recipe {recipe!r} for {command}; "
            f"expected one of {', '.join(allowed)}")
    outdir = _outdir(cfg)
    outputs = _RECIPES[recipe](cfg, outdir)
    _write_manifest(outdir, recipe, command, cfg, cfg.seed, outputs)
    print(f"{recipe}: wrote {', '.join(os.path.basename(p) for p in outputs)}")
    return 0


def run_simulate(args) -> int:
    return _run_recipe(args, SIMULATE_RECIPES, "simulate")


def run_analyze(args) -> int:
    return _run_recipe(args, ANALYZE_RECIPES, "analyze")


# ---------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promkit",
        description="Velocity estimation, venc design, and simulation "
                    "for multi-point phase-contrast data")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads",
                       help="kernel threads (default: PROMKIT_THREADS)")
        p.add_argument("--output", help="output directory")

    p_est = sub.add_parser("estimate", help="estimate a velocity map")
    p_est.add_argument("input", help="PROMCIMG container")
    p_est.add_argument("--estimator",
                       choices=["prom", "prom+", "sdv", "odv", "nco", "mle"])
    common(p_est)
    p_est.set_defaults(func=run_estimate)

    p_des = sub.add_parser("design", help="search for a venc triple")
    common(p_des)
    p_des.set_defaults(func=run_design)

    p_sim = sub.add_parser("simulate", help="run a simulation recipe")
    p_sim.add_argument("--recipe", help=", ".join(SIMULATE_RECIPES))
    common(p_sim)
    p_sim.set_defaults(func=run_simulate)

    p_ana = sub.add_parser("analyze", help="run an analysis recipe")
    p_ana.add_argument("--recipe", help=", ".join(ANALYZE_RECIPES))
    common(p_ana)
    p_ana.set_defaults(func=run_analyze)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _resolve_threads(args.threads)
        return args.func(args)
    except InfeasibleDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cand in exc.diagnostics:
            print(f"  ({cand.p},{cand.q}) {cand.status}: {cand.note}",
                  file=sys.stderr)
        return 4
    except ContainerFormatError as exc:
        where = "" if exc.offset is None else f" (byte offset {exc.offset})"
        print(f"error: {exc}{where}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

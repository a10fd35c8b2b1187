"""Command-line pipeline: simulate -> g2 -> match -> reconstruct -> fit.

Each subcommand reads what earlier stages left in ``--out-dir`` and writes
its own subdirectory; ``all`` runs the chain in memory. Every artifact
carries the seed and config hash, and ``manifest.json`` lists the sha256 of
each file so two runs can be compared byte for byte.

Exit status: 0 ok, 2 configuration error, 3 data error, 4 no convergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .coincidence import (CoincidenceWindow, accidental_rate, estimate_offset, g2, match_coincidences,
                          time_difference_histogram)
from .config import RunConfig, build_config, ns_to_ps
from .errors import ConfigInvalid, DataError, GhostError, NoConvergence
from .optics import distortion_map, effective_magnification
from .reconstruction import (accumulate_ghost_image, binarize, demagnified_mask, dice, interior_region,
                             raw_image, subtract_accidentals)
from .resolution import FitParams, fit, model_image
from .source import simulate_run

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NO_CONVERGENCE = 0, 2, 3, 4


class StageError(Exception):
    """Wraps a pipeline error with the name of the stage that raised it."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


def _stage_dir(cfg: RunConfig, name: str) -> Path:
    d = cfg.out_dir / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; run `{producer}` first")
    return path


def _seed_for(cfg: RunConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1000 + stream,)))


# stages

def stage_simulate(cfg: RunConfig, state: dict) -> dict:
    d = _stage_dir(cfg, "simulate")
    optics = cfg.optics()
    mask = cfg.mask()
    e, p, truth = simulate_run(cfg.sim_config(), mask, optics, threads=cfg.threads)
    prov = cfg.provenance
    io.write_events(d / "electrons.epgi", e, prov)
    io.write_events(d / "photons.epgi", p, prov)
    io.write_ground_truth(d / "truth", truth, prov)
    if mask is not None:
        io.write_mask(d / "mask.pbm", mask, prov)
    state.update(electrons=e, photons=p, truth=truth, mask=mask, optics=optics)
    return state


def _streams(cfg: RunConfig, state: dict):
    if "electrons" not in state:
        d = cfg.out_dir / "simulate"
        state["electrons"] = io.read_events(_need(d / "electrons.epgi", "simulate"))
        state["photons"] = io.read_events(_need(d / "photons.epgi", "simulate"))
    return state["electrons"], state["photons"]


def stage_g2(cfg: RunConfig, state: dict) -> dict:
    c = cfg.values["coincidence"]
    e, p = _streams(cfg, state)
    rng = (ns_to_ps(c["histogram_min_ns"]), ns_to_ps(c["histogram_max_ns"]))
    h = time_difference_histogram(e, p, rng, ns_to_ps(c["histogram_bin_ns"]))
    g = g2(h)
    d = _stage_dir(cfg, "g2")
    io.write_histogram(d / "histogram.csv", h, g, cfg.provenance)
    off, off_err = estimate_offset(h)
    summary = dict(cfg.provenance, offset_ps=off, offset_error_ps=off_err,
                   n_electrons=h.n_electrons, n_photons=h.n_photons)
    io.write_report(d / "summary.txt", summary)
    state.update(histogram=h, g2=g, offset_ps=off)
    return state


def _histogram(cfg: RunConfig, state: dict):
    if "histogram" not in state:
        d = cfg.out_dir / "g2"
        state["histogram"] = io.read_histogram(_need(d / "histogram.csv", "g2"))
        state["offset_ps"] = io.read_report(d / "summary.txt")["offset_ps"]
    return state["histogram"]


def _window(cfg: RunConfig, state: dict) -> CoincidenceWindow:
    c = cfg.values["coincidence"]
    w = ns_to_ps(c["window_half_width_ns"])
    if c["window_offset"] == "auto":
        _histogram(cfg, state)
        off = int(round(state["offset_ps"]))
    else:
        try:
            off = ns_to_ps(float(c["window_offset"]))
        except (TypeError, ValueError):
            raise ConfigInvalid("coincidence.window_offset must be \"auto\" or a number in ns") from None
    return CoincidenceWindow(off, w)


def stage_match(cfg: RunConfig, state: dict) -> dict:
    e, p = _streams(cfg, state)
    w = _window(cfg, state)
    pairs = match_coincidences(e, p, w, threads=cfg.threads, n_slices=cfg.threads)
    d = _stage_dir(cfg, "match")
    prov = dict(cfg.provenance, window_offset_ps=w.offset_ps, window_half_width_ps=w.half_width_ps)
    io.write_pairs(d / "pairs.csv", pairs, prov)
    state.update(pairs=pairs, window=w)
    return state


def stage_reconstruct(cfg: RunConfig, state: dict) -> dict:
    e, _ = _streams(cfg, state)
    if "pairs" not in state:
        state["pairs"] = io.read_pairs(_need(cfg.out_dir / "match" / "pairs.csv", "match"))
    pairs = state["pairs"]
    w = state.get("window") or _window(cfg, state)
    h = _histogram(cfg, state)
    binning = cfg.binning()
    prov = cfg.provenance
    raw = raw_image(e, binning)
    raw = type(raw)(raw.counts, binning, dict(raw.metadata, **prov))
    ghost = accumulate_ghost_image(pairs, e, binning, w)
    ghost = type(ghost)(ghost.counts, binning, dict(ghost.metadata, **prov))
    acc, acc_err = accidental_rate(h, w)
    sub = subtract_accidentals(ghost, raw, acc)
    sub = type(sub)(sub.counts.astype(np.float32), binning, dict(sub.metadata, accidentals_error=acc_err))
    d = _stage_dir(cfg, "reconstruct")
    comments = [f"seed={cfg.seed}", f"config_hash={cfg.config_hash}"]
    io.write_pgm16(d / "raw.pgm", raw, comments)
    io.write_pgm16(d / "ghost.pgm", ghost, comments)
    io.write_float32(d / "ghost_subtracted.f32", sub)

    metrics = dict(prov, n_pairs=len(pairs), accidentals=acc, accidentals_error=acc_err,
                   n_raw_electrons=int(raw.counts.sum()))
    mask = state.get("mask") if "mask" in state else _mask(cfg)
    if mask is not None:
        region = interior_region(raw)
        truth_img = demagnified_mask(mask, state.get("optics") or cfg.optics(), binning) & region
        got = binarize(sub.counts, smooth_bins=1.0, region=region)
        metrics["dice"] = dice(got, truth_img)
    io.write_report(d / "metrics.txt", metrics)
    state.update(raw=raw, ghost=ghost, subtracted=sub, metrics=metrics)
    return state


def _mask(cfg: RunConfig):
    path = cfg.out_dir / "simulate" / "mask.pbm"
    return io.read_mask(path) if path.exists() else cfg.mask()


def stage_fit(cfg: RunConfig, state: dict) -> dict:
    if cfg.mask_kind != "grating":
        raise ConfigInvalid("fit needs a grating mask (use --preset grating-run)")
    d_rec = cfg.out_dir / "reconstruct"
    if "ghost" not in state:
        state["ghost"] = io.read_pgm16(_need(d_rec / "ghost.pgm", "reconstruct"))
        state["raw"] = io.read_pgm16(_need(d_rec / "raw.pgm", "reconstruct"))
    ghost, raw = state["ghost"], state["raw"]
    optics = state.get("optics") or cfg.optics()
    spec = cfg.grating()
    f = cfg.values["fit"]
    roi = interior_region(raw)
    vals = ghost.counts[roi].astype(float)
    if vals.size == 0:
        raise DataError("ghost image has no illuminated bins")
    lo, hi = np.percentile(vals, [5, 95])
    init = FitParams(float(f["init_sigma_um"]), max(hi - lo, 1.0), float(lo))
    res = fit(ghost, spec, optics, init, roi=roi, n_bootstrap=int(f["n_bootstrap"]),
              restarts=int(f["restarts"]), max_iter=int(f["max_iter"]), rng=_seed_for(cfg, 1),
              threads=cfg.threads)
    p = res.params
    report = dict(cfg.provenance, sigma_um=p.sigma_um, fwhm_um=res.fwhm_um,
                  sigma_uncertainty_um=res.sigma_uncertainty_um, fwhm_uncertainty_um=res.fwhm_uncertainty_um,
                  amplitude=p.amplitude, baseline=p.baseline, shift_x_um=p.shift_um[0],
                  shift_y_um=p.shift_um[1], rotation_rad=p.rotation_rad, axial_offset_um=p.axial_offset_um,
                  residual_l1=res.residual_l1, iterations=res.iterations, converged=res.converged,
                  n_bootstrap=int(res.bootstrap_sigmas.size), n_pairs=int(ghost.counts.sum()),
                  magnification=optics.magnification)
    d = _stage_dir(cfg, "fit")
    io.write_report(d / "report.txt", report)
    model = model_image(p, spec, optics, ghost.binning)
    meta = {"kind": "model", **cfg.provenance}
    io.write_float32(d / "model.f32", type(ghost)(model.astype(np.float32), ghost.binning, meta))
    resid = np.where(roi, ghost.counts - model, 0.0).astype(np.float32)
    io.write_float32(d / "residual.f32", type(ghost)(resid, ghost.binning, dict(meta, kind="residual")))
    state.update(fit=res, fit_report=report)
    if not res.converged:
        raise NoConvergence(res.residual_l1, "Nelder-Mead stopped before reaching the tolerance")
    return state


def stage_raytrace(cfg: RunConfig, state: dict) -> dict:
    optics = state.get("optics") or cfg.optics()
    r = cfg.values["reconstruction"]
    table = distortion_map(optics, 0.5 * float(r["field_um"]), 9)
    d = _stage_dir(cfg, "raytrace")
    prov = dict(cfg.provenance, magnification=optics.magnification,
                effective_magnification=effective_magnification(optics))
    io.write_table(d / "distortion.csv", ["x_um", "y_um", "X_um", "Y_um", "X_linear_um", "Y_linear_um"],
                   table.tolist(), prov)
    state["optics"] = optics
    return state


STAGES = {
    "simulate": [stage_simulate],
    "g2": [stage_g2],
    "match": [stage_match],
    "reconstruct": [stage_reconstruct],
    "fit": [stage_fit],
    "raytrace": [stage_raytrace],
}


def write_manifest(out_dir: Path, cfg: RunConfig) -> Path:
    files = {}
    for f in sorted(out_dir.rglob("*")):
        if f.is_file() and f.name != "manifest.json":
            files[f.relative_to(out_dir).as_posix()] = hashlib.sha256(f.read_bytes()).hexdigest()
    path = out_dir / "manifest.json"
    io.write_json(path, {"seed": cfg.seed, "config_hash": cfg.config_hash, "preset": cfg.preset,
                         "config": cfg.values, "files": files})
    return path


def run_pipeline(cfg: RunConfig, command: str = "all") -> dict:
    """Run one subcommand (or ``all``) and return the in-memory state."""
    if command == "all":
        names = ["raytrace", "simulate", "g2", "match", "reconstruct"]
        if cfg.mask_kind == "grating":
            names.append("fit")
    elif command in STAGES:
        names = [command]
    else:
        raise ConfigInvalid(f"unknown subcommand {command!r}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    state: dict = {}
    try:
        for name in names:
            for fn in STAGES[name]:
                try:
                    fn(cfg, state)
                except (GhostError, OSError) as exc:
                    raise StageError(name, exc) from exc
    finally:
        write_manifest(cfg.out_dir, cfg)
    return state


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eghost", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "g2", "match", "reconstruct", "fit", "raytrace", "all"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="TOML config file")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--out-dir", type=Path, default=Path("out"))
        sp.add_argument("--preset", choices=("cat-run", "grating-run"))
        sp.add_argument("--threads", type=int, default=1)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.error
    if isinstance(exc, ConfigInvalid):
        return EXIT_CONFIG
    if isinstance(exc, NoConvergence):
        return EXIT_NO_CONVERGENCE
    return EXIT_DATA


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args.preset, args.config, args.seed, args.out_dir, args.threads)
    except ConfigInvalid as exc:
        print(f"eghost: [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        state = run_pipeline(cfg, args.command)
    except StageError as exc:
        print(f"eghost: {exc}", file=sys.stderr)
        return exit_code(exc)
    if "fit_report" in state:
        r = state["fit_report"]
        print(f"fwhm_um = {r['fwhm_um']:.3f} +- {r['fwhm_uncertainty_um']:.3f}")
    if "metrics" in state:
        m = state["metrics"]
        print(f"n_pairs = {m['n_pairs']}" + (f", dice = {m['dice']:.3f}" if "dice" in m else ""))
    print(f"artifacts in {cfg.out_dir}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

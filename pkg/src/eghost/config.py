"""Run configuration: presets, TOML loading and the config hash.

Config files are TOML with one table per stage. Every physical quantity
carries its unit in the key name, e.g.::

    [run]
    preset = "grating-run"
    seed = 7

    [simulation]
    run_duration_s = 150.0
    jitter_sigma_ns = 21.2

    [coincidence]
    window_half_width_ns = 25.0
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigInvalid
from .optics import Mask, OpticalSystem, ParabolicMirror, cat_mask, grating_mask, solve_lens_to_image
from .reconstruction import Binning
from .resolution import GratingSpec
from .source import BeamProfile, SimConfig

PRESETS = ("cat-run", "grating-run")

_BASE = {
    "run": {"preset": "cat-run", "seed": 0, "mask": "preset"},
    "simulation": {
        "run_duration_s": 150.0,
        "electron_rate_hz": 2.0e5,
        "pair_yield": 0.05,
        "photon_detection_efficiency": 0.5,
        "filter_pass_pair": 0.9,
        "filter_leak_nopair": 0.1,
        "dark_count_rate_hz": 2000.0,
        "beam_diameter_um": 31.0,
        "beam_center_x_um": 0.0,
        "beam_center_y_um": 0.0,
        "correlation_sigma_um": 0.87,
        "jitter_sigma_ns": 50.0 / (2.0 * math.sqrt(2.0 * math.log(2.0))),
        "fixed_offset_ns": 120.0,
        "timestamp_quantum_ticks": 25,
        "slice_duration_s": 10.0,
    },
    "optics": {
        "magnification": 19.0,
        "mirror_focal_length_um": 750.0,
        "numerical_aperture": 0.58,
        "beam_hole_diameter_um": 300.0,
        "lens_focal_length_mm": 150.0,
        "mirror_to_lens_mm": 1.5,
        "selection_aperture_mm": 1.0,
    },
    "mask": {
        "cat_pitch_um": 2.0,
        "grating_period_um": 60.0,
        "grating_duty": 0.5,
        "grating_angle_rad": 0.1,
        "grating_phase_um": 7.0,
        "grating_pitch_um": 1.0,
        "half_width_um": 500.0,
    },
    "coincidence": {
        "histogram_min_ns": -1000.0,
        "histogram_max_ns": 1000.0,
        "histogram_bin_ns": 10.0,
        "window_half_width_ns": 25.0,
        "window_offset": "auto",
    },
    "reconstruction": {"bin_um": 0.5, "field_um": 40.0},
    "fit": {"init_sigma_um": 1.2, "n_bootstrap": 50, "restarts": 3, "max_iter": 2000},
}

_PRESET_OVERRIDES = {
    "cat-run": {"run": {"mask": "cat"}, "optics": {"magnification": 19.0}},
    # the line contrast pins sigma only weakly, so this run collects ~10x more pairs
    "grating-run": {"run": {"mask": "grating"}, "optics": {"magnification": 16.0},
                    "simulation": {"run_duration_s": 400.0, "pair_yield": 0.1,
                                   "photon_detection_efficiency": 0.8}},
}


def _coerce(key: str, old, new):
    """Match the default's numeric type so 150 and 150.0 hash the same."""
    num = (int, float)
    if isinstance(old, bool) or not isinstance(old, num):
        return new
    if isinstance(new, bool) or not isinstance(new, num):
        raise ConfigInvalid(f"{key} must be a number, got {new!r}")
    if isinstance(old, int):
        if float(new) != int(new):
            raise ConfigInvalid(f"{key} must be a whole number, got {new!r}")
        return int(new)
    return float(new)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict):
            if k not in out or not isinstance(out[k], dict):
                raise ConfigInvalid(f"unknown config table [{k}]")
            for kk, vv in v.items():
                if kk not in out[k]:
                    raise ConfigInvalid(f"unknown config key {k}.{kk}")
                out[k][kk] = _coerce(f"{k}.{kk}", out[k][kk], vv)
        else:
            raise ConfigInvalid(f"top-level key {k!r} must be a table")
    return out


def ns_to_ps(v: float) -> int:
    return int(round(float(v) * 1000.0))


@dataclass
class RunConfig:
    values: dict
    out_dir: Path = Path("out")
    threads: int = 1
    config_dir: Path = field(default_factory=Path.cwd)

    @property
    def preset(self) -> str:
        return self.values["run"]["preset"]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def config_hash(self) -> str:
        doc = {"values": self.values}
        if self.mask_kind not in ("cat", "grating", "none"):
            # a mask file is hashed by content, not by where it lives
            path = self._mask_path()
            if path.exists():
                side = path.with_name(path.name + ".json")
                blob = path.read_bytes() + (side.read_bytes() if side.exists() else b"")
                doc["mask_sha256"] = hashlib.sha256(blob).hexdigest()
                doc["values"] = copy.deepcopy(self.values)
                doc["values"]["run"]["mask"] = "file"
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def provenance(self) -> dict:
        return {"seed": self.seed, "config_hash": self.config_hash, "preset": self.preset}

    def sim_config(self) -> SimConfig:
        s = self.values["simulation"]
        beam = BeamProfile(float(s["beam_diameter_um"]), (float(s["beam_center_x_um"]), float(s["beam_center_y_um"])))
        return SimConfig(
            run_duration_s=float(s["run_duration_s"]),
            electron_rate_hz=float(s["electron_rate_hz"]),
            pair_yield=float(s["pair_yield"]),
            photon_detection_efficiency=float(s["photon_detection_efficiency"]),
            filter_pass_pair=float(s["filter_pass_pair"]),
            filter_leak_nopair=float(s["filter_leak_nopair"]),
            dark_count_rate_hz=float(s["dark_count_rate_hz"]),
            beam=beam,
            correlation_sigma_um=float(s["correlation_sigma_um"]),
            jitter_sigma_ps=float(s["jitter_sigma_ns"]) * 1000.0,
            fixed_offset_ps=float(s["fixed_offset_ns"]) * 1000.0,
            timestamp_quantum_ticks=int(s["timestamp_quantum_ticks"]),
            rng_seed=self.seed,
            slice_duration_s=float(s["slice_duration_s"]),
        )

    def optics(self) -> OpticalSystem:
        o = self.values["optics"]
        mirror = ParabolicMirror(float(o["mirror_focal_length_um"]), float(o["numerical_aperture"]),
                                 float(o["beam_hole_diameter_um"]))
        return solve_lens_to_image(float(o["magnification"]), mirror, float(o["lens_focal_length_mm"]),
                                   float(o["mirror_to_lens_mm"]),
                                   selection_aperture_mm=float(o["selection_aperture_mm"]), name=self.preset)

    def grating(self) -> GratingSpec:
        m = self.values["mask"]
        return GratingSpec(float(m["grating_period_um"]), float(m["grating_duty"]),
                           float(m["grating_angle_rad"]), float(m["grating_phase_um"]))

    @property
    def mask_kind(self) -> str:
        kind = self.values["run"]["mask"]
        if kind == "preset":
            kind = _PRESET_OVERRIDES[self.preset]["run"]["mask"]
        return kind

    def mask(self) -> Optional[Mask]:
        from .io import read_mask

        m = self.values["mask"]
        kind = self.mask_kind
        if kind == "cat":
            return cat_mask(float(m["cat_pitch_um"]))
        if kind == "grating":
            g = self.grating()
            return grating_mask(g.period_um, g.duty, g.angle_rad, g.phase_um,
                                float(m["half_width_um"]), float(m["grating_pitch_um"]))
        if kind == "none":
            return None
        path = self._mask_path()
        if not path.exists():
            raise ConfigInvalid(f"mask file {path} does not exist")
        return read_mask(path)

    def _mask_path(self) -> Path:
        path = Path(self.mask_kind)
        return path if path.is_absolute() else self.config_dir / path

    def binning(self) -> Binning:
        r = self.values["reconstruction"]
        return Binning.centered(float(r["field_um"]), float(r["bin_um"]))


def build_config(preset: Optional[str] = None, path=None, seed: Optional[int] = None,
                 out_dir=None, threads: int = 1, overrides: Optional[dict] = None) -> RunConfig:
    """Resolve defaults <- preset <- file <- overrides <- explicit seed/preset."""
    file_values = {}
    config_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigInvalid(f"config file {path} does not exist")
        try:
            file_values = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"cannot parse {path}: {exc}") from None
        config_dir = path.parent
    name = preset or file_values.get("run", {}).get("preset") or _BASE["run"]["preset"]
    if name not in PRESETS:
        raise ConfigInvalid(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    values = _merge(_BASE, _PRESET_OVERRIDES[name])
    values = _merge(values, file_values)
    if overrides:
        values = _merge(values, overrides)
    values["run"]["preset"] = name
    if values["run"]["mask"] == "preset":
        values["run"]["mask"] = _PRESET_OVERRIDES[name]["run"]["mask"]
    if seed is not None:
        values["run"]["seed"] = int(seed)
    cfg = RunConfig(values, Path(out_dir) if out_dir else Path("out"), max(1, int(threads)), config_dir)
    cfg.sim_config()  # validate early
    return cfg

"""Monte Carlo generation of correlated electron/photon event streams.

Every electron reaching the sample either emits a collectable photon (a
"pair") with probability ``pair_yield`` or not. The photon is born at the
electron position plus an isotropic Gaussian displacement, traced through the
optics to the image plane, transmitted or blocked by the mask, and detected
with probability ``photon_detection_efficiency``. The energy filter records
the electron with probability ``filter_pass_pair`` for pairs and
``filter_leak_nopair`` otherwise. Dark counts are a homogeneous Poisson
process on the photon detector.

Non-pair electrons that the filter rejects are never materialised: they are
drawn only as a count (binomial thinning of a Poisson process gives the same
law), which keeps runs of 10^7 electrons/s cheap.

Randomness: numpy PCG64 seeded through ``SeedSequence(rng_seed)``; the run is
cut into fixed time slices, each with its own spawned child seed, so the
output does not depend on how many threads process the slices.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigInvalid, OpticsOutOfRange
from .events import (ELECTRON, PHOTON, PS_PER_S, EventStream, StreamHeader,
                     validate_stream)
from .optics import Mask, OpticalSystem, trace_to_image, transmit

TICK_PS_NUM, TICK_PS_DEN = 125, 2  # one time-tagger tick is 62.5 ps
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class BeamProfile:
    """Uniform disc illumination in the sample plane."""

    diameter_um: float = 31.0
    center_um: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.diameter_um > 0:
            raise ConfigInvalid("beam diameter must be positive")
        object.__setattr__(self, "center_um", tuple(float(c) for c in self.center_um))

    @property
    def radius_um(self) -> float:
        return 0.5 * self.diameter_um

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        r = self.radius_um * np.sqrt(rng.random(n))
        phi = 2.0 * np.pi * rng.random(n)
        cx, cy = self.center_um
        return np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi)])

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d = pts - np.asarray(self.center_um)
        return np.einsum("...i,...i->...", d, d) <= self.radius_um ** 2


@dataclass(frozen=True)
class SimConfig:
    run_duration_s: float = 150.0
    electron_rate_hz: float = 2.0e5
    pair_yield: float = 0.05
    photon_detection_efficiency: float = 0.5
    filter_pass_pair: float = 0.9
    filter_leak_nopair: float = 0.1
    dark_count_rate_hz: float = 2000.0
    beam: BeamProfile = field(default_factory=BeamProfile)
    correlation_sigma_um: float = 0.87
    jitter_sigma_ps: float = 50_000.0 / FWHM_PER_SIGMA
    fixed_offset_ps: float = 120_000.0
    timestamp_quantum_ticks: int = 25
    rng_seed: int = 0
    slice_duration_s: float = 10.0
    # metadata only
    beam_energy_kev: float = 200.0
    beam_current_pa: float = 23.0
    energy_loss_window_ev: tuple = (2.0, 3.0)

    def __post_init__(self):
        probs = ("pair_yield", "photon_detection_efficiency", "filter_pass_pair", "filter_leak_nopair")
        for key in probs:
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{key} must lie in [0, 1], got {v}")
        for key in ("electron_rate_hz", "dark_count_rate_hz", "correlation_sigma_um", "jitter_sigma_ps"):
            if not getattr(self, key) >= 0:
                raise ConfigInvalid(f"{key} must be non-negative")
        if not self.run_duration_s > 0 or not self.slice_duration_s > 0:
            raise ConfigInvalid("durations must be positive")
        if int(self.timestamp_quantum_ticks) != self.timestamp_quantum_ticks or self.timestamp_quantum_ticks < 1:
            raise ConfigInvalid("timestamp quantum must be a positive whole number of ticks")

    @property
    def duration_ps(self) -> int:
        return int(round(self.run_duration_s * PS_PER_S))


@dataclass
class GroundTruth:
    """Per-pair records of a simulated run.

    ``electron_index``/``photon_index`` point into the emitted streams, -1
    when the particle was not recorded.
    """

    emission_um: np.ndarray
    photon_source_um: np.ndarray
    photon_image_um: np.ndarray
    transmitted: np.ndarray
    photon_detected: np.ndarray
    electron_recorded: np.ndarray
    electron_index: np.ndarray
    photon_index: np.ndarray
    n_electrons_emitted: int = 0
    n_background_electrons: int = 0
    n_dark_counts: int = 0

    @property
    def n_pairs(self) -> int:
        return int(self.transmitted.size)

    @property
    def n_true_coincidences(self) -> int:
        """Pairs where both partners made it into the output streams."""
        return int(np.count_nonzero((self.electron_index >= 0) & (self.photon_index >= 0)))


def draw_pair(beam: BeamProfile, sigma_corr_um: float, rng: np.random.Generator, n: int = 1):
    """Electron positions uniform on the beam disc and photon birth points.

    Returns ``(electron_pos, photon_source_pos, emission_time_offset)`` with
    positions shaped (n, 2); the photon is emitted at the same instant.
    """
    e = beam.sample(n, rng)
    disp = rng.normal(0.0, 1.0, size=(n, 2)) * sigma_corr_um
    return e, e + disp, np.zeros(n)


def quantize_ps(t_ps: np.ndarray, quantum_ticks: int) -> np.ndarray:
    """Floor integer-ps times onto the tagger grid (multiples of the quantum).

    Grid points are exact multiples of ``quantum_ticks * 62.5 ps``, floored to
    whole picoseconds.
    """
    t = np.asarray(t_ps, dtype=np.int64)
    k = (t * TICK_PS_DEN) // (TICK_PS_NUM * quantum_ticks)
    return (k * (TICK_PS_NUM * quantum_ticks)) // TICK_PS_DEN


def _poisson_times(rate_hz: float, t0_ps: int, span_ps: int, rng) -> np.ndarray:
    n = rng.poisson(rate_hz * span_ps / PS_PER_S) if rate_hz > 0 else 0
    return np.sort(rng.random(n) * span_ps)


def _to_ps(t0_ps: int, offsets: np.ndarray) -> np.ndarray:
    return t0_ps + np.floor(offsets).astype(np.int64)


def _simulate_slice(cfg: SimConfig, mask: Optional[Mask], optics: OpticalSystem,
                    t0_ps: int, span_ps: int, seed: np.random.SeedSequence) -> dict:
    rng = np.random.Generator(np.random.PCG64(seed))
    rate = cfg.electron_rate_hz
    n_all = rng.poisson(rate * span_ps / PS_PER_S) if rate > 0 else 0
    n_pair = rng.binomial(n_all, cfg.pair_yield)
    n_bg = rng.binomial(n_all - n_pair, cfg.filter_leak_nopair)

    pair_t = np.sort(rng.random(n_pair) * span_ps)
    e_pos, src, _ = draw_pair(cfg.beam, cfg.correlation_sigma_um, rng, n_pair)
    try:
        img = trace_to_image(src, optics) if n_pair else np.zeros((0, 2))
    except OpticsOutOfRange:
        raise OpticsOutOfRange("photon source outside the traceable region; shrink the beam") from None
    passed = transmit(mask, img)
    detected = passed & (rng.random(n_pair) < cfg.photon_detection_efficiency)
    recorded = rng.random(n_pair) < cfg.filter_pass_pair
    jitter = rng.normal(0.0, 1.0, n_pair) * cfg.jitter_sigma_ps
    photon_t = pair_t + cfg.fixed_offset_ps + jitter

    bg_t = np.sort(rng.random(n_bg) * span_ps)
    bg_pos = cfg.beam.sample(n_bg, rng)
    dark_t = _poisson_times(cfg.dark_count_rate_hz, t0_ps, span_ps, rng)

    return dict(
        n_all=n_all, n_bg=n_bg, n_dark=dark_t.size,
        pair_t=_to_ps(t0_ps, pair_t), photon_t=_to_ps(t0_ps, photon_t),
        e_pos=e_pos.astype(np.float32), src=src.astype(np.float32), img=img.astype(np.float32),
        passed=passed, detected=detected, recorded=recorded,
        bg_t=_to_ps(t0_ps, bg_t), bg_pos=bg_pos, dark_t=_to_ps(t0_ps, dark_t),
    )


def _fov(beam: BeamProfile, margin: float = 1.0) -> tuple:
    cx, cy = beam.center_um
    r = beam.radius_um + margin
    return (cx - r, cx + r, cy - r, cy + r)


def simulate_run(cfg: SimConfig, mask: Optional[Mask], optics: OpticalSystem, threads: int = 1):
    """Generate (electron stream, photon stream, ground truth) for one run.

    ``mask=None`` means nothing in the photon image plane. Output is
    independent of ``threads``.
    """
    T = cfg.duration_ps
    span = int(round(cfg.slice_duration_s * PS_PER_S))
    starts = list(range(0, T, span))
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(len(starts))
    jobs = [(s, min(span, T - s), sd) for s, sd in zip(starts, seeds)]

    def work(job):
        return _simulate_slice(cfg, mask, optics, *job)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, jobs))
    else:
        parts = [work(j) for j in jobs]

    def cat(key, dtype=None):
        arrs = [p[key] for p in parts]
        out = np.concatenate(arrs) if arrs else np.zeros(0)
        return out.astype(dtype) if dtype is not None else out

    q = cfg.timestamp_quantum_ticks
    pair_t = quantize_ps(cat("pair_t", np.int64), q)
    photon_t = quantize_ps(cat("photon_t", np.int64), q)
    e_pos = cat("e_pos").reshape(-1, 2)
    src = cat("src").reshape(-1, 2)
    img = cat("img").reshape(-1, 2)
    passed = cat("passed").astype(bool)
    detected = cat("detected").astype(bool)
    recorded = cat("recorded").astype(bool)
    bg_t = quantize_ps(cat("bg_t", np.int64), q)
    bg_pos = cat("bg_pos").reshape(-1, 2)
    dark_t = quantize_ps(cat("dark_t", np.int64), q)
    n_emitted = int(sum(p["n_all"] for p in parts))
    del parts

    # electrons: recorded pair electrons then background, merged by stable sort
    pair_idx = np.flatnonzero(recorded)
    et = np.concatenate([pair_t[pair_idx], bg_t])
    epos = np.concatenate([e_pos[pair_idx], bg_pos])
    eorder = np.argsort(et, kind="stable")
    e_rank = np.empty_like(eorder)
    e_rank[eorder] = np.arange(eorder.size)
    electron_index = np.full(pair_t.size, -1, np.int64)
    electron_index[pair_idx] = e_rank[: pair_idx.size]
    del e_rank, bg_pos

    # photons: detected pair photons inside [0, T] plus dark counts
    ph_idx = np.flatnonzero(detected & (photon_t >= 0) & (photon_t <= T))
    pt = np.concatenate([photon_t[ph_idx], dark_t])
    porder = np.argsort(pt, kind="stable")
    p_rank = np.empty_like(porder)
    p_rank[porder] = np.arange(porder.size)
    photon_index = np.full(pair_t.size, -1, np.int64)
    photon_index[ph_idx] = p_rank[: ph_idx.size]

    e_header = StreamHeader(T, ELECTRON, _fov(cfg.beam), cfg.electron_rate_hz, cfg.rng_seed)
    p_header = StreamHeader(T, PHOTON, (0.0, 0.0, 0.0, 0.0), 0.0, cfg.rng_seed)
    electrons = EventStream(e_header, et[eorder], epos[eorder, 0], epos[eorder, 1])
    del et, epos, eorder
    photons = EventStream(p_header, pt[porder])

    truth = GroundTruth(
        emission_um=e_pos, photon_source_um=src, photon_image_um=img,
        transmitted=passed, photon_detected=detected, electron_recorded=recorded,
        electron_index=electron_index, photon_index=photon_index,
        n_electrons_emitted=n_emitted,
        n_background_electrons=int(bg_t.size), n_dark_counts=int(dark_t.size),
    )
    return validate_stream(electrons), validate_stream(photons), truth


def background_streams(rate_e_hz: float, rate_gamma_hz: float, duration_s: float,
                       rng: np.random.Generator, beam: Optional[BeamProfile] = None):
    """Two independent homogeneous Poisson streams (electrons on the beam disc)."""
    if rate_e_hz < 0 or rate_gamma_hz < 0:
        raise ConfigInvalid("rates must be non-negative")
    beam = beam or BeamProfile()
    T = int(round(duration_s * PS_PER_S))
    te = np.floor(_poisson_times(rate_e_hz, 0, T, rng)).astype(np.int64)
    pos = beam.sample(te.size, rng)
    tp = np.floor(_poisson_times(rate_gamma_hz, 0, T, rng)).astype(np.int64)
    e = EventStream(StreamHeader(T, ELECTRON, _fov(beam), rate_e_hz), te, pos[:, 0], pos[:, 1])
    p = EventStream(StreamHeader(T, PHOTON, (0.0, 0.0, 0.0, 0.0), rate_gamma_hz), tp)
    return validate_stream(e), validate_stream(p)

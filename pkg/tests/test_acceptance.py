"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also repeated in the pytest
terminal summary). Tolerances are the contractual ones; nothing here is
tuned to the seed.
"""
import math
import time

import numpy as np
import pytest

from eghost import io
from eghost.cli import main
from eghost.coincidence import (CoincidenceWindow, expected_accidentals, g2, match_coincidences,
                                time_difference_histogram)
from eghost.config import build_config
from eghost.errors import HoleClipped, OutsideNA
from eghost.events import photon_stream, electron_stream
from eghost.optics import Ray, back_project, effective_magnification, preset, reflect, trace_to_image
from eghost.source import background_streams
from oracles import angle_between, brute_pairs_and_histogram

MIN_PAIRS = 100_000


@pytest.fixture(scope="module")
def cat_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cat-run")
    assert main(["all", "--preset", "cat-run", "--out-dir", str(out)]) == 0
    return out


def test_c1_resolution_reproduction(tmp_path, acceptance):
    t0 = time.perf_counter()
    rc = main(["all", "--preset", "grating-run", "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    rep = io.read_report(tmp_path / "fit" / "report.txt")
    cfg = build_config("grating-run")
    sigma_corr = cfg.values["simulation"]["correlation_sigma_um"]
    ok = (rc == 0 and sigma_corr == 0.87 and rep["n_pairs"] >= MIN_PAIRS
          and abs(rep["fwhm_um"] - 2.03) <= 0.15 and elapsed < 300.0)
    acceptance("C1 resolution", ok,
               f"FWHM {rep['fwhm_um']:.3f} +- {rep['fwhm_uncertainty_um']:.3f} um (target 2.03 +- 0.15), "
               f"{rep['n_pairs']} pairs, {elapsed:.0f} s (< 300 s)")


def test_c2_coincidence_statistics(cat_run, acceptance):
    metrics = io.read_report(cat_run / "reconstruct" / "metrics.txt")
    h = io.read_histogram(cat_run / "g2" / "histogram.csv")
    g = g2(h)
    cfg = build_config("cat-run")
    injected = -cfg.sim_config().fixed_offset_ps  # tau = t_e - t_photon
    k = int((injected - h.tau_min_ps) // h.bin_width_ps)
    far = np.abs(h.centers_ps - injected) > 200_000
    bg = g.g2[far].mean()
    ratio = g.g2[k] / bg
    z = np.abs(g.g2[far] - 1.0) / g.sigma[far]
    ok = metrics["n_pairs"] >= MIN_PAIRS and ratio > 5 and z.max() <= 5.0
    acceptance("C2 coincidences", ok,
               f"{metrics['n_pairs']} pairs, g2 peak/background {ratio:.1f} at tau = {injected / 1e3:.0f} ns, "
               f"background max |g2-1|/sigma = {z.max():.2f} over {far.sum()} bins")


def test_c3_oracle_equivalence(acceptance):
    rng = np.random.default_rng(20240611)
    W, bw, tau_range = 25_000, 10_000, (-1_000_000, 1_000_000)
    brute_pairs_and_histogram(np.arange(3), np.arange(3), 0, 1, -10, 10, 5)  # compile outside the clock
    t0 = time.perf_counter()
    bad = 0
    for k in range(200):
        span = int(rng.choice([10**8, 10**9, 10**10]))
        if k % 10 == 0:  # coarse grid to force ties and exact boundary hits
            te = np.sort(rng.integers(0, span // 5000, 10_000) * 5000)
            tp = np.sort(rng.integers(0, span // 5000, 10_000) * 5000)
        else:
            te = np.sort(rng.integers(0, span, 10_000))
            tp = np.sort(rng.integers(0, span, 10_000))
        off = int(rng.integers(-200_000, 200_001))
        e = electron_stream(te, np.zeros(te.size), np.zeros(te.size), span)
        p = photon_stream(tp, span)
        pairs = match_coincidences(e, p, CoincidenceWindow(off, W))
        h = time_difference_histogram(e, p, tau_range, bw)
        ei, pi, counts = brute_pairs_and_histogram(te, tp, off, W, tau_range[0], tau_range[1], bw)
        if not (np.array_equal(pairs.electron_index, ei) and np.array_equal(pairs.photon_index, pi)
                and np.array_equal(h.counts, counts)):
            bad += 1
    elapsed = time.perf_counter() - t0
    acceptance("C3 oracle equivalence", bad == 0 and elapsed < 60.0,
               f"{200 - bad}/200 instances identical to all-pairs scan, {elapsed:.1f} s (< 60 s)")


def test_c4_throughput(acceptance):
    rng = np.random.default_rng(4)
    n, T = 10_000_000, 10**12
    te = np.sort(rng.integers(0, T, n))
    tp = np.sort(rng.integers(0, T, n))
    e = electron_stream(te, np.zeros(n, np.float32), np.zeros(n, np.float32), T)
    p = photon_stream(tp, T)
    t0 = time.perf_counter()
    pairs = match_coincidences(e, p, CoincidenceWindow(0, 25_000))
    elapsed = time.perf_counter() - t0
    acceptance("C4 throughput", elapsed < 5.0,
               f"10^7 + 10^7 events matched in {elapsed:.2f} s (< 5 s), {len(pairs)} pairs")


def test_c5_optics_identities(acceptance):
    rng = np.random.default_rng(5)
    sys16, sys19 = preset("grating-run"), preset("cat-run")
    m = sys16.mirror
    a, b, e1 = m.a, m.b, m.e1
    worst, n_rays = 0.0, 0
    while n_rays < 1000:
        # direction uniform in the collection cone about the beam axis
        cos_t = 1.0 - rng.random() * (1.0 - math.cos(m.aperture_half_angle))
        phi = 2 * math.pi * rng.random()
        s = math.sqrt(1 - cos_t * cos_t)
        d = cos_t * b + s * (math.cos(phi) * a + math.sin(phi) * e1)
        try:
            out = reflect(Ray((0.0, 0.0, 0.0), d), m)
        except (HoleClipped, OutsideNA):
            continue
        worst = max(worst, angle_between(out.d, a))
        n_rays += 1

    pts = rng.uniform(-15.0, 15.0, (100, 2))
    rt = max(np.abs(back_project(trace_to_image(pts, s_), s_) - pts).max() for s_ in (sys16, sys19))
    m16, m19 = effective_magnification(sys16), effective_magnification(sys19)
    ok = worst < 1e-9 and rt < 1e-3 and abs(m16 / 16 - 1) < 0.01 and abs(m19 / 19 - 1) < 0.01
    acceptance("C5 optics", ok,
               f"max ray angle to axis {worst:.1e} rad (< 1e-9), round trip {rt:.1e} um (< 1e-3), "
               f"M = {m16:.3f} / {m19:.3f} (16 / 19 within 1%)")


def test_c6_ghost_image_fidelity(cat_run, acceptance):
    metrics = io.read_report(cat_run / "reconstruct" / "metrics.txt")
    acceptance("C6 ghost image", metrics["dice"] >= 0.8,
               f"Dice vs demagnified mask {metrics['dice']:.3f} (>= 0.8)")


def test_c7_g2_calibration(acceptance):
    rng = np.random.default_rng(7)
    e, p = background_streams(1e4, 1e4, 100.0, rng)
    # wide range: 1000 bins of 10 ns keep the mean's own noise well under 1%
    h = time_difference_histogram(e, p, (-5_000_000, 5_000_000), 10_000)
    mean_g2 = float(g2(h).g2.mean())
    w = CoincidenceWindow(0, 25_000)
    n = len(match_coincidences(e, p, w))
    expect = expected_accidentals(len(e), len(p), w, e.header.duration_ps)
    z = (n - expect) / math.sqrt(expect)
    ok = abs(mean_g2 - 1.0) <= 0.01 and abs(z) <= 5.0
    acceptance("C7 g2 calibration", ok,
               f"mean g2 {mean_g2:.4f} (1.00 +- 0.01), matched {n} vs expected {expect:.0f} ({z:+.2f} sigma)")


def test_c8_determinism(cat_run, tmp_path, acceptance):
    again = tmp_path / "again"
    assert main(["all", "--preset", "cat-run", "--out-dir", str(again), "--threads", "2"]) == 0
    a = {f.relative_to(cat_run): f.read_bytes() for f in cat_run.rglob("*") if f.is_file()}
    b = {f.relative_to(again): f.read_bytes() for f in again.rglob("*") if f.is_file()}
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    diff = sorted(str(k) for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    acceptance("C8 determinism", same,
               f"{len(a)} files byte-identical across two runs (1 vs 2 threads)" if same
               else f"differing files: {diff[:5]}")

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage, stats

from eghost.coincidence import (CoincidenceWindow, PairList, accidental_rate, estimate_offset, match_coincidences,
                                time_difference_histogram)
from eghost.config import build_config
from eghost.errors import BinningMismatch, IndexOutOfRange
from eghost.events import electron_stream
from eghost.optics import Mask, cat_mask
from eghost.reconstruction import (Binning, GhostImage, accumulate_ghost_image, binarize, demagnified_mask, dice,
                                   interior_region, raw_image, subtract_accidentals)
from eghost.source import BeamProfile, SimConfig, background_streams, simulate_run

B = Binning.centered(40.0, 0.5)


def disc_stream(n, seed=0, beam=BeamProfile()):
    pts = beam.sample(n, np.random.default_rng(seed))
    t = np.sort(np.random.default_rng(seed + 1).integers(0, 10**12, n))
    return electron_stream(t, pts[:, 0], pts[:, 1], 10**12)


def pairs_from(e, p, w):
    return match_coincidences(e, p, w)


@pytest.fixture(scope="module")
def cat_sim():
    cfg = build_config("cat-run")
    sim = replace(cfg.sim_config(), run_duration_s=60.0)
    mask, optics = cfg.mask(), cfg.optics()
    e, p, truth = simulate_run(sim, mask, optics)
    h = time_difference_histogram(e, p)
    w = CoincidenceWindow(int(round(estimate_offset(h)[0])), 25_000)
    return dict(e=e, p=p, h=h, w=w, mask=mask, optics=optics, pairs=match_coincidences(e, p, w))


# raw image

def test_raw_disc_diameter_and_empty_outside():
    e = disc_stream(1_000_000)
    img = raw_image(e, B)
    X, Y = B.centers()
    r = np.hypot(X, Y)
    # bins wholly outside the disc are empty
    assert img.counts[r > 15.5 + 0.5 * np.sqrt(2) * B.bin_um].sum() == 0
    # area of bins at least half as full as the interior, edge bins count by coverage
    lit = img.counts >= 0.5 * np.median(img.counts[img.counts > 0])
    diam = 2 * np.sqrt(lit.sum() * B.bin_um ** 2 / np.pi)
    assert abs(diam - 31.0) < 0.5
    assert img.total == len(e)


def test_raw_counts_uniform_inside_disc():
    n = 1_000_000
    img = raw_image(disc_stream(n, seed=3), B)
    X, Y = B.centers()
    inner = np.hypot(np.abs(X) + 0.25, np.abs(Y) + 0.25) <= 15.5  # whole bin inside the disc
    obs = img.counts[inner]
    expect = n * B.bin_um ** 2 / (np.pi * 15.5 ** 2)
    chi2 = np.sum((obs - expect) ** 2 / expect)
    assert stats.chi2.sf(chi2, obs.size) > 0.01


def test_single_event_single_bin():
    img = raw_image(electron_stream([5], [0.1], [-0.3], 10), B)
    assert img.total == 1 and np.count_nonzero(img.counts) == 1
    i, j = np.argwhere(img.counts)[0]
    assert B.flat_index(0.1, -0.3) == i * B.shape[1] + j


def test_out_of_grid_events_are_dropped():
    img = raw_image(electron_stream([1, 2], [0.0, 19.0], [0.0, 19.9], 10), B)
    assert img.total == 2
    img = raw_image(electron_stream([1], [0.0], [0.0], 10), Binning(0.5, (5.0, 5.0), (4, 4)))
    assert img.total == 0


def test_binning_validation():
    with pytest.raises(ValueError):
        Binning(0.0)


# ghost image

def test_empty_pairs_give_zero_image():
    e = disc_stream(100)
    empty = PairList(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    g = accumulate_ghost_image(empty, e, B)
    assert g.total == 0 and g.metadata["n_pairs"] == 0


def test_pair_index_out_of_range():
    e = disc_stream(10)
    bad = PairList(np.array([10]), np.array([0]), np.array([0]))
    with pytest.raises(IndexOutOfRange):
        accumulate_ghost_image(bad, e, B)
    bad = PairList(np.array([-1]), np.array([0]), np.array([0]))
    with pytest.raises(IndexOutOfRange):
        accumulate_ghost_image(bad, e, B)


def test_repeated_electron_counts_per_pair():
    e = electron_stream([100], [1.0], [1.0], 1000)
    pairs = PairList(np.array([0, 0, 0]), np.array([0, 1, 2]), np.zeros(3, np.int64))
    assert accumulate_ghost_image(pairs, e, B).total == 3


def test_lossless_ghost_equals_raw():
    sim = SimConfig(run_duration_s=2.0, electron_rate_hz=1e3, pair_yield=1.0, photon_detection_efficiency=1.0,
                    filter_pass_pair=1.0, filter_leak_nopair=0.0, dark_count_rate_hz=0.0,
                    jitter_sigma_ps=0.0, fixed_offset_ps=0.0, slice_duration_s=1.0, rng_seed=1)
    cfg = build_config("cat-run")
    e, p, _ = simulate_run(sim, None, cfg.optics())
    assert np.diff(e.t).min() > 0  # two electrons on one clock tick would pair twice
    g = accumulate_ghost_image(pairs_from(e, p, CoincidenceWindow(0, 1)), e, B)
    assert np.array_equal(g.counts, raw_image(e, B).counts)


def test_ghost_below_raw_in_one_to_one_regime():
    sim = SimConfig(run_duration_s=5.0, electron_rate_hz=2e3, pair_yield=0.3, dark_count_rate_hz=50.0,
                    slice_duration_s=1.0)
    cfg = build_config("cat-run")
    e, p, _ = simulate_run(sim, cfg.mask(), cfg.optics())
    pairs = pairs_from(e, p, CoincidenceWindow(-120_000, 25_000))
    assert np.unique(pairs.electron_index).size == len(pairs)  # no k-fold matches
    g = accumulate_ghost_image(pairs, e, B)
    assert np.all(g.counts <= raw_image(e, B).counts)


def test_merging_slices_equals_whole():
    e, p = background_streams(5e4, 5e4, 2.0, np.random.default_rng(5))
    pts = BeamProfile().sample(len(e), np.random.default_rng(6))
    e = electron_stream(e.t, pts[:, 0], pts[:, 1], e.header.duration_ps)
    pairs = pairs_from(e, p, CoincidenceWindow(0, 25_000))
    whole = accumulate_ghost_image(pairs, e, B)
    cuts = np.searchsorted(pairs.electron_index, [len(e) // 3, 2 * len(e) // 3])
    parts = []
    for a, b in zip([0, *cuts], [*cuts, len(pairs)]):
        sl = PairList(pairs.electron_index[a:b], pairs.photon_index[a:b], pairs.tau_ps[a:b])
        parts.append(accumulate_ghost_image(sl, e, B))
    merged = parts[0] + parts[1] + parts[2]
    assert np.array_equal(merged.counts, whole.counts)
    assert merged.metadata["n_pairs"] == len(pairs)


def test_merge_rejects_other_binning():
    a = GhostImage(np.zeros((80, 80), np.int64), B)
    b = GhostImage(np.zeros((40, 40), np.int64), Binning.centered(40.0, 1.0))
    with pytest.raises(BinningMismatch):
        a + b


# subtraction

def test_zero_subtraction_is_identity():
    raw = raw_image(disc_stream(5000), B)
    out = subtract_accidentals(raw, raw, 0.0)
    assert np.array_equal(out.counts, raw.counts.astype(float))
    assert out.metadata["accidentals_subtracted"] == 0.0


def test_subtraction_validation():
    raw = raw_image(disc_stream(100), B)
    with pytest.raises(BinningMismatch):
        subtract_accidentals(raw, raw_image(disc_stream(100), Binning.centered(40, 1.0)), 1.0)
    with pytest.raises(ValueError):
        subtract_accidentals(raw, GhostImage(np.zeros((80, 80)), B), 1.0)


def test_pure_accidental_residual_mean_is_zero():
    e, p = background_streams(5e4, 5e4, 20.0, np.random.default_rng(8))
    pts = BeamProfile().sample(len(e), np.random.default_rng(9))
    e = electron_stream(e.t, pts[:, 0], pts[:, 1], e.header.duration_ps)
    w = CoincidenceWindow(0, 25_000)
    ghost = accumulate_ghost_image(pairs_from(e, p, w), e, B)
    raw = raw_image(e, B)
    acc, _ = accidental_rate(time_difference_histogram(e, p, (-5_000_000, 5_000_000)), w)
    # without clamping the residual sums to (matched - predicted); compare its bin mean to Poisson noise
    resid = ghost.counts - acc * raw.counts / raw.total
    lit = raw.counts > 0
    mean = resid[lit].mean()
    noise = np.sqrt(ghost.counts[lit].sum()) / lit.sum()
    assert abs(mean) < 3 * noise
    sub = subtract_accidentals(ghost, raw, acc)
    assert np.all(sub.counts >= 0)


def test_subtraction_does_not_lower_dice(cat_sim):
    e = cat_sim["e"]
    raw = raw_image(e, B)
    ghost = accumulate_ghost_image(cat_sim["pairs"], e, B)
    acc, _ = accidental_rate(cat_sim["h"], cat_sim["w"])
    sub = subtract_accidentals(ghost, raw, acc)
    region = interior_region(raw)
    truth = demagnified_mask(cat_sim["mask"], cat_sim["optics"], B) & region
    before = dice(binarize(ghost.counts, region=region), truth)
    after = dice(binarize(sub.counts, region=region), truth)
    assert len(cat_sim["pairs"]) >= 100_000
    assert after >= before and after >= 0.8


def test_mask_shift_moves_ghost_centroid():
    cfg = build_config("cat-run")
    optics = cfg.optics()
    sim = replace(cfg.sim_config(), run_duration_s=30.0)
    base = cat_mask()
    shifted = Mask(base.raster, base.pixel_pitch_um, (base.origin_um[0] + base.pixel_pitch_um, base.origin_um[1]))
    cents = []
    for m in (base, shifted):
        e, p, _ = simulate_run(sim, m, optics)
        w = CoincidenceWindow(-120_000, 25_000)
        img = accumulate_ghost_image(match_coincidences(e, p, w), e, B)
        raw = raw_image(e, B)
        region = interior_region(raw)
        cents.append(np.array(ndimage.center_of_mass(binarize(img.counts, region=region))))
    # image X = -M x, so a +pitch mask shift moves the sample-plane pattern by -pitch / M
    move = (cents[1] - cents[0]) * B.bin_um
    assert abs(move[1] + base.pixel_pitch_um / optics.magnification) <= 2 * B.bin_um
    assert abs(move[0]) <= 2 * B.bin_um


# metrics

def test_dice_bounds():
    a = np.zeros((4, 4), bool)
    assert dice(a, a) == 1.0
    b = a.copy()
    b[0, 0] = True
    assert dice(a, b) == 0.0 and dice(b, b) == 1.0


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_dice_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((10, 10)) < 0.5, rng.random((10, 10)) < 0.3
    assert dice(a, b) == dice(b, a) and 0.0 <= dice(a, b) <= 1.0

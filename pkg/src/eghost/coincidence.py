"""Temporal correlation of an electron stream with a photon stream.

All times are integer picoseconds and ``tau = t_e - t_photon``. Both streams
must be sorted, so every per-electron search window maps to a contiguous run
of photon indices found with ``np.searchsorted``; expanding those runs gives
every pair exactly once without an all-pairs scan.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTotals, InsufficientSideband, InvalidRange, NoSignificantPeak
from .events import PS_PER_S, EventStream

DEFAULT_BIN_PS = 10_000
DEFAULT_RANGE_PS = (-1_000_000, 1_000_000)
DEFAULT_HALF_WIDTH_PS = 25_000


@dataclass(frozen=True, eq=False)
class TimeDifferenceHistogram:
    bin_width_ps: int
    tau_min_ps: int
    tau_max_ps: int
    counts: np.ndarray
    n_electrons: int
    n_photons: int
    duration_ps: int

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def edges_ps(self) -> np.ndarray:
        return self.tau_min_ps + self.bin_width_ps * np.arange(self.n_bins + 1, dtype=np.int64)

    @property
    def centers_ps(self) -> np.ndarray:
        return self.tau_min_ps + self.bin_width_ps * (np.arange(self.n_bins) + 0.5)

    @property
    def duration_s(self) -> float:
        return self.duration_ps / PS_PER_S

    def __eq__(self, other):
        if not isinstance(other, TimeDifferenceHistogram):
            return NotImplemented
        return (self.bin_width_ps, self.tau_min_ps, self.tau_max_ps, self.n_electrons, self.n_photons,
                self.duration_ps) == (other.bin_width_ps, other.tau_min_ps, other.tau_max_ps,
                                      other.n_electrons, other.n_photons, other.duration_ps) \
            and np.array_equal(self.counts, other.counts)

    def rebin(self, factor: int) -> "TimeDifferenceHistogram":
        if self.n_bins % factor:
            raise InvalidRange("rebin factor must divide the number of bins")
        c = self.counts.reshape(-1, factor).sum(axis=1)
        return TimeDifferenceHistogram(self.bin_width_ps * factor, self.tau_min_ps, self.tau_max_ps, c,
                                       self.n_electrons, self.n_photons, self.duration_ps)


@dataclass(frozen=True)
class CorrelationFunction:
    tau_ps: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class CoincidenceWindow:
    """Closed window ``|tau - offset| <= half_width`` in tau space."""

    offset_ps: int = 0
    half_width_ps: int = DEFAULT_HALF_WIDTH_PS

    def __post_init__(self):
        if not self.half_width_ps > 0:
            raise InvalidRange("window half width must be positive")


@dataclass(frozen=True, eq=False)
class PairList:
    electron_index: np.ndarray
    photon_index: np.ndarray
    tau_ps: np.ndarray

    def __len__(self) -> int:
        return int(self.electron_index.size)

    def __eq__(self, other):
        if not isinstance(other, PairList):
            return NotImplemented
        return (np.array_equal(self.electron_index, other.electron_index)
                and np.array_equal(self.photon_index, other.photon_index)
                and np.array_equal(self.tau_ps, other.tau_ps))

    def as_set(self) -> set:
        return set(zip(self.electron_index.tolist(), self.photon_index.tolist()))


def _expand(lo: np.ndarray, hi: np.ndarray):
    """Electron-relative indices and photon indices of all runs [lo, hi)."""
    n = hi - lo
    total = int(n.sum())
    e_idx = np.repeat(np.arange(lo.size, dtype=np.int64), n)
    if total == 0:
        return e_idx, np.zeros(0, np.int64)
    starts = np.cumsum(n) - n
    p_idx = np.arange(total, dtype=np.int64) - np.repeat(starts - lo, n)
    return e_idx, p_idx


def _chunks(n: int, size: int):
    for a in range(0, n, size):
        yield a, min(n, a + size)


def time_difference_histogram(e: EventStream, p: EventStream, tau_range=DEFAULT_RANGE_PS,
                              bin_width_ps: int = DEFAULT_BIN_PS, chunk: int = 1 << 18
                              ) -> TimeDifferenceHistogram:
    """Histogram of ``tau`` over all (electron, photon) pairs in ``[tau_min, tau_max)``.

    Bins are half-open, ``bin = (tau - tau_min) // bin_width``; the range must
    be a whole number (>= 4) of bins.
    """
    tau_min, tau_max = int(tau_range[0]), int(tau_range[1])
    bw = int(bin_width_ps)
    if bw <= 0 or tau_max <= tau_min or (tau_max - tau_min) % bw or (tau_max - tau_min) // bw < 4:
        raise InvalidRange(f"range {tau_range} with bin {bin_width_ps} ps is not a whole number (>=4) of bins")
    nb = (tau_max - tau_min) // bw
    counts = np.zeros(nb, np.int64)
    te, tp = e.t, p.t
    for a, b in _chunks(te.size, chunk):
        t = te[a:b]
        # tau in [tau_min, tau_max)  <=>  t_p in (t - tau_max, t - tau_min]
        lo = np.searchsorted(tp, t - tau_max, side="right")
        hi = np.searchsorted(tp, t - tau_min, side="right")
        ei, pi = _expand(lo, hi)
        tau = t[ei] - tp[pi]
        counts += np.bincount((tau - tau_min) // bw, minlength=nb)
    return TimeDifferenceHistogram(bw, tau_min, tau_max, counts, len(e), len(p),
                                   max(e.header.duration_ps, p.header.duration_ps))


def g2(h: TimeDifferenceHistogram) -> CorrelationFunction:
    """Normalise by the accidental expectation ``N_e N_p bin / T`` per bin."""
    if h.n_electrons <= 0 or h.n_photons <= 0 or h.duration_ps <= 0:
        raise DegenerateTotals("g2 needs non-zero event totals and duration")
    norm = h.n_electrons * h.n_photons * h.bin_width_ps / h.duration_ps
    c = h.counts.astype(float)
    return CorrelationFunction(h.centers_ps, c / norm, np.sqrt(c) / norm)


def _background(h: TimeDifferenceHistogram):
    k = max(1, h.n_bins // 4)
    side = np.concatenate([h.counts[:k], h.counts[-k:]]).astype(float)
    return side.mean(), side.std(ddof=1) if side.size > 1 else 0.0


def estimate_offset(h: TimeDifferenceHistogram):
    """Peak position in tau space and its standard error (both in ps).

    Background level and scatter come from the outer quarter of bins on each
    side. The estimate is the excess-weighted centroid of the bins whose
    excess exceeds half the peak excess.
    """
    bg, bg_sd = _background(h)
    c = h.counts.astype(float)
    peak = c.max()
    if not peak > bg + 5.0 * bg_sd:
        raise NoSignificantPeak(f"max bin {peak:g} vs background {bg:.3g} +- {bg_sd:.3g}")
    excess = c - bg
    sel = excess > 0.5 * (peak - bg)
    w = excess[sel]
    x = h.centers_ps[sel]
    centroid = float(np.sum(w * x) / np.sum(w))
    spread = math.sqrt(float(np.sum(w * (x - centroid) ** 2) / np.sum(w)))
    # bins are bin_width wide; include the within-bin variance
    spread = math.sqrt(spread ** 2 + h.bin_width_ps ** 2 / 12.0)
    return centroid, spread / math.sqrt(float(np.sum(w)))


def _match_block(te: np.ndarray, tp: np.ndarray, off: int, W: int):
    lo = np.searchsorted(tp, te - off - W, side="left")
    hi = np.searchsorted(tp, te - off + W, side="right")
    return _expand(lo, hi)


def match_coincidences(e: EventStream, p: EventStream, w: CoincidenceWindow,
                       threads: int = 1, n_slices: int = 1, chunk: int = 1 << 20) -> PairList:
    """All pairs with ``|t_e - t_p - offset| <= half_width``.

    Output is ordered by electron index, then photon index. With
    ``n_slices > 1`` the electron stream is split into contiguous slices, each
    matched against the photons inside its time span widened by the window;
    the merged result is identical to the single-slice one.
    """
    te, tp = e.t, p.t
    off, W = int(w.offset_ps), int(w.half_width_ps)
    bounds = np.linspace(0, te.size, max(1, n_slices) + 1).astype(np.int64)

    def work(k):
        a, b = int(bounds[k]), int(bounds[k + 1])
        if a == b:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        p0 = int(np.searchsorted(tp, te[a] - off - W, side="left"))
        p1 = int(np.searchsorted(tp, te[b - 1] - off + W, side="right"))
        sub = tp[p0:p1]
        eis, pis = [], []
        for c0, c1 in _chunks(b - a, chunk):
            ei, pi = _match_block(te[a + c0:a + c1], sub, off, W)
            eis.append(ei + a + c0)
            pis.append(pi + p0)
        return np.concatenate(eis), np.concatenate(pis)

    ks = range(bounds.size - 1)
    if threads > 1 and n_slices > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, ks))
    else:
        parts = [work(k) for k in ks]
    ei = np.concatenate([q[0] for q in parts]) if parts else np.zeros(0, np.int64)
    pi = np.concatenate([q[1] for q in parts]) if parts else np.zeros(0, np.int64)
    return PairList(ei, pi, te[ei] - tp[pi])


def accidental_rate(h: TimeDifferenceHistogram, w: CoincidenceWindow, min_counts: int = 100):
    """Expected accidental pairs inside the window, with its Poisson error.

    Uses the mean count density of bins lying wholly outside ``4 W`` of the
    offset, times the window width ``2 W``.
    """
    edges = h.edges_ps
    far = (edges[1:] <= w.offset_ps - 4 * w.half_width_ps) | (edges[:-1] >= w.offset_ps + 4 * w.half_width_ps)
    n = int(h.counts[far].sum())
    if n < min_counts:
        raise InsufficientSideband(f"only {n} sideband counts (need {min_counts})")
    span = far.sum() * h.bin_width_ps
    scale = 2 * w.half_width_ps / span
    return n * scale, math.sqrt(n) * scale


def expected_accidentals(n_e: int, n_p: int, w: CoincidenceWindow, duration_ps: int) -> float:
    """Analytic accidental count ``N_e N_p 2W / T`` for independent streams."""
    return n_e * n_p * 2.0 * w.half_width_ps / duration_ps

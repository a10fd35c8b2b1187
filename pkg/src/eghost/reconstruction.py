"""Ghost images from matched pairs, raw electron images, background handling."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .coincidence import PairList
from .errors import BinningMismatch, IndexOutOfRange
from .events import EventStream


@dataclass(frozen=True)
class Binning:
    """Square bins in the sample plane; ``shape`` is (ny, nx)."""

    bin_um: float = 0.5
    origin_um: tuple = (-20.0, -20.0)
    shape: tuple = (80, 80)

    def __post_init__(self):
        if not self.bin_um > 0:
            raise ValueError("bin size must be positive")
        object.__setattr__(self, "origin_um", tuple(float(v) for v in self.origin_um))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))

    @classmethod
    def centered(cls, field_um: float = 40.0, bin_um: float = 0.5) -> "Binning":
        n = int(round(field_um / bin_um))
        return cls(bin_um, (-0.5 * n * bin_um, -0.5 * n * bin_um), (n, n))

    def centers(self):
        """(X, Y) meshgrids of bin centres, each shaped like the image."""
        ny, nx = self.shape
        x = self.origin_um[0] + (np.arange(nx) + 0.5) * self.bin_um
        y = self.origin_um[1] + (np.arange(ny) + 0.5) * self.bin_um
        return np.meshgrid(x, y)

    def center_points(self) -> np.ndarray:
        X, Y = self.centers()
        return np.stack([X, Y], axis=-1)

    def flat_index(self, x, y) -> np.ndarray:
        """Row-major bin index for each position, -1 outside the grid."""
        ny, nx = self.shape
        j = np.floor((np.asarray(x, float) - self.origin_um[0]) / self.bin_um)
        i = np.floor((np.asarray(y, float) - self.origin_um[1]) / self.bin_um)
        ok = (i >= 0) & (i < ny) & (j >= 0) & (j < nx)
        out = np.full(j.shape, -1, np.int64)
        out[ok] = (i[ok] * nx + j[ok]).astype(np.int64)
        return out


@dataclass(frozen=True, eq=False)
class GhostImage:
    """Counts on a sample-plane grid plus exposure metadata.

    ``counts[i, j]`` is row ``i`` (y) and column ``j`` (x).
    """

    counts: np.ndarray
    binning: Binning
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, GhostImage):
            return NotImplemented
        return (self.binning == other.binning and self.metadata == other.metadata
                and self.counts.dtype == other.counts.dtype and np.array_equal(self.counts, other.counts))

    @property
    def total(self):
        return self.counts.sum()

    def __add__(self, other: "GhostImage") -> "GhostImage":
        if self.binning != other.binning:
            raise BinningMismatch("cannot merge images with different binning")
        meta = dict(self.metadata)
        for k in ("n_pairs", "n_events"):
            if k in meta and k in other.metadata:
                meta[k] = meta[k] + other.metadata[k]
        return GhostImage(self.counts + other.counts, self.binning, meta)


def _histogram(x, y, binning: Binning) -> np.ndarray:
    idx = binning.flat_index(x, y)
    idx = idx[idx >= 0]
    ny, nx = binning.shape
    return np.bincount(idx, minlength=ny * nx).reshape(ny, nx).astype(np.int64)


def raw_image(e: EventStream, binning: Optional[Binning] = None) -> GhostImage:
    """2D histogram of every recorded electron."""
    binning = binning or Binning.centered()
    counts = _histogram(e.x, e.y, binning)
    return GhostImage(counts, binning, {"kind": "raw", "n_events": len(e),
                                        "duration_s": e.duration_s})


def accumulate_ghost_image(pairs: PairList, e: EventStream, binning: Optional[Binning] = None,
                           window=None) -> GhostImage:
    """Histogram of electron positions over matched pairs (one count per pair)."""
    binning = binning or Binning.centered()
    ei = pairs.electron_index
    if ei.size and (ei.min() < 0 or ei.max() >= len(e)):
        raise IndexOutOfRange("pair electron index outside the electron stream")
    counts = _histogram(e.x[ei], e.y[ei], binning)
    meta = {"kind": "ghost", "n_pairs": len(pairs), "duration_s": e.duration_s}
    if window is not None:
        meta["window_offset_ps"] = int(window.offset_ps)
        meta["window_half_width_ps"] = int(window.half_width_ps)
    return GhostImage(counts, binning, meta)


def subtract_accidentals(ghost: GhostImage, raw: GhostImage, accidental_pairs: float) -> GhostImage:
    """Remove the accidental floor, spread like the raw electron image.

    Returns a float image clamped at zero; the metadata records the amount
    subtracted.
    """
    if ghost.binning != raw.binning:
        raise BinningMismatch("ghost and raw images use different binning")
    total = float(raw.counts.sum())
    if not total > 0:
        raise ValueError("raw image is empty")
    out = ghost.counts.astype(float)
    if accidental_pairs:
        out = out - accidental_pairs * raw.counts / total
    out = np.clip(out, 0.0, None)
    meta = dict(ghost.metadata)
    meta["kind"] = "ghost-subtracted"
    meta["accidentals_subtracted"] = float(accidental_pairs)
    return GhostImage(out, ghost.binning, meta)


# overlap metrics

def binarize(img: np.ndarray, smooth_bins: float = 1.0, region: Optional[np.ndarray] = None) -> np.ndarray:
    """Otsu threshold of the Gaussian-smoothed image (presentation/metrics only)."""
    from skimage.filters import threshold_otsu

    a = np.asarray(img, dtype=float)
    if smooth_bins > 0:
        a = ndimage.gaussian_filter(a, smooth_bins, mode="nearest")
    vals = a[region] if region is not None else a
    thr = threshold_otsu(vals)
    out = a > thr
    if region is not None:
        out &= region
    return out


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    s = a.sum() + b.sum()
    return 1.0 if s == 0 else 2.0 * np.count_nonzero(a & b) / s


def beam_region(binning: Binning, beam, inset_um: float = 0.0) -> np.ndarray:
    """Bins whose centre lies inside the beam disc shrunk by ``inset_um``."""
    pts = binning.center_points()
    d = pts - np.asarray(beam.center_um)
    return np.einsum("...i,...i->...", d, d) <= (beam.radius_um - inset_um) ** 2


def demagnified_mask(mask, optics, binning: Binning) -> np.ndarray:
    """Ground-truth mask seen from the sample plane (bin centres traced forward)."""
    from .optics import trace_to_image, transmit

    return transmit(mask, trace_to_image(binning.center_points(), optics))


def interior_region(raw: GhostImage, erode_bins: int = 1) -> np.ndarray:
    """Well-illuminated bins of a raw image, eroded to drop partial edge bins."""
    c = raw.counts.astype(float)
    pos = c[c > 0]
    if pos.size == 0:
        return np.zeros(c.shape, bool)
    reg = c >= 0.5 * np.median(pos)
    reg = ndimage.binary_fill_holes(reg)
    if erode_bins:
        reg = ndimage.binary_erosion(reg, iterations=erode_bins)
    return reg

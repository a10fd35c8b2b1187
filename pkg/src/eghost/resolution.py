"""Resolution from a grating ghost image.

The model is the ideal grating target traced back into the sample plane
through the optics (lines come out bowed by the mirror), blurred by an
isotropic Gaussian PSF and scaled plus a flat floor. Parameters are fitted
by minimising the summed absolute residual with Nelder-Mead.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from .errors import ConfigInvalid
from .optics import OpticalSystem, trace_to_image
from .reconstruction import Binning, GhostImage

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def fwhm(sigma):
    """Full width at half maximum of a Gaussian with standard deviation ``sigma``."""
    if np.any(np.asarray(sigma) < 0):
        raise ValueError("sigma must be non-negative")
    return FWHM_PER_SIGMA * sigma


@dataclass(frozen=True)
class GratingSpec:
    """Line grating in the photon image plane.

    Open (transmitting) over the first ``duty`` of each period along the
    direction at ``angle_rad`` from the image X axis.
    """

    period_um: float = 60.0
    duty: float = 0.5
    angle_rad: float = 0.0
    phase_um: float = 0.0

    def __post_init__(self):
        if not self.period_um > 0:
            raise ConfigInvalid("grating period must be positive")
        if not 0 < self.duty < 1:
            raise ConfigInvalid("duty cycle must lie in (0, 1)")


@dataclass(frozen=True)
class FitParams:
    """Free parameters of the grating model.

    shift_um is the sample-plane displacement of the target pattern;
    rotation_rad rotates the electron-image axes about the grid origin;
    axial_offset_um moves the sample along the mirror axis relative to the
    focus, which changes only the distortion pattern.
    """

    sigma_um: float = 0.87
    amplitude: float = 1.0
    baseline: float = 0.0
    shift_um: tuple = (0.0, 0.0)
    rotation_rad: float = 0.0
    axial_offset_um: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shift_um", tuple(float(v) for v in self.shift_um))

    def to_vector(self) -> np.ndarray:
        return np.array([self.sigma_um, self.amplitude, self.baseline, *self.shift_um,
                         self.rotation_rad, self.axial_offset_um], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "FitParams":
        v = [float(x) for x in v]
        return cls(v[0], v[1], v[2], (v[3], v[4]), v[5], v[6])


@dataclass
class FitResult:
    params: FitParams
    fwhm_um: float
    residual_l1: float
    iterations: int
    converged: bool
    sigma_uncertainty_um: float = float("nan")
    bootstrap_sigmas: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def fwhm_uncertainty_um(self) -> float:
        return FWHM_PER_SIGMA * self.sigma_uncertainty_um


def _square_integral(t: np.ndarray, duty: float) -> np.ndarray:
    """Antiderivative of the unit-period square wave (open on [0, duty))."""
    n = np.floor(t)
    return duty * n + np.minimum(t - n, duty)


def _phase(img: np.ndarray, spec: GratingSpec) -> np.ndarray:
    c, s = math.cos(spec.angle_rad), math.sin(spec.angle_rad)
    return (img[..., 0] * c + img[..., 1] * s - spec.phase_um) / spec.period_um


def _sample_points(binning: Binning, rotation_rad: float) -> np.ndarray:
    pts = binning.center_points()
    if rotation_rad:
        c, s = math.cos(rotation_rad), math.sin(rotation_rad)
        pts = np.stack([c * pts[..., 0] - s * pts[..., 1], s * pts[..., 0] + c * pts[..., 1]], -1)
    return pts


def ideal_target_image(spec: GratingSpec, sys: OpticalSystem, binning: Binning,
                       shift_um=(0.0, 0.0), rotation_rad: float = 0.0, axial_offset_um: float = 0.0,
                       antialias: bool = False) -> np.ndarray:
    """Grating transmission seen from each sample-plane bin.

    Each bin centre is traced to the image plane and looked up in the
    analytic square wave, giving values in {0, 1}. With ``antialias`` the
    square wave is averaged over the bin footprint instead (box filter along
    the local grating direction), which makes the image continuous in every
    geometric parameter.
    """
    pts = _sample_points(binning, rotation_rad)
    m = sys.magnification
    off = m * np.asarray(shift_um, dtype=float)
    img = trace_to_image(pts, sys, axial_offset_um) + off
    s = _phase(img, spec)
    if not antialias:
        return ((s - np.floor(s)) < spec.duty).astype(float)
    h = 1e-3
    sx = _phase(trace_to_image(pts + [h, 0.0], sys, axial_offset_um, check=False) + off, spec)
    sy = _phase(trace_to_image(pts + [0.0, h], sys, axial_offset_um, check=False) + off, spec)
    w = binning.bin_um * np.hypot(sx - s, sy - s) / h
    w = np.maximum(w, 1e-12)
    return (_square_integral(s + 0.5 * w, spec.duty) - _square_integral(s - 0.5 * w, spec.duty)) / w


def _kernel(sigma_px: float, truncate: float) -> np.ndarray:
    r = int(math.ceil(truncate * sigma_px))
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma_px) ** 2)
    return k / k.sum()


def blur(img: np.ndarray, sigma_um: float, pixel_um: float = 1.0, truncate: float = 5.0) -> np.ndarray:
    """Separable Gaussian blur with the kernel renormalised at the edges.

    The kernel is cut at ``truncate`` sigma; near the border the weights of
    in-image pixels are rescaled to sum to one.
    """
    if sigma_um < 0:
        raise ValueError("sigma must be non-negative")
    a = np.asarray(img, dtype=float)
    if sigma_um == 0:
        return a.copy()
    k = _kernel(sigma_um / pixel_um, truncate)
    out = ndimage.correlate1d(a, k, axis=0, mode="constant")
    out = ndimage.correlate1d(out, k, axis=1, mode="constant")
    n0 = ndimage.correlate1d(np.ones(a.shape[0]), k, mode="constant")
    n1 = ndimage.correlate1d(np.ones(a.shape[1]), k, mode="constant")
    return out / np.outer(n0, n1)


def model_image(params: FitParams, spec: GratingSpec, sys: OpticalSystem, binning: Binning) -> np.ndarray:
    ideal = ideal_target_image(spec, sys, binning, params.shift_um, params.rotation_rad,
                               params.axial_offset_um, antialias=True)
    return params.amplitude * blur(ideal, params.sigma_um, binning.bin_um) + params.baseline


# fitting

_STEPS = np.array([0.15, 0.1, 0.1, 0.3, 0.3, 0.01, 10.0])


def _objective(data, roi, spec, sys, binning):
    def f(v):
        if v[0] <= 0 or v[1] <= 0 or abs(v[6]) >= 0.5 * sys.traceable_radius_um:
            return np.inf
        m = model_image(FitParams.from_vector(v), spec, sys, binning)
        return float(np.abs(data - m)[roi].sum())
    return f


def _simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    steps = _STEPS.copy()
    steps[0] *= max(x0[0], 0.1)
    steps[1] *= max(abs(x0[1]), 1e-3)
    steps[2] = max(abs(x0[2]) * 0.1, 0.05 * abs(x0[1]), 1e-3)
    sim = np.tile(x0, (x0.size + 1, 1))
    for i in range(x0.size):
        sim[i + 1, i] += steps[i] * scale
    return sim


def _nelder_mead(f, x0, max_iter, rel_tol, scale=1.0, max_restarts=8):
    """Nelder-Mead, restarted with a fresh simplex at each converged point.

    A simplex can collapse inside a flat valley long before reaching its
    floor; a restart that improves by less than ``rel_tol`` ends the loop.
    """
    x = np.asarray(x0, dtype=float)
    fx = f(x)
    if fx == 0.0:
        return x, 0.0, 0, True
    nit, ok = 0, False
    for _ in range(max_restarts + 1):
        left = max_iter - nit
        if left <= 0:
            ok = False
            break
        res = minimize(f, x, method="Nelder-Mead",
                       options=dict(maxiter=left, maxfev=4 * left, xatol=np.inf,
                                    fatol=rel_tol * fx, initial_simplex=_simplex(x, scale)))
        nit += int(res.nit)
        ok = bool(res.success)
        gain = fx - float(res.fun)
        if res.fun < fx:
            x, fx = res.x, float(res.fun)
        if not ok or gain <= rel_tol * abs(fx) or fx == 0.0:
            break
    return x, fx, nit, ok


def _perturbed(init: FitParams, rng: np.random.Generator, k: int) -> np.ndarray:
    x = init.to_vector()
    factor = (0.8, 1.25)[k % 2]
    x[0] *= factor
    x[3:5] += rng.normal(0.0, 0.2, 2)
    x[5] += rng.normal(0.0, 0.005)
    return x


def fit(data: GhostImage, spec: GratingSpec, sys: OpticalSystem, init: FitParams,
        roi: Optional[np.ndarray] = None, n_bootstrap: int = 50, restarts: int = 3,
        max_iter: int = 2000, rel_tol: float = 1e-6, rng: Optional[np.random.Generator] = None,
        bootstrap_max_iter: int = 800, threads: int = 1) -> FitResult:
    """Least-absolute-error fit of the blurred grating model to a ghost image.

    ``roi`` restricts the objective to a boolean subset of bins (e.g. the
    illuminated disc). The first start is ``init``; further starts perturb
    it, and the best is kept. The sigma uncertainty is the standard
    deviation of refits to multinomial resamples of the counts, which is the
    same as resampling the matched pairs. Non-convergence is reported in the
    result flag; the best point found is still returned.
    """
    if init.sigma_um <= 0:
        raise ConfigInvalid("initial sigma must be positive")
    y = np.asarray(data.counts, dtype=float)
    if y.sum() <= 0:
        raise ValueError("ghost image is empty")
    roi = np.ones(y.shape, bool) if roi is None else np.asarray(roi, bool)
    rng = rng or np.random.default_rng(0)
    binning = data.binning

    f = _objective(y, roi, spec, sys, binning)
    starts = [init.to_vector()] + [_perturbed(init, rng, k) for k in range(max(0, restarts - 1))]
    best = None
    iters = 0
    for x0 in starts:
        x, fx, nit, ok = _nelder_mead(f, x0, max_iter, rel_tol)
        iters += nit
        if best is None or fx < best[1]:
            best = (x, fx, ok)
        if fx == 0.0:
            break
    x, fx, ok = best
    params = FitParams.from_vector(x)

    sig = np.zeros(0)
    if n_bootstrap > 0:
        n = int(round(y.sum()))
        p = (y / y.sum()).ravel()
        resamples = [rng.multinomial(n, p).reshape(y.shape).astype(float) for _ in range(n_bootstrap)]

        def refit(yb):
            fb = _objective(yb, roi, spec, sys, binning)
            return _nelder_mead(fb, x, bootstrap_max_iter, rel_tol, scale=0.5)[0][0]

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                sig = np.array(list(ex.map(refit, resamples)))
        else:
            sig = np.array([refit(r) for r in resamples])
    unc = float(np.std(sig, ddof=1)) if sig.size > 1 else float("nan")
    return FitResult(params, float(fwhm(params.sigma_um)), fx, iters, ok, unc, sig)

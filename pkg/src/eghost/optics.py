"""Geometric photon optics: parabolic mirror, thin lens and image-plane masks.

Coordinate frame (all lengths in µm unless a name says otherwise):

* the mirror focus is the origin; the paraboloid opens along the collection
  axis ``a`` (default +z) and its surface is ``r**2 = 4 f (z + f)`` with ``r``
  the distance to the axis and ``z`` the axial coordinate;
* the electron beam runs along ``b`` (default +y, perpendicular to ``a``)
  and passes through a circular hole in the mirror at ``2 f b``;
* the TEM sample plane is perpendicular to the beam; a sample-plane point
  ``(x, y)`` is the 3D point ``x a + y e1`` with ``e1 = b x a``;
* the image plane is perpendicular to ``a`` with coordinates ``(X, Y)`` along
  ``b`` and ``e1``, centred on the image of the focus. With this choice the
  first-order map is ``(X, Y) = -M (x, y)``.

Point-to-point mapping follows the chief ray, taken as the ray emitted along
the centre of the selected collection cone (the beam axis). It meets the
mirror at a point that moves with the source, so straight lines in the sample
plane come out bowed in the image plane. The annular pupil is centred on the
beam hole, so the chief ray itself is obscured, as in any centrally obscured
system; it is still the reference ray for distortion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from types import SimpleNamespace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (ConfigInvalid, HoleClipped, NoConvergence, NoIntersection,
                     OpticsOutOfRange, OutsideNA)

UM_PER_MM = 1000.0


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ParabolicMirror:
    focal_length_um: float = 750.0
    numerical_aperture: float = 0.58
    beam_hole_diameter_um: float = 300.0
    axis: tuple = (0.0, 0.0, 1.0)
    beam_axis: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if not self.focal_length_um > 0:
            raise ConfigInvalid("mirror focal length must be positive")
        if not 0 < self.numerical_aperture < 1:
            raise ConfigInvalid("numerical aperture must lie in (0, 1)")
        if self.beam_hole_diameter_um < 0:
            raise ConfigInvalid("beam hole diameter must be non-negative")
        a, b = _unit(self.axis), _unit(self.beam_axis)
        if abs(a @ b) > 1e-12:
            raise ConfigInvalid("beam axis must be perpendicular to the collection axis")
        object.__setattr__(self, "axis", tuple(a))
        object.__setattr__(self, "beam_axis", tuple(b))

    @property
    def a(self) -> np.ndarray:
        return np.array(self.axis)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.beam_axis)

    @property
    def e1(self) -> np.ndarray:
        return np.cross(self.b, self.a)

    @property
    def aperture_half_angle(self) -> float:
        """Half-angle (rad) of the collection cone about the beam axis."""
        return math.asin(self.numerical_aperture)

    @property
    def pupil_center(self) -> np.ndarray:
        """Mirror surface point straight above the focus on the beam axis."""
        return 2.0 * self.focal_length_um * self.b

    def surface(self, p) -> np.ndarray:
        """Implicit surface function, zero on the mirror, negative inside."""
        p = np.asarray(p, dtype=float)
        f = self.focal_length_um
        z = p @ self.a
        return np.einsum("...i,...i->...", p, p) - z * z - 4.0 * f * z - 4.0 * f * f

    def normal(self, p) -> np.ndarray:
        """Unit surface normal (pointing away from the focus side)."""
        p = np.asarray(p, dtype=float)
        a = self.a
        z = (p @ a)[..., None]
        g = 2.0 * p - 2.0 * z * a - 4.0 * self.focal_length_um * a
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", tuple(np.asarray(self.origin, dtype=float)))
        object.__setattr__(self, "direction", tuple(d / n))

    @property
    def o(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def d(self) -> np.ndarray:
        return np.array(self.direction)


def intersect(ray: Ray, mirror: ParabolicMirror) -> np.ndarray:
    """First forward intersection of a ray with the paraboloid."""
    o, d, a = ray.o, ray.d, mirror.a
    f = mirror.focal_length_um
    da, oa = d @ a, o @ a
    A = 1.0 - da * da
    B = 2.0 * (o @ d) - 2.0 * oa * da - 4.0 * f * da
    C = o @ o - oa * oa - 4.0 * f * oa - 4.0 * f * f
    eps = 1e-9
    if abs(A) < 1e-14:
        roots = [-C / B] if B != 0 else []
    else:
        disc = B * B - 4.0 * A * C
        if disc < 0:
            raise NoIntersection("ray misses the paraboloid")
        q = -0.5 * (B + math.copysign(math.sqrt(disc), B))
        roots = [q / A, C / q] if q != 0 else [0.0]
    roots = sorted(t for t in roots if t > eps)
    if not roots:
        raise NoIntersection("no forward intersection with the paraboloid")
    return o + roots[0] * d


def reflect(ray: Ray, mirror: ParabolicMirror, clip: bool = True) -> Ray:
    """Reflect a ray off the paraboloid.

    The hit point must lie inside the NA cone about the beam axis (measured
    from the focus) and outside the beam hole unless ``clip`` is False.
    """
    s = intersect(ray, mirror)
    if clip:
        b = mirror.b
        along = s @ b
        radial = np.linalg.norm(s - along * b)
        if radial < 0.5 * mirror.beam_hole_diameter_um and along > 0:
            raise HoleClipped("ray passes through the beam hole")
        cos_psi = along / np.linalg.norm(s)
        if cos_psi < math.cos(mirror.aperture_half_angle):
            raise OutsideNA("hit point outside the collection cone")
    n = mirror.normal(s)
    d = ray.d
    r = d - 2.0 * (d @ n) * n
    return Ray(tuple(s), tuple(r / np.linalg.norm(r)))


@dataclass(frozen=True)
class OpticalSystem:
    """Mirror, thin lens and image plane.

    ``mirror_to_lens_mm`` is the axial distance from the focal plane to the
    lens; ``lens_to_image_mm`` places the image plane behind the lens.
    ``selection_aperture_mm`` is the radius of the angle-selecting stop; it is
    carried for bookkeeping and does not change the chief-ray mapping.
    """

    mirror: ParabolicMirror = field(default_factory=ParabolicMirror)
    lens_focal_length_mm: float = 150.0
    mirror_to_lens_mm: float = 1.5
    lens_to_image_mm: float = 24.0
    selection_aperture_mm: float = 1.0
    name: str = ""

    def __post_init__(self):
        for key in ("lens_focal_length_mm", "mirror_to_lens_mm", "lens_to_image_mm",
                    "selection_aperture_mm"):
            if not getattr(self, key) > 0:
                raise ConfigInvalid(f"{key} must be positive")
        m = self.magnification
        if not (math.isfinite(m) and m > 1):
            raise ConfigInvalid(f"magnification must be finite and > 1, got {m}")

    @cached_property
    def magnification(self) -> float:
        return effective_magnification(self)

    @property
    def traceable_radius_um(self) -> float:
        return 0.25 * self.mirror.focal_length_um


def _trace_raw(points: np.ndarray, sys, axial_offset: float = 0.0) -> np.ndarray:
    m = sys.mirror
    a, b, e1 = m.a, m.b, m.e1
    f = m.focal_length_um
    pts = np.asarray(points, dtype=float)
    pa = pts[..., 0] + axial_offset
    p1 = pts[..., 1]
    # chief ray leaves the source along +b and hits the paraboloid at
    # (p1, sqrt(4f(pa + f) - p1^2), pa) in (e1, b, a) components
    sb = np.sqrt(4.0 * f * (pa + f) - p1 * p1)
    g1, gb, ga = 2.0 * p1, 2.0 * sb, np.full_like(sb, -4.0 * f)
    gn = np.sqrt(g1 * g1 + gb * gb + ga * ga)
    n1, nb, na = g1 / gn, gb / gn, ga / gn
    # d' = b - 2 (b.n) n
    d1 = -2.0 * nb * n1
    db = 1.0 - 2.0 * nb * nb
    da = -2.0 * nb * na
    z_lens = sys.mirror_to_lens_mm * UM_PER_MM
    t = (z_lens - pa) / da
    h1 = p1 + t * d1
    hb = sb + t * db
    F = sys.lens_focal_length_mm * UM_PER_MM
    L2 = sys.lens_to_image_mm * UM_PER_MM
    s1 = d1 / da - h1 / F
    sb_ = db / da - hb / F
    return np.stack([hb + L2 * sb_, h1 + L2 * s1], axis=-1)


def trace_to_image(point, sys: OpticalSystem, axial_offset: float = 0.0, check: bool = True) -> np.ndarray:
    """Map sample-plane point(s) (..., 2) in µm to image-plane position(s) in µm.

    ``axial_offset`` displaces the sample along the collection axis relative
    to the mirror focus; the result stays referenced to the image of the
    displaced origin, so the offset changes only the distortion pattern.
    Raises OpticsOutOfRange for points farther than f/4 from the focus.
    """
    pts = np.asarray(point, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of 2")
    if check:
        shifted = pts + [axial_offset, 0.0]
        r2 = np.einsum("...i,...i->...", shifted, shifted)
        if np.any(~np.isfinite(r2)) or np.any(r2 >= sys.traceable_radius_um ** 2):
            raise OpticsOutOfRange("point outside the traceable region")
    ref = _trace_raw(np.zeros(2), sys, axial_offset)
    return _trace_raw(pts, sys, axial_offset) - ref


def _jacobian(pts: np.ndarray, sys: OpticalSystem, step: float = 1e-3) -> np.ndarray:
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    jx = (trace_to_image(pts + ex, sys, check=False) - trace_to_image(pts - ex, sys, check=False)) / (2 * step)
    jy = (trace_to_image(pts + ey, sys, check=False) - trace_to_image(pts - ey, sys, check=False)) / (2 * step)
    return np.stack([jx, jy], axis=-1)  # [..., image component, sample component]


def jacobian_determinant(point, sys: OpticalSystem, step: float = 1e-3) -> np.ndarray:
    return np.linalg.det(_jacobian(np.asarray(point, dtype=float), sys, step))


def back_project(image_point, sys: OpticalSystem, tol: float = 1e-4, max_iter: int = 100) -> np.ndarray:
    """Invert trace_to_image by damped Newton with a finite-difference Jacobian.

    Works on a single point or an (..., 2) batch. Raises NoConvergence carrying
    the worst residual if any point fails to reach ``tol`` µm.
    """
    target = np.asarray(image_point, dtype=float)
    shape = target.shape
    target = target.reshape(-1, 2)
    x = -target / sys.magnification
    r = trace_to_image(x, sys, check=False) - target
    err = np.linalg.norm(r, axis=-1)
    for _ in range(max_iter):
        active = err >= tol
        if not active.any():
            break
        J = _jacobian(x[active], sys)
        step = np.linalg.solve(J, -r[active][..., None])[..., 0]
        lam = np.ones(step.shape[0])
        xa, ea = x[active], err[active]
        for _ in range(30):
            trial = xa + lam[:, None] * step
            rt = trace_to_image(trial, sys, check=False) - target[active]
            et = np.linalg.norm(rt, axis=-1)
            worse = ~(et < ea)
            if not worse.any():
                break
            lam[worse] *= 0.5
        improved = et < ea
        idx = np.flatnonzero(active)[improved]
        x[idx] = trial[improved]
        r[idx] = rt[improved]
        err[idx] = et[improved]
        if not improved.any():
            break
    if np.any(err >= tol):
        raise NoConvergence(float(err.max()))
    if np.any(np.einsum("ij,ij->i", x, x) >= sys.traceable_radius_um ** 2):
        raise OpticsOutOfRange("back-projected point outside the traceable region")
    return x.reshape(shape)


def effective_magnification(sys: OpticalSystem, step: float = 1e-2) -> float:
    """Mean of |dX/du| and |dY/dv| at the focus by central differences."""
    o = np.zeros(2)
    dx = _trace_raw(o + [step, 0], sys) - _trace_raw(o - [step, 0], sys)
    dy = _trace_raw(o + [0, step], sys) - _trace_raw(o - [0, step], sys)
    return 0.5 * (abs(dx[0]) + abs(dy[1])) / (2 * step)


def solve_lens_to_image(target_m: float, mirror: Optional[ParabolicMirror] = None,
                        lens_focal_length_mm: float = 150.0, mirror_to_lens_mm: float = 1.5,
                        **kw) -> OpticalSystem:
    """Build an OpticalSystem whose effective magnification equals ``target_m``."""
    mirror = mirror or ParabolicMirror()

    def resid(L2):
        geom = SimpleNamespace(mirror=mirror, lens_focal_length_mm=lens_focal_length_mm,
                               mirror_to_lens_mm=mirror_to_lens_mm, lens_to_image_mm=L2)
        return effective_magnification(geom) - target_m

    lo, hi = 1e-3, 0.999 * lens_focal_length_mm
    if resid(lo) * resid(hi) > 0:
        raise ConfigInvalid(f"magnification {target_m} unreachable with this lens geometry")
    L2 = brentq(resid, lo, hi, xtol=1e-12, rtol=1e-14)
    return OpticalSystem(mirror, lens_focal_length_mm, mirror_to_lens_mm, L2, **kw)


PRESET_MAGNIFICATION = {"grating-run": 16.0, "cat-run": 19.0}


def preset(name: str) -> OpticalSystem:
    try:
        m = PRESET_MAGNIFICATION[name]
    except KeyError:
        raise ConfigInvalid(f"unknown optics preset {name!r}") from None
    return solve_lens_to_image(m, name=name)


# masks

@dataclass(frozen=True, eq=False)
class Mask:
    """Binary transmission raster in the image plane.

    ``raster[i, j]`` is True where open; row ``i`` covers
    ``(origin_y + i*pitch, origin_y + (i+1)*pitch]`` and column ``j`` the same
    along x, so row 0 is the lowest y.
    """

    raster: np.ndarray
    pixel_pitch_um: float
    origin_um: tuple = (0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        r = np.array(self.raster, dtype=bool, copy=True)
        if r.ndim != 2 or r.size == 0:
            raise ConfigInvalid("mask raster must be a non-empty 2D grid")
        if not self.pixel_pitch_um > 0:
            raise ConfigInvalid("mask pixel pitch must be positive")
        r.flags.writeable = False
        object.__setattr__(self, "raster", r)
        object.__setattr__(self, "origin_um", tuple(float(v) for v in self.origin_um))

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (np.array_equal(self.raster, other.raster) and self.pixel_pitch_um == other.pixel_pitch_um
                and self.origin_um == other.origin_um and self.name == other.name)

    @property
    def extent_um(self) -> tuple:
        ny, nx = self.raster.shape
        ox, oy = self.origin_um
        p = self.pixel_pitch_um
        return (ox, ox + nx * p, oy, oy + ny * p)

    @property
    def open_fraction(self) -> float:
        return float(self.raster.mean())

    def mirrored(self, axis: str = "x") -> "Mask":
        """Mask reflected about the image-plane line x = 0 (or y = 0)."""
        x0, x1, y0, y1 = self.extent_um
        if axis == "x":
            return Mask(self.raster[:, ::-1], self.pixel_pitch_um, (-x1, y0), self.name)
        return Mask(self.raster[::-1, :], self.pixel_pitch_um, (x0, -y1), self.name)

    @classmethod
    def open(cls, half_width_um: float = 2000.0, pitch_um: float = 10.0) -> "Mask":
        n = int(math.ceil(2 * half_width_um / pitch_um))
        return cls(np.ones((n, n), bool), pitch_um, (-half_width_um, -half_width_um), "open")


def transmit(mask: Optional[Mask], image_point) -> np.ndarray:
    """True where the raster cell containing the point is open.

    A point exactly on the edge between two cells belongs to the one with
    the lower index, i.e. cell ``j`` covers ``(origin + j*pitch,
    origin + (j+1)*pitch]``. Points outside the raster are blocked.
    ``mask=None`` means no mask in the beam.
    """
    pts = np.asarray(image_point, dtype=float)
    if mask is None:
        return np.ones(pts.shape[:-1], bool)
    ox, oy = mask.origin_um
    p = mask.pixel_pitch_um
    with np.errstate(invalid="ignore"):
        j = np.ceil((pts[..., 0] - ox) / p) - 1
        i = np.ceil((pts[..., 1] - oy) / p) - 1
    ny, nx = mask.raster.shape
    inside = (i >= 0) & (i < ny) & (j >= 0) & (j < nx)
    out = np.zeros(pts.shape[:-1], bool)
    out[inside] = mask.raster[i[inside].astype(np.intp), j[inside].astype(np.intp)]
    return out


def grating_open(image_point, period_um: float, duty: float = 0.5, angle_rad: float = 0.0,
                 phase_um: float = 0.0) -> np.ndarray:
    """Analytic square-wave grating: open over the first ``duty`` of each period."""
    pts = np.asarray(image_point, dtype=float)
    s = (pts[..., 0] * math.cos(angle_rad) + pts[..., 1] * math.sin(angle_rad) - phase_um) / period_um
    return (s - np.floor(s)) < duty


def grating_mask(period_um: float = 60.0, duty: float = 0.5, angle_rad: float = 0.0,
                 phase_um: float = 0.0, half_width_um: float = 500.0, pitch_um: float = 1.0,
                 name: str = "grating") -> Mask:
    """Rasterise a line grating, sampling each cell at its centre."""
    n = int(math.ceil(2 * half_width_um / pitch_um))
    c = -half_width_um + (np.arange(n) + 0.5) * pitch_um
    X, Y = np.meshgrid(c, c)
    raster = grating_open(np.stack([X, Y], -1), period_um, duty, angle_rad, phase_um)
    return Mask(raster, pitch_um, (-half_width_um, -half_width_um), name)


def _in_ellipse(X, Y, cx, cy, ax, ay, rot=0.0):
    c, s = math.cos(rot), math.sin(rot)
    dx, dy = X - cx, Y - cy
    u = (c * dx + s * dy) / ax
    v = (-s * dx + c * dy) / ay
    return u * u + v * v <= 1.0


def _in_triangle(X, Y, p0, p1, p2):
    def side(pa, pb):
        return (pb[0] - pa[0]) * (Y - pa[1]) - (pb[1] - pa[1]) * (X - pa[0])
    d0, d1, d2 = side(p0, p1), side(p1, p2), side(p2, p0)
    neg = (d0 < 0) | (d1 < 0) | (d2 < 0)
    pos = (d0 > 0) | (d1 > 0) | (d2 > 0)
    return ~(neg & pos)


def cat_mask(pitch_um: float = 2.0, half_width_um: float = 360.0) -> Mask:
    """Cat silhouette roughly 500 x 600 µm with opaque 70 x 50 µm eyes.

    Open where the cat is (the opaque film was milled away there).
    """
    n = int(math.ceil(2 * half_width_um / pitch_um))
    c = -half_width_um + (np.arange(n) + 0.5) * pitch_um
    X, Y = np.meshgrid(c, c)
    shape = _in_ellipse(X, Y, 0, -120, 190, 150)                    # body
    shape |= _in_ellipse(X, Y, 0, 120, 115, 105)                     # head
    shape |= _in_triangle(X, Y, (-110, 150), (-25, 210), (-105, 300))  # ears
    shape |= _in_triangle(X, Y, (110, 150), (25, 210), (105, 300))
    shape |= _in_ellipse(X, Y, 215, -190, 95, 28, math.radians(35))  # tail
    shape &= ~_in_ellipse(X, Y, -45, 135, 35, 25)                    # eyes
    shape &= ~_in_ellipse(X, Y, 45, 135, 35, 25)
    return Mask(shape, pitch_um, (-half_width_um, -half_width_um), "cat")


def distortion_map(sys: OpticalSystem, half_width_um: float = 20.0, n: int = 9) -> np.ndarray:
    """Rows of (u, v, X, Y, X_linear, Y_linear) over a square sample-plane grid."""
    c = np.linspace(-half_width_um, half_width_um, n)
    U, V = np.meshgrid(c, c)
    pts = np.stack([U.ravel(), V.ravel()], -1)
    img = trace_to_image(pts, sys)
    lin = -sys.magnification * pts
    return np.column_stack([pts, img, lin])


def sagitta(points: np.ndarray) -> float:
    """Maximum distance of a polyline's points from the chord joining its ends."""
    p = np.asarray(points, dtype=float)
    a, b = p[0], p[-1]
    t = b - a
    t = t / np.linalg.norm(t)
    rel = p - a
    return float(np.max(np.abs(rel[:, 0] * t[1] - rel[:, 1] * t[0])))

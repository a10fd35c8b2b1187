"""Independent reference implementations used only by the tests.

Everything here is written from the definitions, deliberately without the
package's search-based machinery: all-pairs loops for coincidences, a
root-finder on the surface equation for ray intersection, and a numerical
gradient for the surface normal.
"""
import math

import numpy as np
from numba import njit
from scipy.optimize import brentq


@njit(cache=True)
def _all_pairs(te, tp, offset, half_width, tau_min, tau_max, bin_width, cap):
    nb = (tau_max - tau_min) // bin_width
    span = np.uint64(tau_max - tau_min)
    bw = np.uint64(bin_width)
    w2 = np.uint64(2 * half_width)
    counts = np.zeros(nb, np.int64)
    ei = np.empty(cap, np.int64)
    pi = np.empty(cap, np.int64)
    n = 0
    for i in range(te.size):
        a = te[i]
        for j in range(tp.size):
            tau = a - tp[j]
            # unsigned wrap turns each two-sided range test into one compare
            u = np.uint64(tau - tau_min)
            if u < span:
                counts[u // bw] += 1
            if np.uint64(tau - offset + half_width) <= w2:
                if n < cap:
                    ei[n] = i
                    pi[n] = j
                n += 1
    return ei, pi, n, counts


def brute_pairs_and_histogram(te, tp, offset, half_width, tau_min, tau_max, bin_width):
    """All-pairs scan: window matches (ordered by electron, photon) and tau histogram."""
    te = np.ascontiguousarray(te, np.int64)
    tp = np.ascontiguousarray(tp, np.int64)
    cap = 1 << 16
    while True:
        ei, pi, n, counts = _all_pairs(te, tp, int(offset), int(half_width), int(tau_min), int(tau_max),
                                       int(bin_width), cap)
        if n <= cap:
            return ei[:n], pi[:n], counts
        cap = n


def surface_intersection(origin, direction, f, axis):
    """First crossing of r^2 = 4 f (z + f) along the ray, by bracketing + brentq."""
    a = np.asarray(axis, float)

    def g(t):
        p = origin + t * direction
        z = p @ a
        r2 = p @ p - z * z
        return r2 - 4.0 * f * (z + f)

    ts = np.linspace(1e-6, 20.0 * f, 20001)
    vals = np.array([g(t) for t in ts])
    k = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if k.size == 0:
        return None
    t = brentq(g, ts[k[0]], ts[k[0] + 1], xtol=1e-14, rtol=1e-15, maxiter=200)
    return origin + t * direction


def numeric_normal(p, f, axis, h=1e-4):
    a = np.asarray(axis, float)

    def F(q):
        z = q @ a
        return q @ q - z * z - 4.0 * f * (z + f)

    g = np.array([(F(p + h * e) - F(p - h * e)) / (2 * h) for e in np.eye(3)])
    return g / np.linalg.norm(g)


def reflect_reference(d, n):
    d = np.asarray(d, float)
    return d - 2.0 * (d @ n) * n


def angle_between(u, v):
    """Angle via atan2, accurate down to ~1e-16 rad (acos is not near 0)."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    return math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v)))


def oracle_trace(pt, sys):
    """Chief ray through the numeric surface solver, then the thin lens."""
    m = sys.mirror
    a, b, e1 = m.a, m.b, m.e1
    f = m.focal_length_um

    def raw(p):
        o = p[0] * a + p[1] * e1
        hit = surface_intersection(o, b, f, a)
        d = reflect_reference(b, numeric_normal(hit, f, a))
        z_lens = sys.mirror_to_lens_mm * 1000.0
        t = (z_lens - hit @ a) / (d @ a)
        h = hit + t * d
        F, L2 = sys.lens_focal_length_mm * 1000.0, sys.lens_to_image_mm * 1000.0
        hb, h1 = h @ b, h @ e1
        return np.array([hb + L2 * ((d @ b) / (d @ a) - hb / F), h1 + L2 * ((d @ e1) / (d @ a) - h1 / F)])

    return raw(np.asarray(pt, float)) - raw(np.zeros(2))

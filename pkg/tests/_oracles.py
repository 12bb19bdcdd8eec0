"""Independent reference computations for the test suite.

Everything here deliberately avoids the library's own integration paths:
closed forms via gamma functions, scipy quadrature, masked Riemann sums
with Richardson extrapolation, and plain Monte Carlo.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import gamma, j0


def sphere_area_ref(d):
    return 2.0 * math.pi ** (d / 2.0) / gamma(d / 2.0)


def frac_laplacian_gaussian_at0(s, d):
    """(-Delta)^s of exp(-|x|^2/2) at the origin, via the Fourier side
    in closed form: 2^s Gamma(s + d/2) / Gamma(d/2)."""
    return 2.0**s * gamma(s + d / 2.0) / gamma(d / 2.0)


def frac_laplacian_gaussian_2d(s, x_norm):
    """(-Delta)^s of exp(-|x|^2/2) in d=2 at radius |x|, by radial Fourier
    quadrature with a Bessel factor."""
    val, _ = integrate.quad(
        lambda k: k ** (2 * s + 1) * math.exp(-(k**2) / 2.0) * j0(k * x_norm),
        0.0, 40.0, limit=400)
    return val


def std_frac_constant(d, s):
    """The standard normalization of the fractional Laplacian (external to
    this project; used only as an oracle): 4^s Gamma(d/2+s) / (pi^{d/2} |Gamma(-s)|)."""
    return 4.0**s * gamma(d / 2.0 + s) / (math.pi ** (d / 2.0) * abs(gamma(-s)))


def curvature_disk_ref(s):
    """Fractional mean curvature of the unit disk (d=2): closed form from
    integrating the per-direction chord masses,
    2^{-s} sqrt(pi) Gamma((1-s)/2) / (s Gamma(1 - s/2))."""
    return 2.0 ** (-s) * math.sqrt(math.pi) / s * gamma((1 - s) / 2.0) / gamma(1 - s / 2.0)


def masked_riemann_2d(g, mask, lo, hi, h):
    """Midpoint Riemann sum of g over {mask} inside the box [lo, hi]^2."""
    xs = np.arange(lo[0] + h / 2, hi[0], h)
    ys = np.arange(lo[1] + h / 2, hi[1], h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    keep = mask(P)
    return float(np.sum(g(P[keep]))) * h * h


def richardson_masked_2d(g, mask, lo, hi, h):
    """Two-grid extrapolation cancels the O(h) boundary-cut error."""
    v1 = masked_riemann_2d(g, mask, lo, hi, h)
    v2 = masked_riemann_2d(g, mask, lo, hi, h / 2.0)
    return 2.0 * v2 - v1


def mc_double_integral_disk(s, n, seed):
    """Plain Monte Carlo for ∬_{disk x complement} |y-x|^{-2-s}:
    x uniform in the disk, y by power-law radius from the chord start."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 2))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = v * np.sqrt(rng.random(n))[:, None]
    ang = 2 * np.pi * rng.random(n)
    th = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    c = np.einsum("ij,ij->i", x, th)
    t0 = -c + np.sqrt(c**2 + 1 - np.einsum("ij,ij->i", x, x))
    t = t0 * rng.random(n) ** (-1.0 / s)
    y = x + t[:, None] * th
    outside = np.einsum("ij,ij->i", y, y) > 1.0
    est = np.where(outside, 2 * np.pi * t0 ** (-s) / s, 0.0) * np.pi
    return float(np.mean(est)), float(np.std(est) / math.sqrt(n))

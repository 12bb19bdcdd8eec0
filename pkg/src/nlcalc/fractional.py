"""Fractional operators of order s: gradient, divergence, the p-Laplacian
by two routes, the fractional perimeter and its variational twin, and the
fractional mean curvature by two routes.

Everything is driven by the power-law kernel pair of order s = 1 - eps.
The two p-Laplacian routes and the two curvature routes are algebraically
equal; computing both through different pipelines and comparing them is
the point of the experiment suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma as _gamma

from .fields import NonlocalField, custom_field, gradient_field, normal_field
from .geometry import Domain, nearest_boundary_point
from .kernels import AdmissiblePair, RadialProfile, make_fractional_family, power_profile
from .quadrature import (
    QuadResult,
    QuadSpec,
    equator_graded_mesh,
    tangential_noise_factor,
    half_sphere_directions,
    integrate_double_graded,
    integrate_pv,
    pairwise_sum,
    panel_nodes,
    sphere_area,
    unit_ball_volume,
)

__all__ = [
    "FracParams",
    "fractional_pair",
    "frac_gradient",
    "frac_divergence",
    "frac_p_laplacian_direct",
    "frac_p_laplacian_composed",
    "frac_perimeter",
    "perimeter_functional",
    "mollified_maximizer",
    "frac_mean_curvature_direct",
    "frac_mean_curvature_via_divergence",
]


@dataclass(frozen=True)
class FracParams:
    """Order, dimension, and p for the fractional operators."""

    s: float
    d: int
    p: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.s < 1.0):
            raise ValueError("s must lie in (0, 1)")
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")
        if self.p < 1.0:
            raise ValueError("p must be at least 1")

    @property
    def c_ds(self) -> float:
        """Scaling constant tying the divergence form of the perimeter to
        the double-integral form: Gamma(d/2 + 1/2) sqrt(pi) / (4 s Gamma(d/2 + 1)),
        equal to H^{d-1}(S^{d-1}) / (4 d s |B^{d-1}|)."""
        return float(_gamma(self.d / 2.0 + 0.5) * math.sqrt(math.pi)
                     / (4.0 * self.s * _gamma(self.d / 2.0 + 1.0)))


@lru_cache(maxsize=32)
def fractional_pair(d: int, s: float) -> AdmissiblePair:
    """The power-law pair of order s (family parameter eps = 1 - s)."""
    return make_fractional_family(d).pair_at(1.0 - s)


def frac_gradient(phi, s: float) -> NonlocalField:
    """(phi(y) - phi(x)) / |y - x|^s as a two-point field."""
    pair = fractional_pair(phi.dim, s)
    return gradient_field(phi, pair.alpha)


def frac_divergence(f: NonlocalField, s: float, x, spec: QuadSpec) -> QuadResult:
    """Divergence of order s: the pv integral against the order-s measure."""
    pair = fractional_pair(f.dim, s)
    return integrate_pv(x, f, pair.mu, spec).scaled(2.0)


def _odd_power(v, p):
    """|v|^{p-2} v, the odd monomial driving the p-Laplacian."""
    return np.sign(v) * np.abs(v) ** (p - 1.0)


def frac_p_laplacian_direct(u, s: float, p: float, x, spec: QuadSpec) -> QuadResult:
    """(1-s) pv ∫ |u(y)-u(x)|^{p-2} (u(y)-u(x)) |y-x|^{-d-sp} dy.

    Requires p >= 2 (the integrand kernel |t|^{p-2} t is only C^1 there);
    u must be bounded with bounded second derivatives near x.
    """
    if p < 2.0:
        raise ValueError("p < 2 is not supported")
    d = u.dim
    x = np.asarray(x, dtype=float).reshape(-1)

    def raw(A, B):
        return _odd_power(u.value(B) - u.value(A), p)

    u_inf = getattr(u, "inf_limit", 0.0)

    def far(xx):
        return ("value",
                float(_odd_power(u_inf - u.value(xx[None, :]), p)[0]), 0.0)

    fld = custom_field(d, raw, diagonal_power=p, far=far, kind="p-increment")
    kernel = power_profile(1.0, -d - s * p, d)
    return integrate_pv(x, fld, kernel, spec).scaled(1.0 - s)


def frac_p_laplacian_composed(u, s: float, p: float, x, spec: QuadSpec) -> QuadResult:
    """The same operator through the order-s calculus:
    (H^{d-1}(S^{d-1}) / (4 d s)) div_s(|grad_s u|^{p-2} grad_s u)(x)."""
    if p < 2.0:
        raise ValueError("p < 2 is not supported")
    d = u.dim
    x = np.asarray(x, dtype=float).reshape(-1)

    def raw(A, B):
        r = np.linalg.norm(B - A, axis=1)
        g = (u.value(B) - u.value(A)) * np.power(r, -s, where=r > 0,
                                                 out=np.ones_like(r))
        return _odd_power(g, p)

    u_inf = getattr(u, "inf_limit", 0.0)

    def far(xx):
        return ("value",
                float(_odd_power(u_inf - u.value(xx[None, :]), p)[0]),
                -s * (p - 1.0))

    fld = custom_field(d, raw,
                       diagonal_power=(1.0 - s) * (p - 2.0) + 2.0 - s,
                       alpha_singularity=s,
                       far=far, kind="p-gradient")
    pair = fractional_pair(d, s)
    pref = sphere_area(d) / (4.0 * d * s)
    return integrate_pv(x, fld, pair.mu, spec).scaled(2.0 * pref)


# ---------------------------------------------------------------------------
# perimeter


def frac_perimeter(E: Domain, s: float, spec: QuadSpec) -> QuadResult:
    """(1/|B^{d-1}|) ∬_{E x E^c} |y-x|^{-d-s}: the double-integral
    perimeter of order s."""
    d = E.dim
    res = integrate_double_graded(E, None, d + s, spec)
    return res.scaled(1.0 / unit_ball_volume(d - 1))


def perimeter_functional(E: Domain, s: float, f: NonlocalField,
                         spec: QuadSpec) -> QuadResult:
    """c_{d,s} ∫_E div_s f: the variational side of the perimeter.

    By antisymmetry the domain-domain part of the divergence integral
    cancels, leaving the double integral over E x E^c against the order-s
    measure; for |f| <= 1 the value is at most (1-s) Per_s(E).
    """
    d = E.dim
    pair = fractional_pair(d, s)
    c_mu = pair.mu.power_pieces[0][2]
    c_ds = FracParams(s, d).c_ds
    res = integrate_double_graded(E, f.eval_pairs, d + s, spec)
    return res.scaled(2.0 * c_ds * c_mu)


class _MollifiedMaximizer(NonlocalField):
    """Smooth approximation of the indicator pairing 1_E(x) 1_{E^c}(y) minus
    its transpose: products of mollified eroded indicators.

    The bump (1 - |h/eps|^2)^4 is mollified against indicators of the
    inward/outward erosions by eps.  Thresholds decide the convolution
    exactly where the 1-Lipschitz signed distance already does (inside
    beyond 2 eps: 1; outside the erosion's reach: 0), so only a band of
    width 2 eps per side is ever integrated numerically.
    """

    def __init__(self, domain: Domain, eps: float):
        if not (0.0 < eps < 0.5):
            raise ValueError("mollification width must lie in (0, 0.5)")
        self.domain = domain
        self.eps = eps
        d = domain.dim
        # polar rule for the bump and its numeric normalization
        xg, wg = panel_nodes(np.linspace(0.0, eps, 4), 6)
        self._rad = xg
        prof = (1.0 - (xg / eps) ** 2) ** 4
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
            aw = np.array([1.0, 1.0])
        elif d == 2:
            na = 24
            ang = 2 * np.pi * (np.arange(na) + 0.5) / na
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            aw = np.full(na, 2 * np.pi / na)
        else:
            dh, awh = half_sphere_directions(3, 0)
            dirs = np.concatenate([dh, -dh])
            aw = np.concatenate([awh, awh])
        self._dirs = dirs
        self._aw = aw
        w2 = (wg * prof * xg ** (d - 1))[:, None] * aw[None, :]
        self._w2 = w2 / float(np.sum(w2))      # unit total mass
        super().__init__(d, None, kind="mollified", diagonal_power=2.0)

    def _conv(self, P, sign):
        """Mollified indicator of the eroded domain (sign=+1) or eroded
        complement (sign=-1) at points P."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        eps = self.eps
        sd = self.domain.signed_distance(P)
        out = np.where(sign > 0, sd <= -2 * eps, sd >= 2 * eps).astype(float)
        band = (sd > -2 * eps) & (sd < 0.0) if sign > 0 else \
            (sd < 2 * eps) & (sd > 0.0)
        if np.any(band):
            Pb = P[band]
            Z = Pb[:, None, None, :] + self._rad[None, :, None, None] \
                * self._dirs[None, None, :, :]
            sdz = self.domain.signed_distance(Z.reshape(-1, self.dim))
            sdz = sdz.reshape(Pb.shape[0], self._rad.size, self._dirs.shape[0])
            ind = (sdz < -eps) if sign > 0 else (sdz > eps)
            out[band] = np.einsum("nrk,rk->n", ind, self._w2)
        return out

    def eval_pairs(self, X, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X = np.broadcast_to(np.asarray(X, dtype=float), Y.shape).copy()
        uX = self._conv(X, +1)
        vX = self._conv(X, -1)
        uY = self._conv(Y, +1)
        vY = self._conv(Y, -1)
        return uX * vY - vX * uY

    def support_radius_pair(self, x):
        return math.inf

    def far_model(self, x):
        return ("value", float(self._conv(np.atleast_2d(x), +1)[0]), 0.0)


def mollified_maximizer(E: Domain, eps_moll: float) -> NonlocalField:
    return _MollifiedMaximizer(E, eps_moll)


# ---------------------------------------------------------------------------
# mean curvature


def _snap_to_boundary(E: Domain, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    sd = float(E.signed_distance(x[None, :])[0])
    if abs(sd) > 1e-9:
        z, _ = nearest_boundary_point(E, x)
        return np.asarray(z, dtype=float)
    return x


def frac_mean_curvature_direct(E: Domain, s: float, x, spec: QuadSpec) -> QuadResult:
    """(1/|B^{d-1}|) pv ∫ (1_{E^c}(y) - 1_E(y)) |y-x|^{-d-s} dy at a
    boundary point (inputs are snapped to the boundary first).

    Per direction pair the indicator difference is piecewise constant
    between boundary crossings, so each segment carries the exact kernel
    mass (a^{-s} - b^{-s})/s, with +2 on the unbounded tail segment; the
    angular mesh is graded toward the tangent plane.
    """
    d = E.dim
    x = _snap_to_boundary(E, x)
    axis = E.sd_gradient(x[None, :])[0]
    r_max = E.reach_radius() + float(np.linalg.norm(x - E.center())) + 1.0
    total = 0
    prev = None
    value = 0.0
    err = math.inf
    rho_sliver = 2.0 ** (-(1.0 - s))
    for level in range(5):
        dirs, aw, sliver, edge0 = equator_graded_mesh(d, axis, level)
        n_dir = dirs.shape[0]
        origins = np.broadcast_to(x, (n_dir, d)).copy()
        t0 = 1e-9 * (1.0 + float(np.linalg.norm(x)))
        cr_p = E.ray_level_crossings(origins, dirs, np.full(n_dir, r_max), t_start=t0)
        cr_m = E.ray_level_crossings(origins, -dirs, np.full(n_dir, r_max), t_start=t0)
        per_angle = np.zeros(n_dir)
        for j in range(n_dir):
            merged = np.unique(np.concatenate([cr_p[j], cr_m[j]]))
            edges = np.concatenate([[0.0], merged, [np.inf]])
            mids = np.where(np.isfinite(edges[1:]),
                            0.5 * (edges[:-1] + edges[1:]),
                            np.where(edges[:-1] > 0, 2.0 * edges[:-1], 1.0))
            Yp = x[None, :] + mids[:, None] * dirs[j][None, :]
            Ym = x[None, :] - mids[:, None] * dirs[j][None, :]
            vp = 1.0 - 2.0 * E.inside(Yp)
            vm = 1.0 - 2.0 * E.inside(Ym)
            v = vp + vm
            total += 2 * mids.size
            acc = 0.0
            for k in range(mids.size):
                if v[k] == 0.0:
                    continue
                a, b = edges[k], edges[k + 1]
                if a == 0.0:
                    raise ValueError("nonvanishing symmetrized indicator at the "
                                     "base point; is x on the boundary?")
                seg = (a ** (-s) - (b ** (-s) if np.isfinite(b) else 0.0)) / s
                acc += v[k] * seg
            per_angle[j] = acc
        value = pairwise_sum(per_angle * aw)
        noise = 0.0
        if sliver.size and d > 1:
            tail = pairwise_sum(per_angle[sliver] * aw[sliver]) \
                * rho_sliver / (1.0 - rho_sliver)
            value += tail
            noise = abs(tail) * s * tangential_noise_factor(edge0)
        value /= unit_ball_volume(d - 1)
        noise /= unit_ball_volume(d - 1)
        if prev is not None:
            err = abs(value - prev) + noise
            if err <= spec.tol_for(value) or total >= spec.max_evals:
                break
        prev = value
    return QuadResult(value, err if np.isfinite(err) else noise, total, spec.seed,
                      np.isfinite(err) and err <= spec.tol_for(value))


def frac_mean_curvature_via_divergence(E: Domain, s: float, x,
                                       spec: QuadSpec) -> QuadResult:
    """c_{d,s} div_s of the two-point normal field at a boundary point."""
    x = _snap_to_boundary(E, x)
    pair = fractional_pair(E.dim, s)
    c_ds = FracParams(s, E.dim).c_ds
    n_fld = normal_field(E)
    return integrate_pv(x, n_fld, pair.mu, spec).scaled(2.0 * c_ds)

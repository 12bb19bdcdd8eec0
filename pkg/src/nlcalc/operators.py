"""The core nonlocal operators and their integral identities.

The divergence of a two-point field is a principal-value integral against
the pair's measure, taken at interior points; the normal derivative is a
plain integral over the domain, taken at exterior points.  Integrating
the first over the domain and the second over its complement gives the
same number for any antisymmetric field: that identity, its scalar
specialization (the Gauss-Green forms), and the divergence/gradient
duality are what this module computes and what the experiment suite
verifies numerically.

Outer integrals are evaluated in batches: all inner (pointwise) values at
one refinement level come from a single vectorized pass, and refinement
ladders at two consecutive levels supply the error estimates.  The nested
error model adds the outer ladder difference and the weighted inner
estimates in quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import NonlocalField, ScalarField, difference_field, gradient_field
from .geometry import Box, Domain, collar_points
from .kernels import AdmissiblePair
from .quadrature import (
    QuadResult,
    QuadSpec,
    QuadratureError,
    _chart_nodes,
    geometric_edges,
    half_sphere_directions,
    integrate_pv,
    integrate_volume,
    pairwise_sum,
    panel_nodes,
    pv_smooth_batch,
    pv_tail_terms,
    sphere_area,
)

__all__ = [
    "OperatorContext",
    "nonlocal_divergence",
    "nonlocal_normal",
    "bulk_divergence_integral",
    "exterior_normal_integral",
    "GaussGreenForms",
    "GaussGreenCheck",
    "gauss_green_forms",
    "gauss_green_residual",
    "scalar_product",
    "nonlocal_scalar_product",
    "DualityCheck",
    "duality_residual",
    "region_inner_batch",
    "pv_values_batch",
]


@dataclass(frozen=True)
class OperatorContext:
    """Domain, kernel pair, and quadrature configuration, dimension-checked."""

    domain: Domain
    pair: AdmissiblePair
    spec: QuadSpec

    def __post_init__(self):
        if self.domain.dim != self.pair.dim:
            raise ValueError("domain and kernel pair dimensions disagree")


# ---------------------------------------------------------------------------
# batched cores


def _full_sphere(d, level):
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        n = 16 * (1 << level)
        ang = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(n, 2 * np.pi / n)
    dirs, aw = half_sphere_directions(3, level)
    return np.concatenate([dirs, -dirs]), np.concatenate([aw, aw])


_TEMPLATES = {}


def _section_template(weight):
    """Radial template on (0,1): graded toward 0 for singular kernels,
    plain GL panels for bounded ones."""
    singular = getattr(weight, "singularity_exponent", 0.0) > 0.0
    key = ("graded", 12, 6) if singular else ("plain", 2, 8)
    if key not in _TEMPLATES:
        if singular:
            edges = np.concatenate([[0.0], geometric_edges(0.0, 1.0, 0.5, 12)])
            _TEMPLATES[key] = panel_nodes(edges, 6)
        else:
            _TEMPLATES[key] = panel_nodes(np.linspace(0.0, 1.0, 3), 8)
    return _TEMPLATES[key]


def pv_values_batch(X, field, weight, spec, levels=(0, 1)):
    """pv ∫ f(x, x+h) w dh at a batch of points, with a two-level ladder.

    Returns (values, errs, n_evals).  Far-field truncation terms are added
    per point from the field's far model when the range is infinite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    R = min(field.support_radius_pair(X[0]),
            getattr(weight, "support_radius", math.inf))
    tail_vals = np.zeros(n)
    tail_errs = np.zeros(n)
    if not np.isfinite(R):
        Rs = np.empty(n)
        for i in range(n):
            Rs[i], tail_vals[i], tail_errs[i] = pv_tail_terms(field, weight, X[i], spec)
        R = float(np.max(Rs))
    floor = max(R * spec.grading_ratio**40,
                1e-7 * max(1.0, float(np.max(np.abs(X)))))
    v0, e0, n0 = pv_smooth_batch(X, field, weight, spec, levels[0], R, floor)
    v1, e1, n1 = pv_smooth_batch(X, field, weight, spec, levels[1], R, floor)
    values = v1 + tail_vals
    errs = np.abs(v1 - v0) + e1 + tail_errs
    return values, errs, n0 + n1


def region_inner_batch(domain, weight, field, X, level, *, region="interior"):
    """∫_{region} f(x, y) w(|y-x|) dy at a batch of base points.

    region="interior": y over the domain (x typically outside);
    region="exterior": y over the complement (x inside; requires a
    compactly supported weight).  Polar sections around each x; the
    radial template packs nodes toward each section's near end, where
    singular weights peak.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n_x = X.shape[0]
    d = domain.dim
    dirs, aw = _full_sphere(d, level)
    dist = np.linalg.norm(X - domain.center(), axis=1)
    r_max = domain.reach_radius() + float(np.max(dist)) + 1.0
    Rw = getattr(weight, "support_radius", math.inf)
    values = np.empty(n_x)
    n_evals = 0
    tau, om = _section_template(weight)
    k = tau.size
    chunk = max(1, 400_000 // (dirs.shape[0] * k))
    for c0 in range(0, n_x, chunk):
        Xc = X[c0:c0 + chunk]
        nc = Xc.shape[0]
        if region == "interior":
            A, B = domain.interior_ray_sections(Xc, dirs, r_max)
        else:
            A, B = domain.exterior_ray_data(Xc, dirs, r_max)
            if not np.isfinite(Rw):
                raise QuadratureError("exterior region integral needs a "
                                      "compactly supported weight")
        if not np.isfinite(Rw):
            Rw_eff = r_max
        else:
            Rw_eff = Rw
        A2 = np.minimum(A, Rw_eff)
        B2 = np.minimum(B, Rw_eff)
        length = np.maximum(np.nan_to_num(B2 - A2, nan=0.0), 0.0)   # (nc, ndir, m)
        T = np.nan_to_num(A2, nan=0.0)[..., None] + length[..., None] * tau
        W = length[..., None] * om
        live = length[..., None] > 0.0
        Tsafe = np.where(live, T, 1.0)
        Y = Xc[:, None, None, None, :] + Tsafe[..., None] * dirs[None, :, None, None, :]
        nd, m = A.shape[1], A.shape[2]
        Xrep = np.repeat(Xc, nd * m * k, axis=0)
        vals = field.eval_pairs(Xrep, Y.reshape(-1, d)).reshape(nc, nd, m, k)
        n_evals += int(np.count_nonzero(live))
        wv = weight.eval(Tsafe.reshape(-1)).reshape(nc, nd, m, k)
        integ = np.where(live, vals * wv * Tsafe ** (d - 1) * W, 0.0)
        values[c0:c0 + chunk] = np.einsum("cjmk,j->c", integ, aw)
    return values, n_evals


def _ladder_result(spec, seed, pairs, total) -> QuadResult:
    """Combine a two-entry ladder [(value, inner_err), ...] into a result."""
    (v0, i0), (v1, i1) = pairs
    err = math.hypot(abs(v1 - v0), i1)
    return QuadResult(v1, err, total, seed, err <= spec.tol_for(v1))


# ---------------------------------------------------------------------------
# pointwise operators


def nonlocal_divergence(ctx: OperatorContext, f: NonlocalField, x) -> QuadResult:
    """2 pv ∫ f(x, y) mu(y - x) dy at an interior point."""
    return integrate_pv(x, f, ctx.pair.mu, ctx.spec).scaled(2.0)


def nonlocal_normal(ctx: OperatorContext, f: NonlocalField, x) -> QuadResult:
    """-2 ∫_domain f(x, y) mu(y - x) dy at an exterior point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    total = 0
    prev = None
    value = 0.0
    err = math.inf
    for level in range(4):
        vals, n = region_inner_batch(ctx.domain, ctx.pair.mu, f, x, level)
        value = vals[0]
        total += n
        if prev is not None:
            err = abs(value - prev)
            if err <= ctx.spec.tol_for(value) / 2.0 or total >= ctx.spec.max_evals:
                break
        prev = value
    res = QuadResult(value, err if np.isfinite(err) else 0.0, total, ctx.spec.seed,
                     np.isfinite(err) and err <= ctx.spec.tol_for(value))
    return res.scaled(-2.0)


# ---------------------------------------------------------------------------
# the two sides of the divergence identity


def bulk_divergence_integral(ctx: OperatorContext, f: NonlocalField) -> QuadResult:
    """∫_domain of the nonlocal divergence of f."""
    total = 0
    ladder = []
    for level in (0, 1):
        parts = []
        ierrs = []
        for chart in ctx.domain.charts():
            params, weights = _chart_nodes(chart, level, ctx.spec.grading_ratio)
            pts = chart.to_points(params)
            jac = chart.jacobian(params)
            vals, errs, n = pv_values_batch(pts, f, ctx.pair.mu, ctx.spec)
            total += n
            w = weights * jac
            parts.append(pairwise_sum(2.0 * vals * w))
            ierrs.append(pairwise_sum(2.0 * errs * np.abs(w)))
        ladder.append((pairwise_sum(parts), pairwise_sum(ierrs)))
    return _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)


def exterior_normal_integral(ctx: OperatorContext, f: NonlocalField,
                             swapped: bool = False) -> QuadResult:
    """∫ over the complement of the nonlocal normal derivative of f.

    Compactly supported kernels integrate exactly over the width-eps
    exterior collar; full-support kernels integrate over an exterior ring
    with a closed-form bound for the remainder.  ``swapped`` exchanges the
    roles of the domain and its complement, which flips the sign of the
    result for antisymmetric fields.
    """
    if swapped:
        return _swapped_normal_integral(ctx, f)
    mu = ctx.pair.mu
    if np.isfinite(mu.support_radius):
        return _collar_normal_integral(ctx, f, mu.support_radius)
    return _ring_normal_integral(ctx, f)


def _collar_normal_integral(ctx, f, eps) -> QuadResult:
    d = ctx.domain.dim
    base_n = 64 if d == 2 else 4000
    inner_levels = (0, 1) if d == 2 else (0, 0)
    total = 0
    ladder = []
    for level in (0, 1):
        col = collar_points(ctx.domain, eps, base_n * (1 << level), seed=ctx.spec.seed)
        v0, n0 = region_inner_batch(ctx.domain, ctx.pair.mu, f, col.points,
                                    inner_levels[0])
        if inner_levels[1] != inner_levels[0]:
            v1, n1 = region_inner_batch(ctx.domain, ctx.pair.mu, f, col.points,
                                        inner_levels[1])
        else:
            v1, n1 = v0, 0
        total += n0 + n1
        ierr = 2.0 * np.abs(v1 - v0) if inner_levels[1] != inner_levels[0] \
            else 2e-3 * np.abs(v1)
        value = pairwise_sum(-2.0 * v1 * col.weights)
        ierr_sum = pairwise_sum(ierr * np.abs(col.weights))
        ladder.append((value, ierr_sum))
    return _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)


def _ring_normal_integral(ctx, f) -> QuadResult:
    """Full-support kernels: polar exterior ring around the star center,
    with log-graded radii resolving both the boundary layer and the decay,
    plus a closed-form bound for the mass beyond the ring."""
    dom = ctx.domain
    d = dom.dim
    center = dom.star_center() if hasattr(dom, "star_center") else dom.center()
    mu = ctx.pair.mu
    far = f.far_model(center)
    if far is None:
        raise QuadratureError("field lacks a far model for the exterior tail")
    _, fcoef, fpow = far
    wc, we = mu.power_pieces[-1][2], mu.power_pieces[-1][3]
    p = fpow + we + d - 1
    q = p + 1
    if q >= 0:
        raise QuadratureError("exterior integrand does not decay")
    vol = dom.volume()

    def ring_bound(R):
        # |N f(x)| <= 2 vol sup|f mu| ~ 2 vol fcoef wc |x|^{fpow+we} outside
        return 2.0 * vol * abs(fcoef) * wc * sphere_area(d) * R ** q / (-q)

    R = max(16.0, 8.0 * dom.bounding_radius())
    while ring_bound(R) > 100.0 * ctx.spec.abs_tol and R < 2048.0:
        R *= 2.0
    tail_err = ring_bound(R)

    total = 0
    ladder = []
    for level in (0, 1):
        dirs, aw = _full_sphere(d, level + 1)
        n_dir = dirs.shape[0]
        origins = np.broadcast_to(center, (n_dir, d)).copy()
        crossings = dom.ray_level_crossings(
            origins, dirs, np.full(n_dir, 2.0 * dom.bounding_radius()))
        rho = np.array([c[-1] if len(c) else 0.01 for c in crossings])
        # shared multiplier grid: sub-octave refinement of the boundary
        # layer, then doubling octaves out to R / min(rho)
        octs = int(np.ceil(np.log2(R / float(np.min(rho))))) + 1
        mult_edges = np.concatenate([1.0 + 0.5 ** np.arange(10 + 2 * level, -1, -1.0),
                                     2.0 ** np.arange(2, octs + 1)])
        mult_edges = np.concatenate([[1.0], mult_edges])
        tm, wm = panel_nodes(mult_edges, 4)
        T = rho[:, None] * tm[None, :]
        W = rho[:, None] * wm[None, :]
        keep = T <= R
        pts = center[None, None, :] + T[..., None] * dirs[:, None, :]
        flat = pts.reshape(-1, d)
        vals, n = region_inner_batch(dom, mu, f, flat, level)
        total += n
        nf = (-2.0 * vals).reshape(n_dir, -1)
        ring = np.where(keep, nf * W * T ** (d - 1), 0.0)
        value = pairwise_sum(np.einsum("jm,j->jm", ring, aw))
        ladder.append((value, tail_err))
    return _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)


def _swapped_normal_integral(ctx, f) -> QuadResult:
    """-2 ∬_{domain x complement} f mu: the identity's right side with the
    domain and complement exchanged."""
    mu = ctx.pair.mu
    if not np.isfinite(mu.support_radius):
        raise QuadratureError("swapped exterior integral needs a compactly "
                              "supported kernel")
    eps = mu.support_radius
    total = 0
    ladder = []
    for level in (0, 1):
        parts = []
        ierrs = []
        for chart in ctx.domain.charts():
            params, weights = _chart_nodes(chart, level + 1, ctx.spec.grading_ratio)
            pts = chart.to_points(params)
            jac = chart.jacobian(params)
            sd = ctx.domain.signed_distance(pts)
            keep = sd > -eps
            if not np.any(keep):
                continue
            Xk = pts[keep]
            v0, n0 = region_inner_batch(ctx.domain, mu, f, Xk, 0, region="exterior")
            v1, n1 = region_inner_batch(ctx.domain, mu, f, Xk, 1, region="exterior")
            total += n0 + n1
            w = (weights * jac)[keep]
            parts.append(pairwise_sum(-2.0 * v1 * w))
            ierrs.append(pairwise_sum(2.0 * np.abs(v1 - v0) * np.abs(w)))
        ladder.append((pairwise_sum(parts), pairwise_sum(ierrs)))
    return _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)


# ---------------------------------------------------------------------------
# Gauss-Green forms and scalar products


class _SymmetricPairField:
    """Two-point product (phi(x)-phi(y))(psi(x)-psi(y)): symmetric, smooth,
    quadratic at the diagonal; reuses the pv machinery (whose
    symmetrization is an exact identity for any integrable two-point
    function, antisymmetric or not)."""

    piecewise_constant = False

    def __init__(self, phi, psi):
        self.dim = phi.dim
        self.phi = phi
        self.psi = psi
        self.diagonal_power = 2.0
        self.alpha_singularity = 0.0

    def eval_pairs(self, X, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X = np.broadcast_to(np.asarray(X, dtype=float), Y.shape)
        return ((self.phi.value(X) - self.phi.value(Y))
                * (self.psi.value(X) - self.psi.value(Y)))

    def support_radius_pair(self, x):
        return math.inf

    def far_model(self, x):
        x = np.atleast_2d(x)
        return ("value", float(self.phi.value(x)[0] * self.psi.value(x)[0]), 0.0)


@dataclass
class GaussGreenForms:
    """Pointwise scalar operators and the energy form for a kernel nu."""

    ctx: OperatorContext
    phi: ScalarField
    psi: ScalarField

    def lnu_at(self, x) -> QuadResult:
        """2 pv ∫ (phi(x) - phi(y)) nu(x - y) dy, interior x."""
        return nonlocal_divergence(self.ctx, difference_field(self.phi), x)

    def nnu_at(self, y) -> QuadResult:
        """2 ∫_domain (phi(y) - phi(x)) nu(x - y) dx, exterior y.

        Equals minus the nonlocal normal derivative of the difference
        field, matching the orientation that makes the Gauss-Green
        identity hold as displayed.
        """
        return nonlocal_normal(self.ctx, difference_field(self.phi), y).scaled(-1.0)

    def energy(self) -> QuadResult:
        """∬ over all pairs except (complement x complement) of
        (phi(x)-phi(y)) (psi(x)-psi(y)) nu(x-y), split as
        (domain x R^d) + (complement x domain)."""
        ctx = self.ctx
        prod = _SymmetricPairField(self.phi, self.psi)
        mu = ctx.pair.mu
        if not np.isfinite(mu.support_radius):
            raise QuadratureError("energy form implemented for compactly "
                                  "supported kernels")
        total = 0
        ladder = []
        for level in (0, 1):
            parts = []
            ierrs = []
            for chart in ctx.domain.charts():
                params, weights = _chart_nodes(chart, level, ctx.spec.grading_ratio)
                pts = chart.to_points(params)
                w = weights * chart.jacobian(params)
                vals, errs, n = pv_values_batch(pts, prod, mu, ctx.spec)
                total += n
                parts.append(pairwise_sum(vals * w))
                ierrs.append(pairwise_sum(errs * np.abs(w)))
            col = collar_points(ctx.domain, mu.support_radius,
                                (64 if ctx.domain.dim == 2 else 4000) * (1 << level),
                                seed=ctx.spec.seed)
            v0, n0 = region_inner_batch(ctx.domain, mu, prod, col.points, 0)
            v1, n1 = region_inner_batch(ctx.domain, mu, prod, col.points, 1)
            total += n0 + n1
            parts.append(pairwise_sum(v1 * col.weights))
            ierrs.append(pairwise_sum(np.abs(v1 - v0) * col.weights))
            ladder.append((pairwise_sum(parts), pairwise_sum(ierrs)))
        return _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)


def gauss_green_forms(ctx: OperatorContext, phi: ScalarField,
                      psi: ScalarField) -> GaussGreenForms:
    return GaussGreenForms(ctx, phi, psi)


@dataclass(frozen=True)
class GaussGreenCheck:
    lhs: QuadResult            # ∫_domain (L phi) psi
    energy: QuadResult
    boundary_term: QuadResult  # ∫_complement (N phi) psi

    @property
    def residual(self) -> float:
        return abs(self.lhs.value - (self.energy.value - self.boundary_term.value))

    @property
    def combined_error(self) -> float:
        return (self.lhs.error_estimate + self.energy.error_estimate
                + self.boundary_term.error_estimate)


def gauss_green_residual(ctx: OperatorContext, phi: ScalarField,
                         psi: ScalarField) -> GaussGreenCheck:
    """All three pieces of the scalar integration-by-parts identity,
    each with its own error estimate; the identity holds when the
    residual sits inside the combined estimates."""
    forms = gauss_green_forms(ctx, phi, psi)
    dfld = difference_field(phi)
    mu = ctx.pair.mu
    if not np.isfinite(mu.support_radius):
        raise QuadratureError("identity check implemented for compactly "
                              "supported kernels")

    total = 0
    ladder = []
    for level in (0, 1):
        parts, ierrs = [], []
        for chart in ctx.domain.charts():
            params, weights = _chart_nodes(chart, level, ctx.spec.grading_ratio)
            pts = chart.to_points(params)
            w = weights * chart.jacobian(params) * np.asarray(psi.value(pts))
            vals, errs, n = pv_values_batch(pts, dfld, mu, ctx.spec)
            total += n
            parts.append(pairwise_sum(2.0 * vals * w))
            ierrs.append(pairwise_sum(2.0 * errs * np.abs(w)))
        ladder.append((pairwise_sum(parts), pairwise_sum(ierrs)))
    lhs = _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)

    total = 0
    ladder = []
    for level in (0, 1):
        col = collar_points(ctx.domain, mu.support_radius,
                            (64 if ctx.domain.dim == 2 else 4000) * (1 << level),
                            seed=ctx.spec.seed)
        v0, n0 = region_inner_batch(ctx.domain, mu, dfld, col.points, 0)
        v1, n1 = region_inner_batch(ctx.domain, mu, dfld, col.points, 1)
        total += n0 + n1
        w = col.weights * np.asarray(psi.value(col.points))
        ladder.append((pairwise_sum(2.0 * v1 * w),
                       pairwise_sum(2.0 * np.abs(v1 - v0) * np.abs(w))))
    bterm = _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)
    return GaussGreenCheck(lhs, forms.energy(), bterm)


def scalar_product(phi, psi, box: Box, spec: QuadSpec) -> QuadResult:
    """∫ phi psi over the support box."""
    return integrate_volume(box, lambda X: np.asarray(phi(X)) * np.asarray(psi(X)), spec)


class _ProductPairField:
    """f * g as a symmetric two-point function (both factors antisymmetric)."""

    piecewise_constant = False

    def __init__(self, f, g):
        if f.dim != g.dim:
            raise ValueError("field dimensions disagree")
        self.dim = f.dim
        self.f = f
        self.g = g
        # each factor is O(r^{q_i - 1}) per ray near the diagonal, and the
        # symmetrized product does not cancel further
        self.diagonal_power = f.diagonal_power + g.diagonal_power - 2.0
        self.alpha_singularity = f.alpha_singularity + g.alpha_singularity

    def eval_pairs(self, X, Y):
        return self.f.eval_pairs(X, Y) * self.g.eval_pairs(X, Y)

    def support_radius_pair(self, x):
        return min(self.f.support_radius_pair(x), self.g.support_radius_pair(x))

    def far_model(self, x):
        mf = self.f.far_model(x)
        mg = self.g.far_model(x)
        if mf is None or mg is None:
            return None
        kind = "value" if (mf[0] == "value" and mg[0] == "value") else "bound"
        return (kind, mf[1] * mg[1], mf[2] + mg[2])


def nonlocal_scalar_product(f: NonlocalField, g: NonlocalField,
                            weight, box: Box, spec: QuadSpec) -> QuadResult:
    """⟨f, g⟩ against a radial weight: ∬ f(x,y) g(x,y) w(y-x) dy dx.

    The (symmetric) integrand must vanish when both points leave the box;
    the plane integral is then 2 ∬_{box x R^d} - ∬_{box x box}.
    """
    prod = _ProductPairField(f, g)
    total = 0
    ladder = []
    chart = box.charts()[0]
    for level in (0, 1):
        params, weights = _chart_nodes(chart, level, spec.grading_ratio)
        pts = chart.to_points(params)
        full_v, full_e, n_full = pv_values_batch(pts, prod, weight, spec)
        in0, m0 = region_inner_batch(box, weight, prod, pts, 0)
        in1, m1 = region_inner_batch(box, weight, prod, pts, 1)
        total += n_full + m0 + m1
        vals = 2.0 * full_v - in1
        errs = 2.0 * full_e + np.abs(in1 - in0)
        ladder.append((pairwise_sum(vals * weights),
                       pairwise_sum(errs * np.abs(weights))))
    return _ladder_result(spec, spec.seed, ladder, total)


@dataclass(frozen=True)
class DualityCheck:
    residual: float
    lhs: QuadResult        # ⟨div f, phi⟩
    rhs: QuadResult        # ⟨f, grad phi⟩ against mu/alpha

    @property
    def combined_error(self) -> float:
        return self.lhs.error_estimate + self.rhs.error_estimate


def duality_residual(ctx: OperatorContext, f: NonlocalField, phi: ScalarField,
                     box: Box | None = None) -> DualityCheck:
    """|⟨div f, phi⟩ + ⟨f, grad_alpha phi⟩_{mu/alpha}|.

    The plane integrals are realized over a support box for phi (built-in
    test functions decay fast enough that the box remainder is below the
    reported estimates).
    """
    if box is None:
        half = max(getattr(phi, "localization_radius", 4.0),
                   ctx.domain.bounding_radius())
        box = Box(ctx.domain.dim, [half] * ctx.domain.dim)
    chart = box.charts()[0]
    total = 0
    ladder = []
    for level in (0, 1):
        params, weights = _chart_nodes(chart, level, ctx.spec.grading_ratio)
        pts = chart.to_points(params)
        pv = np.asarray(phi.value(pts), dtype=float)
        live = np.abs(pv) > 1e-13 * max(phi.sup_bound, 1.0)
        vals = np.zeros(pts.shape[0])
        errs = np.zeros(pts.shape[0])
        if np.any(live):
            v, e, n = pv_values_batch(pts[live], f, ctx.pair.mu, ctx.spec)
            vals[live] = 2.0 * v * pv[live]
            errs[live] = 2.0 * e * np.abs(pv[live])
            total += n
        ladder.append((pairwise_sum(vals * weights),
                       pairwise_sum(errs * np.abs(weights))))
    lhs = _ladder_result(ctx.spec, ctx.spec.seed, ladder, total)

    gf = gradient_field(phi, ctx.pair.alpha)
    rhs = nonlocal_scalar_product(f, gf, ctx.pair.dual_weight(), box, ctx.spec)
    return DualityCheck(abs(lhs.value + rhs.value), lhs, rhs)

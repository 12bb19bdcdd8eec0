"""Classical vector fields with compact extensions, and the two-point
antisymmetric fields the nonlocal operators act on.

Two-point fields are evaluated in canonical order: for each pair the
lexicographically smaller point goes first and the result is negated if
the arguments came swapped.  Antisymmetry is therefore exact in floating
point, not just up to rounding, which is what makes the nonlocal
divergence theorem hold to quadrature error alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import RadialProfile, power_profile
from .quadrature import gauss_legendre, geometric_edges, panel_nodes, pairwise_sum

__all__ = [
    "VectorField",
    "ScalarField",
    "NonlocalField",
    "identity_field",
    "constant_field",
    "rotation_field",
    "gaussian_bump",
    "gaussian_gradient_field",
    "extend_compactly",
    "generate_nonlocal_field",
    "gradient_field",
    "difference_field",
    "normal_field",
    "custom_field",
    "unit_profile",
    "IntegrabilityReport",
    "check_pv_integrability",
]


# ---------------------------------------------------------------------------
# classical fields


@dataclass(frozen=True)
class VectorField:
    """F: R^d -> R^d with an analytic Jacobian and known compact support."""

    dim: int
    eval: object          # (n,d) -> (n,d)
    jacobian: object      # (n,d) -> (n,d,d)
    support_radius: float
    c1_bound: float

    def divergence(self, X):
        return np.trace(self.jacobian(np.atleast_2d(X)), axis1=1, axis2=2)

    def jacobian_fd(self, X, h: float = 1e-6):
        """Central finite differences, for checking the analytic Jacobian."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, d = X.shape
        J = np.zeros((n, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            J[:, :, k] = (self.eval(X + e) - self.eval(X - e)) / (2 * h)
        return J


@dataclass(frozen=True)
class ScalarField:
    """phi: R^d -> R with gradient.

    ``localization_radius`` bounds the region where values differ
    appreciably from ``inf_limit`` (the value at infinity, 0 for bumps);
    integrators size boxes and far-field models from both.
    """

    dim: int
    value: object        # (n,d) -> (n,)
    grad: object         # (n,d) -> (n,d)
    support_radius: float
    sup_bound: float
    localization_radius: float = 6.0
    inf_limit: float = 0.0

    def __call__(self, X):
        return self.value(np.atleast_2d(X))

    def as_gradient_vector_field(self, jac=None) -> VectorField:
        if jac is None:
            def jac_fd(X, h=1e-6):
                X = np.atleast_2d(X)
                n, d = X.shape
                J = np.zeros((n, d, d))
                for k in range(d):
                    e = np.zeros(d)
                    e[k] = h
                    J[:, :, k] = (self.grad(X + e) - self.grad(X - e)) / (2 * h)
                return J
            jac = jac_fd
        return VectorField(self.dim, self.grad, jac, self.support_radius, self.sup_bound)


def identity_field(d: int) -> VectorField:
    return VectorField(
        d,
        lambda X: np.atleast_2d(np.asarray(X, dtype=float)).copy(),
        lambda X: np.broadcast_to(np.eye(d), (np.atleast_2d(X).shape[0], d, d)).copy(),
        math.inf,
        math.inf,
    )


def constant_field(vec) -> VectorField:
    v = np.asarray(vec, dtype=float).reshape(-1)
    d = v.size
    return VectorField(
        d,
        lambda X: np.broadcast_to(v, (np.atleast_2d(X).shape[0], d)).copy(),
        lambda X: np.zeros((np.atleast_2d(X).shape[0], d, d)),
        math.inf,
        float(np.linalg.norm(v)),
    )


def rotation_field() -> VectorField:
    """Divergence-free planar rotation (-y, x)."""
    J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def ev(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([-X[:, 1], X[:, 0]], axis=1)

    return VectorField(2, ev,
                       lambda X: np.broadcast_to(J, (np.atleast_2d(X).shape[0], 2, 2)).copy(),
                       math.inf, math.inf)


def gaussian_bump(d: int, center=None, width: float = 0.6, amplitude: float = 1.0) -> ScalarField:
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    w2 = width * width

    def val(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r2 = np.einsum("ij,ij->i", X - c, X - c)
        return amplitude * np.exp(-r2 / (2 * w2))

    def grad(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return -(X - c) / w2 * val(X)[:, None]

    loc = float(np.linalg.norm(c)) + 8.0 * width
    return ScalarField(d, val, grad, math.inf, abs(amplitude), loc)


def gaussian_gradient_field(d: int, center=None, width: float = 0.6,
                            amplitude: float = 1.0) -> VectorField:
    """F = grad(phi) for a Gaussian bump phi; its divergence is the bump's
    Laplacian."""
    phi = gaussian_bump(d, center, width, amplitude)
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    w2 = width * width

    def jac(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = phi.value(X)
        D = X - c
        outer = np.einsum("ni,nj->nij", D, D) / w2
        return -(np.eye(d)[None, :, :] - outer) * (v / w2)[:, None, None]

    bound = abs(amplitude) / w2 * (1.0 + 1.0 / w2)
    return VectorField(d, phi.grad, jac, math.inf, bound)


def _smoothstep_down(u):
    """1 -> 0 cubic ramp on [0, 1] (C^1 at both ends)."""
    u = np.clip(u, 0.0, 1.0)
    return 1.0 - u * u * (3.0 - 2.0 * u)


def _smoothstep_down_deriv(u):
    inside = (u > 0.0) & (u < 1.0)
    return np.where(inside, -6.0 * u * (1.0 - u), 0.0)


def extend_compactly(F: VectorField, domain, margin: float) -> VectorField:
    """Multiply F by a C^1 cutoff of the signed distance.

    The cutoff is 1 on {sd <= margin/2} and 0 on {sd >= margin}, so the
    extension equals F on the closed domain exactly and is compactly
    supported.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    half = margin / 2.0

    def chi_only(X):
        # cheap bounds decide chi where possible (inside or near: 1; far:
        # 0); only the transition shell needs the exact signed distance
        bounds = domain.distance_bounds(X)
        if bounds is None:
            sd = domain.signed_distance(X)
            u = (sd - half) / half
            return _smoothstep_down(u)
        inside, lb, ub = bounds
        chi = np.zeros(X.shape[0])
        near = inside | (ub <= half)
        chi[near] = 1.0
        shell = ~near & (lb < margin)
        if np.any(shell):
            sd = domain.signed_distance(X[shell])
            chi[shell] = _smoothstep_down((sd - half) / half)
        return chi

    def chi_and_deriv(X):
        sd = domain.signed_distance(X)
        u = (sd - half) / half
        return _smoothstep_down(u), _smoothstep_down_deriv(u) / half, sd

    def ev(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return F.eval(X) * chi_only(X)[:, None]

    def jac(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        chi, dchi, _ = chi_and_deriv(X)
        J = F.jacobian(X) * chi[:, None, None]
        ramp = dchi != 0.0
        if np.any(ramp):
            grad_sd = domain.sd_gradient(X[ramp])
            J[ramp] += np.einsum("ni,nj->nij", F.eval(X[ramp]),
                                 dchi[ramp][:, None] * grad_sd)
        return J

    R_sup = float(np.linalg.norm(domain.center())) + domain.bounding_radius() + margin
    # coarse C1 bound over the support
    rng = np.random.default_rng(12345)
    sample = rng.uniform(-R_sup, R_sup, size=(512, F.dim))
    vals = np.linalg.norm(ev(sample), axis=1)
    jacs = np.abs(jac(sample)).sum(axis=(1, 2))
    c1 = float(np.max(vals) + np.max(jacs))
    return VectorField(F.dim, ev, jac, R_sup, c1)


# ---------------------------------------------------------------------------
# two-point fields


def _canonical_pairs(X, Y):
    """Lexicographic canonical order: (A, B, sign) with rows sorted and
    sign = -1 where the input pair was swapped, 0 where x == y."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    X = np.broadcast_to(np.asarray(X, dtype=float), Y.shape)
    d = X.shape[1]
    swap = np.zeros(X.shape[0], dtype=bool)
    decided = np.zeros(X.shape[0], dtype=bool)
    for k in range(d):
        gt = ~decided & (X[:, k] > Y[:, k])
        lt = ~decided & (X[:, k] < Y[:, k])
        swap |= gt
        decided |= gt | lt
    A = np.where(swap[:, None], Y, X)
    B = np.where(swap[:, None], X, Y)
    sign = np.where(decided, np.where(swap, -1.0, 1.0), 0.0)
    return A, B, sign


class NonlocalField:
    """Antisymmetric two-point scalar field f(x, y).

    ``raw`` is evaluated only on canonically ordered pairs; callers see an
    exactly antisymmetric function.  Metadata drives the pv engine:
    ``diagonal_power`` is the exponent q with f(x,x+h)+f(x,x-h) ~ c r^q,
    ``far_model(x)`` describes f(x, x+h) for large |h| as
    ("value"|"bound", coefficient, power), ``support_radius_pair(x)`` is a
    radius beyond which f(x, x+h) vanishes.
    """

    piecewise_constant = False

    def __init__(self, dim, raw, *, kind="custom", diagonal_power=2.0,
                 alpha_singularity=0.0, support_radius=math.inf, far=None):
        self.dim = dim
        self._raw = raw
        self.kind = kind
        self.diagonal_power = float(diagonal_power)
        self.alpha_singularity = float(alpha_singularity)
        self._support = support_radius
        self._far = far

    def eval_pairs(self, X, Y):
        A, B, sign = _canonical_pairs(X, Y)
        out = np.zeros(A.shape[0])
        live = sign != 0.0
        if np.any(live):
            out[live] = sign[live] * self._raw(A[live], B[live])
        return out

    def support_radius_pair(self, x) -> float:
        if callable(self._support):
            return float(self._support(x))
        return float(self._support)

    def far_model(self, x):
        if self._far is None:
            return None
        return self._far(np.asarray(x, dtype=float))


class _NormalField(NonlocalField):
    """sign(delta_y - delta_x) for the directed boundary distance of a
    domain: the two-point stand-in for the outward normal."""

    piecewise_constant = True

    def __init__(self, domain):
        self.domain = domain
        super().__init__(domain.dim, None, kind="normal", diagonal_power=1.0)

    def eval_pairs(self, X, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X = np.broadcast_to(np.asarray(X, dtype=float), Y.shape)
        return np.sign(self.domain.signed_distance(Y) - self.domain.signed_distance(X))

    def support_radius_pair(self, x):
        return math.inf

    def far_model(self, x):
        return ("value", 1.0, 0.0)

    def grading_axis(self, x):
        return self.domain.sd_gradient(np.atleast_2d(x))[0]

    def ray_breaks(self, x, dirs):
        x = np.asarray(x, dtype=float)
        level = float(self.domain.signed_distance(x[None, :])[0])
        n = np.atleast_2d(dirs).shape[0]
        origins = np.broadcast_to(x, (n, x.size))
        r_max = self.domain.reach_radius() + abs(level) + float(np.linalg.norm(x)) + 1.0
        t0 = 1e-9 * (1.0 + float(np.linalg.norm(x)))
        return self.domain.ray_level_crossings(origins, np.atleast_2d(dirs),
                                               r_max, level=level, t_start=t0)


def unit_profile(d: int) -> RadialProfile:
    """alpha == 1 (used by difference-type fields)."""
    return power_profile(1.0, 0.0, d)


def generate_nonlocal_field(F: VectorField, alpha: RadialProfile,
                            order: int = 8) -> NonlocalField:
    """Two-point field built from a classical field by a line integral:
    alpha(|x-y|) * GL_order approximation of ∫_0^1 F(x + t(y-x)).(y-x) dt,
    zero on the diagonal.

    GL_order is exact for polynomial F up to degree 2*order - 1, so the
    default order 8 is exact for every built-in test field.
    """
    if order < 2:
        raise ValueError("line-quadrature order must be at least 2")
    xg, wg = gauss_legendre(order)
    t = (xg + 1.0) / 2.0
    wt = wg / 2.0
    d = F.dim

    def raw(A, B):
        D = B - A
        pts = A[None, :, :] + t[:, None, None] * D[None, :, :]
        FV = np.asarray(F.eval(pts.reshape(-1, d)), dtype=float).reshape(order, -1, d)
        line = np.einsum("t,tnk,nk->n", wt, FV, D)
        return alpha.eval(np.linalg.norm(D, axis=1)) * line

    tail = alpha.tail_power_law()
    far = None
    support = alpha.support_radius
    if not np.isfinite(F.support_radius):
        support = math.inf if not np.isfinite(alpha.support_radius) else alpha.support_radius
    if np.isfinite(alpha.support_radius):
        sup_of_pair = alpha.support_radius
    else:
        sup_of_pair = math.inf
        if tail is not None and tail[0] != 0.0 and np.isfinite(F.support_radius):
            coef = tail[0] * 2.0 * F.support_radius * F.c1_bound
            far = lambda x, c=coef, p=tail[1]: ("bound", c, p)

    return NonlocalField(d, raw, kind="generated",
                         diagonal_power=2.0 - alpha.singularity_exponent,
                         alpha_singularity=alpha.singularity_exponent,
                         support_radius=sup_of_pair, far=far)


def gradient_field(phi: ScalarField, alpha: RadialProfile) -> NonlocalField:
    """alpha(|y-x|) (phi(y) - phi(x)): the two-point gradient of phi."""
    def raw(A, B):
        return alpha.eval(np.linalg.norm(B - A, axis=1)) * (phi.value(B) - phi.value(A))

    far = None
    tail = alpha.tail_power_law()
    phi_inf = getattr(phi, "inf_limit", 0.0)
    if np.isfinite(alpha.support_radius):
        support = alpha.support_radius
    else:
        support = math.inf
        if tail is not None:
            far = lambda x, c=tail[0], p=tail[1]: (
                "value", (phi_inf - float(phi.value(x[None, :])[0])) * c, p)
    return NonlocalField(phi.dim, raw, kind="gradient",
                         diagonal_power=2.0 - alpha.singularity_exponent,
                         alpha_singularity=alpha.singularity_exponent,
                         support_radius=support, far=far)


def difference_field(phi: ScalarField) -> NonlocalField:
    """f(x, y) = phi(x) - phi(y); bridges the scalar operators L/N to the
    two-point divergence and normal operators."""
    def raw(A, B):
        return phi.value(A) - phi.value(B)

    phi_inf = getattr(phi, "inf_limit", 0.0)
    far = lambda x: ("value", float(phi.value(x[None, :])[0]) - phi_inf, 0.0)
    return NonlocalField(phi.dim, raw, kind="difference", diagonal_power=2.0,
                         support_radius=math.inf, far=far)


def normal_field(domain) -> NonlocalField:
    return _NormalField(domain)


def custom_field(dim, raw, *, diagonal_power=2.0, alpha_singularity=0.0,
                 support_radius=math.inf, far=None, kind="custom") -> NonlocalField:
    return NonlocalField(dim, raw, kind=kind, diagonal_power=diagonal_power,
                         alpha_singularity=alpha_singularity,
                         support_radius=support_radius, far=far)


# ---------------------------------------------------------------------------
# pointwise well-posedness diagnostics


@dataclass(frozen=True)
class IntegrabilityReport:
    passes: bool
    near_value: float        # symmetrized mass on the unit ball
    far_value: float         # |f| mass outside the unit ball
    near_converged: bool
    far_converged: bool
    detail: str = ""


def check_pv_integrability(f: NonlocalField, pair, x, n_dirs: int = 32) -> IntegrabilityReport:
    """Estimate the two masses that control existence of the pv integral:
    the symmetrized |f(x,x+h) + f(x,x-h)| mass near the diagonal and the
    plain |f| mass away from it, both against the pair's measure.

    Divergence is detected from the growth of dyadic level sums (guarded
    at 1e12); failures are reported, not raised.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = f.dim
    mu = pair.mu
    dirs, aw = half_sphere_dirs_cached(d, n_dirs)

    def level_sums(edges):
        r, rw = panel_nodes(edges, 6)
        H = r[:, None, None] * dirs[None, :, :]
        Yp = (x[None, None, :] + H).reshape(-1, d)
        Ym = (x[None, None, :] - H).reshape(-1, d)
        S = np.abs(f.eval_pairs(x, Yp) + f.eval_pairs(x, Ym)).reshape(r.size, -1)
        integ = (rw * mu.eval(r) * r ** (d - 1))[:, None] * S
        return (integ * aw[None, :]).reshape(-1, 6, dirs.shape[0]).sum(axis=(1, 2))

    edges = geometric_edges(0.0, 1.0, 0.5, 30)
    levels = level_sums(edges)[::-1]  # finest level last
    partial = float(np.sum(levels))
    ratios = levels[-5:][1:] / np.where(levels[-5:][:-1] == 0, 1.0, levels[-5:][:-1])
    near_diverges = partial > 1e12 or (levels[-1] > 0 and float(np.max(ratios)) > 0.98)
    near = partial if not near_diverges else math.inf

    # far part: plain |f| against mu on dyadic shells outward
    far_total = 0.0
    far_diverges = False
    prev_level = None
    cur = 1.0
    for _ in range(40):
        r, rw = panel_nodes(np.array([cur, 2 * cur]), 6)
        H = r[:, None, None] * dirs[None, :, :]
        Yp = (x[None, None, :] + H).reshape(-1, d)
        Ym = (x[None, None, :] - H).reshape(-1, d)
        # both hemispheres: use |f| at +h and -h
        S = np.abs(f.eval_pairs(x, Yp)) + np.abs(f.eval_pairs(x, Ym))
        S = S.reshape(r.size, -1)
        lvl = float((((rw * mu.eval(r) * r ** (d - 1))[:, None] * S) * aw[None, :]).sum())
        far_total += lvl
        if far_total > 1e12 or (prev_level is not None and prev_level > 0
                                and lvl > prev_level * 1.02):
            far_diverges = True
            break
        if lvl < 1e-14 * max(1.0, far_total):
            break
        prev_level = lvl
        cur *= 2
    far = far_total if not far_diverges else math.inf

    passes = not (near_diverges or far_diverges)
    detail = ""
    if near_diverges:
        detail = "symmetrized mass near the diagonal diverges"
    elif far_diverges:
        detail = "field mass away from the diagonal diverges"
    return IntegrabilityReport(passes, near, far, not near_diverges,
                               not far_diverges, detail)


_half_cache = {}


def half_sphere_dirs_cached(d, n):
    key = (d, n)
    if key not in _half_cache:
        from .quadrature import half_sphere_directions

        level = max(0, int(np.ceil(np.log2(max(1, n // 8)))))
        _half_cache[key] = half_sphere_directions(d, level)
    return _half_cache[key]

"""Domains with exact signed distance, boundary quadrature, exterior collars,
and piecewise-C1 boundary decompositions.

Shapes are deliberately few (ball, box, ellipse, L-shape, half-space) but
carry everything the integration engine asks of them: charted volume
parameterizations, batched ray/section queries against the boundary, and
nearest-point projection.  Signed distances are exact except for the
ellipse, which projects by Newton iteration on the parametric angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import gauss_legendre, panel_nodes, pairwise_sum, rng_stream

__all__ = [
    "Domain",
    "Chart",
    "BoundaryQuadrature",
    "CollarQuadrature",
    "PiecewiseDecomposition",
    "make_ball",
    "make_box",
    "make_ellipse",
    "make_lshape",
    "make_halfspace",
    "boundary_quadrature",
    "collar_points",
    "decompose_piecewise",
    "nearest_boundary_point",
]


@dataclass(frozen=True)
class Chart:
    """Smooth parameterization of a piece of a domain's volume."""

    to_points: object          # (n,k) params -> (n,d) points
    jacobian: object           # (n,k) params -> (n,) volume factors
    bounds: tuple              # ((lo, hi), ...) per parameter axis
    grade_lo: tuple = ()       # per-axis: pack nodes toward the lower end
    grade_hi: tuple = ()


@dataclass(frozen=True)
class BoundaryQuadrature:
    nodes: np.ndarray      # (m, d) points on the boundary
    weights: np.ndarray    # (m,) positive, summing ~ surface measure
    normals: np.ndarray    # (m, d) outward unit normals
    resolution: int

    def flux(self, F) -> float:
        """Sum of w_i F(z_i) . n_i — the discrete surface flux."""
        vals = np.einsum("id,id->i", np.asarray(F(self.nodes), dtype=float), self.normals)
        return pairwise_sum(vals * self.weights)


@dataclass(frozen=True)
class CollarQuadrature:
    points: np.ndarray     # (m, d) points in the exterior collar
    weights: np.ndarray    # (m,) volume weights
    face_index: np.ndarray  # (m,) owning face, -1 for corner/leftover pieces
    eps: float
    resolution: int

    @property
    def total_weight(self) -> float:
        return pairwise_sum(self.weights)


class Domain:
    """Base class; subclasses fill in shape-specific geometry."""

    dim: int
    smoothness: str  # "C1" or "PiecewiseC1"

    # -- predicates ---------------------------------------------------------

    def signed_distance(self, X) -> np.ndarray:
        raise NotImplementedError

    def inside(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.signed_distance(X) < 0.0

    def sd_gradient(self, X, h: float = 1e-6) -> np.ndarray:
        """Gradient of the signed distance (central differences by default)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        g = np.zeros_like(X)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            g[:, k] = (self.signed_distance(X + e) - self.signed_distance(X - e)) / (2 * h)
        return g

    def distance_bounds(self, X):
        """Optional cheap (inside_mask, lower_bound, upper_bound) on the
        exterior distance to the boundary.

        Used by hot paths to skip the exact signed distance where a bound
        already decides the answer.  None means no cheap bound exists.
        """
        return None

    # -- extents ------------------------------------------------------------

    @property
    def bounding_box(self):
        raise NotImplementedError

    def center(self) -> np.ndarray:
        lo, hi = self.bounding_box
        return (lo + hi) / 2.0

    def bounding_radius(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - self.center()))

    def reach_radius(self) -> float:
        """Radius r such that B_r(x) covers the domain for any x in it."""
        return 2.0 * self.bounding_radius()

    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    def volume(self) -> float:
        raise NotImplementedError

    def charts(self, boundary_graded: bool = False):
        raise NotImplementedError

    # -- rays ---------------------------------------------------------------

    def ray_level_crossings(self, origins, dirs, r_max, level=0.0,
                            n_scan: int = 96, t_start: float = 0.0):
        """Radii where sd(origin + t dir) crosses ``level`` on (t_start, r_max].

        Batched: origins/dirs are (n, d).  Returns a list of n increasing
        arrays.  The scan interval is first clipped to the sphere that
        contains the relevant level set, so far-away origins do not lose
        resolution; brackets from the uniform scan are sharpened by
        bisection.  A positive ``t_start`` keeps rays cast from a point of
        the level set itself from reporting the base point as a crossing.
        Crossings closer together than the clipped scan step may be
        missed; built-in shapes at the resolutions used here are safe.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=float))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        n = origins.shape[0]
        r_max = np.broadcast_to(np.asarray(r_max, dtype=float), (n,)).astype(float)
        # clip to the sphere containing {sd <= |level|} with margin
        c = self.center()
        R_clip = self.bounding_radius() + abs(level) + 0.5
        oc = origins - c
        b = np.einsum("ij,ij->i", oc, dirs)
        disc = b**2 - (np.einsum("ij,ij->i", oc, oc) - R_clip**2)
        hits = disc > 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_lo = np.clip(-b - sq, t_start, r_max)
        t_hi = np.clip(-b + sq, t_start, r_max)
        t_lo = np.where(hits, t_lo, t_start)
        t_hi = np.where(hits, t_hi, t_start)
        ts = np.linspace(0.0, 1.0, n_scan + 1)
        T = t_lo[:, None] + ts[None, :] * (t_hi - t_lo)[:, None]   # (n, m+1)
        P = origins[:, None, :] + T[..., None] * dirs[:, None, :]
        sd = self.signed_distance(P.reshape(-1, self.dim)).reshape(n, n_scan + 1) - level
        sgn = sd > 0.0
        flip = sgn[:, 1:] != sgn[:, :-1]
        ray_idx, seg_idx = np.nonzero(flip)
        lo = T[ray_idx, seg_idx]
        hi = T[ray_idx, seg_idx + 1]
        f_lo = sd[ray_idx, seg_idx]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            pts = origins[ray_idx] + mid[:, None] * dirs[ray_idx]
            f_mid = self.signed_distance(pts) - level
            take_lo = (f_mid > 0.0) == (f_lo > 0.0)
            lo = np.where(take_lo, mid, lo)
            f_lo = np.where(take_lo, f_mid, f_lo)
            hi = np.where(take_lo, hi, mid)
        roots = 0.5 * (lo + hi)
        out = [np.empty(0)] * n
        order = np.lexsort((roots, ray_idx))
        ray_sorted = ray_idx[order]
        roots_sorted = roots[order]
        starts = np.searchsorted(ray_sorted, np.arange(n))
        stops = np.searchsorted(ray_sorted, np.arange(n), side="right")
        for i in range(n):
            out[i] = roots_sorted[starts[i]:stops[i]]
        return out

    def exterior_ray_data(self, X, dirs, r_max):
        """Exterior sections as padded arrays.

        For each x in X (inside the domain) and each direction, the radii
        where the ray leaves/re-enters the domain. Returns (A, B) of shape
        (n_x, n_dir, m): section k is (A[...,k], B[...,k]), padded with
        NaN; the last real section always has B = inf (r_max must see the
        whole domain).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        n_x, n_dir = X.shape[0], dirs.shape[0]
        O = np.repeat(X, n_dir, axis=0)
        D = np.tile(dirs, (n_x, 1))
        crossings = self.ray_level_crossings(O, D, r_max)
        max_c = max((len(c) for c in crossings), default=1)
        if max_c % 2 == 1:
            max_c += 1
        m = max(1, max_c // 2)
        A = np.full((n_x * n_dir, m), np.nan)
        B = np.full((n_x * n_dir, m), np.nan)
        for i, c in enumerate(crossings):
            if len(c) == 0:
                # x inside and no crossing within r_max: treat as fully inside
                continue
            # from inside: odd-indexed crossings are exits, even re-entries
            exits = c[0::2]
            entries = c[1::2]
            for k, a in enumerate(exits):
                A[i, k] = a
                B[i, k] = entries[k] if k < len(entries) else np.inf
        return A.reshape(n_x, n_dir, m), B.reshape(n_x, n_dir, m)

    def interior_ray_sections(self, X, dirs, r_max):
        """Sections of the ray lying inside the domain (x typically outside).

        Returns padded (A, B) as in exterior_ray_data; sections are finite.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        n_x, n_dir = X.shape[0], dirs.shape[0]
        O = np.repeat(X, n_dir, axis=0)
        D = np.tile(dirs, (n_x, 1))
        start_inside = self.inside(O)
        crossings = self.ray_level_crossings(O, D, r_max)
        m = max(1, max(((len(c) + 1) // 2 for c in crossings), default=1))
        A = np.full((n_x * n_dir, m), np.nan)
        B = np.full((n_x * n_dir, m), np.nan)
        for i, c in enumerate(crossings):
            pts = list(c)
            if start_inside[i]:
                pts = [0.0] + pts
            k = 0
            for j in range(0, len(pts) - 1, 2):
                A[i, k] = pts[j]
                B[i, k] = pts[j + 1]
                k += 1
            if len(pts) % 2 == 1:
                # still inside at r_max; clamp (should not happen with a
                # generous r_max)
                A[i, k] = pts[-1]
                B[i, k] = np.inf
        return A.reshape(n_x, n_dir, m), B.reshape(n_x, n_dir, m)

    def first_exit_batch(self, X, dirs):
        """Distance to the boundary along dirs from interior points X."""
        r_max = np.full(X.shape[0], self.reach_radius())
        out = np.empty(X.shape[0])
        crossings = self.ray_level_crossings(X, dirs, r_max)
        for i, c in enumerate(crossings):
            out[i] = c[0] if len(c) else r_max[i]
        return out

    # -- boundary -----------------------------------------------------------

    def nearest_boundary(self, x):
        raise NotImplementedError

    def surface_measure(self) -> float:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# shapes


class Ball(Domain):
    def __init__(self, d, center, radius):
        if radius <= 0:
            raise ValueError("radius must be positive")
        if d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")
        self.dim = d
        self.c = np.asarray(center, dtype=float).reshape(d)
        self.r = float(radius)
        self.smoothness = "C1"

    def signed_distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.linalg.norm(X - self.c, axis=1) - self.r

    def sd_gradient(self, X, h=1e-6):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = X - self.c
        nrm = np.linalg.norm(v, axis=1, keepdims=True)
        nrm = np.where(nrm == 0.0, 1.0, nrm)
        return v / nrm

    @property
    def bounding_box(self):
        pad = self.r + 1.1
        return self.c - pad, self.c + pad

    def volume(self):
        from .quadrature import unit_ball_volume

        return unit_ball_volume(self.dim) * self.r**self.dim

    def surface_measure(self):
        from .quadrature import sphere_area

        return sphere_area(self.dim) * self.r ** (self.dim - 1)

    def charts(self, boundary_graded=False):
        d, c, R = self.dim, self.c, self.r
        if d == 1:
            return [Chart(lambda p: c + p, lambda p: np.ones(p.shape[0]),
                          ((-R, R),),
                          (boundary_graded,), (boundary_graded,))]
        if d == 2:
            def to_pts(p):
                return c + np.stack([p[:, 0] * np.cos(p[:, 1]),
                                     p[:, 0] * np.sin(p[:, 1])], axis=1)

            return [Chart(to_pts, lambda p: p[:, 0],
                          ((0.0, R), (0.0, 2 * np.pi)),
                          (False, False), (boundary_graded, False))]

        def to_pts3(p):
            r, z, ph = p[:, 0], p[:, 1], p[:, 2]
            rho = np.sqrt(np.maximum(1.0 - z**2, 0.0))
            return c + np.stack([r * rho * np.cos(ph), r * rho * np.sin(ph), r * z], axis=1)

        return [Chart(to_pts3, lambda p: p[:, 0] ** 2,
                      ((0.0, R), (-1.0, 1.0), (0.0, 2 * np.pi)),
                      (False, False, False), (boundary_graded, False, False))]

    def nearest_boundary(self, x):
        x = np.asarray(x, dtype=float)
        v = x - self.c
        nrm = float(np.linalg.norm(v))
        if nrm == 0.0:
            z = self.c.copy()
            z[0] -= self.r  # deterministic tie-break: lexicographically smallest
            return z, -self.r
        return self.c + self.r * v / nrm, nrm - self.r


class Box(Domain):
    def __init__(self, d, half_widths, center=None):
        hw = np.asarray(half_widths, dtype=float).reshape(-1)
        if hw.size != d:
            raise ValueError("need one half-width per axis")
        if np.any(hw <= 0):
            raise ValueError("half-widths must be positive")
        if d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")
        self.dim = d
        self.hw = hw
        self.c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        self.smoothness = "PiecewiseC1"

    def signed_distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = np.abs(X - self.c) - self.hw
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    @property
    def bounding_box(self):
        pad = self.hw + 1.1
        return self.c - pad, self.c + pad

    def volume(self):
        return float(np.prod(2.0 * self.hw))

    def surface_measure(self):
        if self.dim == 1:
            return 2.0
        if self.dim == 2:
            return float(4.0 * np.sum(self.hw))
        a, b, cc = 2.0 * self.hw
        return float(2.0 * (a * b + b * cc + a * cc))

    def charts(self, boundary_graded=False):
        lo = self.c - self.hw
        hi = self.c + self.hw
        g = tuple([boundary_graded] * self.dim)
        return [Chart(lambda p: p.copy(), lambda p: np.ones(p.shape[0]),
                      tuple((lo[k], hi[k]) for k in range(self.dim)), g, g)]

    def nearest_boundary(self, x):
        x = np.asarray(x, dtype=float)
        t = float(self.signed_distance(x[None, :])[0])
        if t >= 0.0:
            z = np.clip(x, self.c - self.hw, self.c + self.hw)
            return z, t
        # interior: project to the nearest face; tie -> lexicographically
        # smallest projected point
        best = None
        for k in range(self.dim):
            for sgn in (-1.0, 1.0):
                z = x.copy()
                z[k] = self.c[k] + sgn * self.hw[k]
                dist = abs(z[k] - x[k])
                key = (dist, tuple(z))
                if best is None or key < best[0]:
                    best = (key, z)
        return best[1], t

    def faces(self):
        """(p0, p1, outward normal) per edge, d=2 only, counterclockwise."""
        if self.dim != 2:
            raise NotImplementedError("faces() is 2-D only")
        a, b = self.hw
        cx, cy = self.c
        return [
            (np.array([cx - a, cy - b]), np.array([cx + a, cy - b]), np.array([0.0, -1.0])),
            (np.array([cx + a, cy - b]), np.array([cx + a, cy + b]), np.array([1.0, 0.0])),
            (np.array([cx + a, cy + b]), np.array([cx - a, cy + b]), np.array([0.0, 1.0])),
            (np.array([cx - a, cy + b]), np.array([cx - a, cy - b]), np.array([-1.0, 0.0])),
        ]


class Ellipse(Domain):
    """Axis-aligned ellipse x^2/a^2 + y^2/b^2 = 1 (d = 2)."""

    def __init__(self, a, b):
        if a <= 0 or b <= 0:
            raise ValueError("semi-axes must be positive")
        self.dim = 2
        self.a = float(a)
        self.b = float(b)
        self.smoothness = "C1"

    def _project_angle(self, X):
        """Parametric angles of nearest boundary points: Newton from a
        coarse-grid argmin seed (interior points near the medial axis have
        several critical angles, and the naive seed can pick a far one)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a, b = self.a, self.b
        grid = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        bpts = np.stack([a * np.cos(grid), b * np.sin(grid)], axis=1)
        d2 = ((X[:, None, :] - bpts[None, :, :]) ** 2).sum(axis=2)
        th = grid[np.argmin(d2, axis=1)]
        for _ in range(64):
            ct, st = np.cos(th), np.sin(th)
            # g(th) = (a ct - x) (-a st) + (b st - y) (b ct)
            g = (a * ct - X[:, 0]) * (-a * st) + (b * st - X[:, 1]) * (b * ct)
            dg = (a * st) ** 2 - (a * ct - X[:, 0]) * a * ct + (b * ct) ** 2 \
                - (b * st - X[:, 1]) * b * st
            step = np.where(np.abs(dg) > 1e-14, g / np.where(dg == 0, 1.0, dg), 0.0)
            step = np.clip(step, -0.5, 0.5)
            th = th - step
            if np.max(np.abs(step)) < 1e-14:
                break
        else:
            pass
        # dense fallback for any point that failed to settle
        bad = np.abs((a * np.cos(th) - X[:, 0]) * (-a * np.sin(th))
                     + (b * np.sin(th) - X[:, 1]) * b * np.cos(th)) > 1e-8
        if np.any(bad):
            grid = np.linspace(0, 2 * np.pi, 720, endpoint=False)
            bpts = np.stack([a * np.cos(grid), b * np.sin(grid)], axis=1)
            for i in np.nonzero(bad)[0]:
                th[i] = grid[np.argmin(np.linalg.norm(bpts - X[i], axis=1))]
        return th

    def signed_distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        th = self._project_angle(X)
        z = np.stack([self.a * np.cos(th), self.b * np.sin(th)], axis=1)
        dist = np.linalg.norm(X - z, axis=1)
        inside = (X[:, 0] / self.a) ** 2 + (X[:, 1] / self.b) ** 2 < 1.0
        return np.where(inside, -dist, dist)

    @property
    def bounding_box(self):
        pad = np.array([self.a, self.b]) + 1.1
        return -pad, pad

    def volume(self):
        return math.pi * self.a * self.b

    def surface_measure(self):
        # arc length by quadrature of |z'(theta)|
        th, w = panel_nodes(np.linspace(0, 2 * np.pi, 65), 8)
        sp = np.sqrt((self.a * np.sin(th)) ** 2 + (self.b * np.cos(th)) ** 2)
        return pairwise_sum(w * sp)

    def curvature(self, th):
        a, b = self.a, self.b
        return a * b / ((a * np.sin(th)) ** 2 + (b * np.cos(th)) ** 2) ** 1.5

    def charts(self, boundary_graded=False):
        a, b = self.a, self.b

        def to_pts(p):
            return np.stack([a * p[:, 0] * np.cos(p[:, 1]),
                             b * p[:, 0] * np.sin(p[:, 1])], axis=1)

        return [Chart(to_pts, lambda p: a * b * p[:, 0],
                      ((0.0, 1.0), (0.0, 2 * np.pi)),
                      (False, False), (boundary_graded, False))]

    def nearest_boundary(self, x):
        x = np.asarray(x, dtype=float)
        th = self._project_angle(x[None, :])[0]
        z = np.array([self.a * np.cos(th), self.b * np.sin(th)])
        t = float(self.signed_distance(x[None, :])[0])
        return z, t


class LShape(Domain):
    """(-1,1)^2 minus the closed first-quadrant unit square, d = 2."""

    #: boundary vertices, counterclockwise
    VERTS = np.array([
        [-1.0, -1.0], [1.0, -1.0], [1.0, 0.0],
        [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0],
    ])

    def __init__(self):
        self.dim = 2
        self.smoothness = "PiecewiseC1"
        v = self.VERTS
        nxt = np.roll(v, -1, axis=0)
        self._p0 = v
        self._p1 = nxt
        tang = nxt - v
        ln = np.linalg.norm(tang, axis=1, keepdims=True)
        self._tang = tang / ln
        self._len = ln[:, 0]
        # outward normal: rotate tangent by -90deg for a ccw polygon... but
        # the notch edges run clockwise around the removed square; fix signs
        # via a midpoint test below.
        nrm = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / ln
        mids = (v + nxt) / 2.0
        probe = mids + 1e-6 * nrm
        flip = self._inside_raw(probe)
        self._nrm = np.where(flip[:, None], -nrm, nrm)

    @staticmethod
    def _inside_raw(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        in_big = np.all(np.abs(X) < 1.0, axis=1)
        in_notch = (X[:, 0] >= 0.0) & (X[:, 1] >= 0.0)
        return in_big & ~in_notch

    def inside(self, X):
        return self._inside_raw(X)

    def signed_distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        # exact distance to the 6-segment polygon, all segments at once
        V = X[:, None, :] - self._p0[None, :, :]                  # (n, 6, 2)
        s = np.clip(np.einsum("nkj,kj->nk", V, self._tang), 0.0, self._len[None, :])
        W = V - s[:, :, None] * self._tang[None, :, :]
        d2 = np.min(np.einsum("nkj,nkj->nk", W, W), axis=1)
        dist = np.sqrt(d2)
        return np.where(self._inside_raw(X), -dist, dist)

    def distance_bounds(self, X):
        # lower bound: the boundary sits inside (outer box bd) U (notch
        # box bd), so the distance to that union is a lower bound;
        # upper bound: the closure contains three unit sub-squares, so the
        # smallest box distance to them bounds the exterior distance above
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q1 = np.abs(X) - 1.0
        d_outer = np.abs(np.linalg.norm(np.maximum(q1, 0.0), axis=1)
                         + np.minimum(np.max(q1, axis=1), 0.0))
        q2 = np.abs(X - 0.5) - 0.5
        d_notch = np.abs(np.linalg.norm(np.maximum(q2, 0.0), axis=1)
                         + np.minimum(np.max(q2, axis=1), 0.0))
        lb = np.minimum(d_outer, d_notch)
        ub = np.full(X.shape[0], np.inf)
        for cx, cy in ((-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5)):
            q = np.abs(X - (cx, cy)) - 0.5
            ub = np.minimum(ub, np.linalg.norm(np.maximum(q, 0.0), axis=1))
        return self._inside_raw(X), lb, ub

    @property
    def bounding_box(self):
        pad = np.array([1.0, 1.0]) + 1.1
        return -pad, pad

    def volume(self):
        return 3.0

    def surface_measure(self):
        return float(np.sum(self._len))

    def star_center(self):
        return np.array([-0.5, -0.5])

    def charts(self, boundary_graded=False):
        boxes = [
            ((-1.0, 0.0), (-1.0, 0.0), (True, False), (True, False)),   # SW
            ((0.0, 1.0), (-1.0, 0.0), (False, True), (True, True)),     # SE
            ((-1.0, 0.0), (0.0, 1.0), (True, False), (False, True)),    # NW
        ]
        out = []
        for (x0, x1), (y0, y1), (glx, ghx), (gly, ghy) in boxes:
            g_lo = (glx and boundary_graded, gly and boundary_graded)
            g_hi = (ghx and boundary_graded, ghy and boundary_graded)
            out.append(Chart(lambda p: p.copy(), lambda p: np.ones(p.shape[0]),
                             ((x0, x1), (y0, y1)), g_lo, g_hi))
        return out

    def faces(self):
        return [(self._p0[k], self._p1[k], self._nrm[k]) for k in range(6)]

    def nearest_boundary(self, x):
        x = np.asarray(x, dtype=float)
        best = None
        for k in range(6):
            p0, t, ln = self._p0[k], self._tang[k], self._len[k]
            s = float(np.clip((x - p0) @ t, 0.0, ln))
            z = p0 + s * t
            dist = float(np.linalg.norm(x - z))
            key = (round(dist, 14), tuple(np.round(z, 14)))
            if best is None or key < best[0]:
                best = (key, z, dist)
        t = best[2] if not self._inside_raw(x[None, :])[0] else -best[2]
        return best[1], t


class HalfSpace(Domain):
    """{x : x_d < 0}; unbounded, supports distance/ray queries only."""

    def __init__(self, d):
        if d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")
        self.dim = d
        self.smoothness = "C1"

    def signed_distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X[:, -1].copy()

    def sd_gradient(self, X, h=1e-6):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        g = np.zeros_like(X)
        g[:, -1] = 1.0
        return g

    @property
    def bounding_box(self):
        big = np.full(self.dim, 64.0)
        return -big, big

    def reach_radius(self):
        return 128.0

    def nearest_boundary(self, x):
        x = np.asarray(x, dtype=float)
        z = x.copy()
        z[-1] = 0.0
        return z, float(x[-1])

    def volume(self):
        raise NotImplementedError("half-space has infinite volume")

    def charts(self, boundary_graded=False):
        raise NotImplementedError("half-space has no volume charts")


# ---------------------------------------------------------------------------
# constructors (CLI registry targets)


def make_ball(d, center=None, radius=1.0) -> Ball:
    return Ball(d, np.zeros(d) if center is None else center, radius)


def make_box(d, half_widths) -> Box:
    return Box(d, half_widths)


def make_ellipse(a, b) -> Ellipse:
    return Ellipse(a, b)


def make_lshape() -> LShape:
    return LShape()


def make_halfspace(d=2) -> HalfSpace:
    return HalfSpace(d)


def nearest_boundary_point(domain: Domain, x):
    """Nearest boundary point and the signed distance, deterministic ties."""
    return domain.nearest_boundary(x)


# ---------------------------------------------------------------------------
# boundary quadrature


def boundary_quadrature(domain: Domain, n: int) -> BoundaryQuadrature:
    """Nodes/weights/normals for the surface measure of the boundary.

    Midpoint rules in chart parameters: spectrally accurate for smooth
    closed curves, exact per face for polygons, product rule on the
    sphere.
    """
    if n < 8:
        raise ValueError("resolution must be at least 8")
    if isinstance(domain, Ball) and domain.dim == 2:
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        nrm = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        nodes = domain.c + domain.r * nrm
        w = np.full(n, 2 * np.pi * domain.r / n)
        return BoundaryQuadrature(nodes, w, nrm, n)
    if isinstance(domain, Ball) and domain.dim == 3:
        xz, wz = gauss_legendre(n)
        k = 2 * n
        phi = 2 * np.pi * (np.arange(k) + 0.5) / k
        Z, P = np.meshgrid(xz, phi, indexing="ij")
        rho = np.sqrt(1 - Z**2)
        nrm = np.stack([rho * np.cos(P), rho * np.sin(P), Z], axis=-1).reshape(-1, 3)
        nodes = domain.c + domain.r * nrm
        w = (np.outer(wz, np.full(k, 2 * np.pi / k)) * domain.r**2).ravel()
        return BoundaryQuadrature(nodes, w, nrm, n)
    if isinstance(domain, Ball) and domain.dim == 1:
        nodes = domain.c + np.array([[-domain.r], [domain.r]])
        return BoundaryQuadrature(nodes, np.ones(2), np.array([[-1.0], [1.0]]), n)
    if isinstance(domain, Ellipse):
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        nodes = np.stack([domain.a * np.cos(ang), domain.b * np.sin(ang)], axis=1)
        sp = np.sqrt((domain.a * np.sin(ang)) ** 2 + (domain.b * np.cos(ang)) ** 2)
        w = sp * (2 * np.pi / n)
        nrm = np.stack([domain.b * np.cos(ang), domain.a * np.sin(ang)], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        return BoundaryQuadrature(nodes, w, nrm, n)
    if isinstance(domain, (Box, LShape)) and domain.dim == 2:
        nodes, wts, nrms = [], [], []
        for (p0, p1, nv) in domain.faces():
            ln = float(np.linalg.norm(p1 - p0))
            m = max(4, int(round(n * ln / domain.surface_measure())))
            s = (np.arange(m) + 0.5) / m
            nodes.append(p0[None, :] + s[:, None] * (p1 - p0)[None, :])
            wts.append(np.full(m, ln / m))
            nrms.append(np.tile(nv, (m, 1)))
        return BoundaryQuadrature(np.concatenate(nodes), np.concatenate(wts),
                                  np.concatenate(nrms), n)
    if isinstance(domain, Box) and domain.dim == 3:
        nodes, wts, nrms = [], [], []
        lo, hi = domain.c - domain.hw, domain.c + domain.hw
        for axis in range(3):
            for side, val in ((-1.0, lo[axis]), (1.0, hi[axis])):
                others = [k for k in range(3) if k != axis]
                m = max(4, n // 2)
                grids = np.meshgrid(*[
                    lo[k] + (hi[k] - lo[k]) * (np.arange(m) + 0.5) / m for k in others
                ], indexing="ij")
                pts = np.zeros((m * m, 3))
                pts[:, axis] = val
                pts[:, others[0]] = grids[0].ravel()
                pts[:, others[1]] = grids[1].ravel()
                area = np.prod([(hi[k] - lo[k]) for k in others])
                nv = np.zeros(3)
                nv[axis] = side
                nodes.append(pts)
                wts.append(np.full(m * m, area / (m * m)))
                nrms.append(np.tile(nv, (m * m, 1)))
        return BoundaryQuadrature(np.concatenate(nodes), np.concatenate(wts),
                                  np.concatenate(nrms), n)
    raise NotImplementedError(f"no boundary rule for {type(domain).__name__}")


# ---------------------------------------------------------------------------
# exterior collar


def collar_points(domain: Domain, eps: float, n: int, seed: int = 0) -> CollarQuadrature:
    """Weighted points covering the exterior collar of width ``eps``.

    d=2: boundary-fitted product rule (face slabs with exact clipping at
    the L-shape notch, plus quarter-disk sectors at convex corners;
    curvature-corrected offsets for curved boundaries) — the weights tile
    the collar measure exactly up to the rule's own accuracy.
    d=3: stratified Monte Carlo with one RNG stream per stratum.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0,1)")
    if n < 1:
        raise ValueError("n must be positive")
    xg, wg = gauss_legendre(8)
    t_nodes = eps * (xg + 1) / 2.0
    t_w = eps * wg / 2.0

    if isinstance(domain, Ball) and domain.dim == 2:
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        nrm = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pts = domain.c[None, None, :] + (domain.r + t_nodes)[None, :, None] * nrm[:, None, :]
        w_ang = 2 * np.pi * domain.r / n
        W = w_ang * t_w[None, :] * (1.0 + t_nodes[None, :] / domain.r)
        W = np.broadcast_to(W, (n, t_nodes.size))
        return CollarQuadrature(pts.reshape(-1, 2), W.ravel(),
                                np.zeros(n * t_nodes.size, dtype=int), eps, n)
    if isinstance(domain, Ellipse):
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        z = np.stack([domain.a * np.cos(ang), domain.b * np.sin(ang)], axis=1)
        sp = np.sqrt((domain.a * np.sin(ang)) ** 2 + (domain.b * np.cos(ang)) ** 2)
        nrm = np.stack([domain.b * np.cos(ang), domain.a * np.sin(ang)], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        kap = domain.curvature(ang)
        if eps * np.max(kap) >= 0.99:
            raise ValueError("collar width exceeds the focal distance")
        pts = z[:, None, :] + t_nodes[None, :, None] * nrm[:, None, :]
        W = (sp * 2 * np.pi / n)[:, None] * t_w[None, :] * (1.0 + t_nodes[None, :] * kap[:, None])
        return CollarQuadrature(pts.reshape(-1, 2), W.ravel(),
                                np.zeros(pts.shape[0] * t_nodes.size, dtype=int), eps, n)
    if isinstance(domain, (Box, LShape)) and domain.dim == 2:
        return _polygon_collar(domain, eps, n)
    if isinstance(domain, Ball) and domain.dim == 3:
        return _ball3_collar_mc(domain, eps, n, seed)
    if domain.dim == 3:
        return _generic3_collar_mc(domain, eps, n, seed)
    raise NotImplementedError(f"no collar rule for {type(domain).__name__}")


def _polygon_collar(domain, eps, n) -> CollarQuadrature:
    xg, wg = gauss_legendre(8)
    t_nodes = eps * (xg + 1) / 2.0
    t_w = eps * wg / 2.0
    faces = domain.faces()
    pts_all, w_all, fi_all = [], [], []
    is_l = isinstance(domain, LShape)

    for fi, (p0, p1, nv) in enumerate(faces):
        tang = (p1 - p0) / np.linalg.norm(p1 - p0)
        ln = float(np.linalg.norm(p1 - p0))
        m = max(4, int(round(n * ln / domain.surface_measure())))
        # L-shape notch faces: clip the slab where the two notch slabs
        # overlap near the re-entrant corner (assign by nearest face).
        clip_triangle = is_l and fi in (2, 3)
        s_mid = (np.arange(m) + 0.5) / m * ln
        if not clip_triangle:
            P = p0[None, None, :] + s_mid[:, None, None] * tang[None, None, :] \
                + t_nodes[None, :, None] * nv[None, None, :]
            W = np.broadcast_to((ln / m) * t_w[None, :], (m, t_nodes.size))
            pts_all.append(P.reshape(-1, 2))
            w_all.append(W.ravel())
            fi_all.append(np.full(m * t_nodes.size, fi, dtype=int))
        else:
            # faces 2: (1,0)->(0,0) normal +y ; 3: (0,0)->(0,1) normal +x.
            # In local coords (s from the re-entrant corner, t outward):
            # keep t in (0, min(s, eps)); split into rectangle + triangle.
            # rectangle: s in (eps, L), t in (0, eps)
            s_r = eps + (ln - eps) * (np.arange(m) + 0.5) / m
            corner = np.array([0.0, 0.0])
            away = -tang if fi == 2 else tang  # unit vector pointing away from corner
            P = corner[None, None, :] + s_r[:, None, None] * away[None, None, :] \
                + t_nodes[None, :, None] * nv[None, None, :]
            W = np.broadcast_to(((ln - eps) / m) * t_w[None, :], (m, t_nodes.size))
            pts_all.append(P.reshape(-1, 2))
            w_all.append(W.ravel())
            fi_all.append(np.full(m * t_nodes.size, fi, dtype=int))
            # triangle: 0 < t < s < eps  (Duffy: s = eps*u, t = s*v)
            xu, wu = gauss_legendre(8)
            u = (xu + 1) / 2.0
            wu2 = wu / 2.0
            U, V = np.meshgrid(u, u, indexing="ij")
            WU = np.outer(wu2, wu2) * eps**2 * U
            S = eps * U
            T = S * V
            P = corner[None, :] + S.ravel()[:, None] * away[None, :] \
                + T.ravel()[:, None] * nv[None, :]
            pts_all.append(P)
            w_all.append(WU.ravel())
            fi_all.append(np.full(P.shape[0], fi, dtype=int))

    # quarter-disk sectors at convex corners
    verts = domain.VERTS if is_l else np.array([f[0] for f in domain.faces()])
    for vi, v in enumerate(verts):
        if is_l and np.allclose(v, [0.0, 0.0]):
            continue  # re-entrant corner: no exterior sector
        prev_face = (vi - 1) % len(faces)
        n1 = faces[prev_face][2]
        n2 = faces[vi][2]
        a1 = math.atan2(n1[1], n1[0])
        a2 = math.atan2(n2[1], n2[0])
        while a2 < a1:
            a2 += 2 * math.pi
        m_ang = 8
        ang = a1 + (a2 - a1) * (np.arange(m_ang) + 0.5) / m_ang
        w_ang = (a2 - a1) / m_ang
        rad = t_nodes
        P = v[None, None, :] + rad[None, :, None] * np.stack(
            [np.cos(ang), np.sin(ang)], axis=1)[:, None, :]
        W = w_ang * (t_w * rad)[None, :]
        W = np.broadcast_to(W, (m_ang, rad.size))
        pts_all.append(P.reshape(-1, 2))
        w_all.append(W.ravel())
        fi_all.append(np.full(m_ang * rad.size, -1, dtype=int))

    return CollarQuadrature(np.concatenate(pts_all), np.concatenate(w_all),
                            np.concatenate(fi_all), eps, n)


def _ball3_collar_mc(domain, eps, n, seed) -> CollarQuadrature:
    R = domain.r
    vol = 4.0 / 3.0 * math.pi * ((R + eps) ** 3 - R**3)
    strata = 32
    n_cell = max(8, n // strata)
    pts, wts = [], []
    for si in range(strata):
        rng = rng_stream(seed, 11, si)
        u = rng.random((n_cell, 3))
        z = -1.0 + 2.0 * ((si % 8) + u[:, 0]) / 8.0
        phi = 2 * math.pi * ((si // 8) + u[:, 1]) / (strata // 8)
        r = (R**3 + ((R + eps) ** 3 - R**3) * u[:, 2]) ** (1.0 / 3.0)
        rho = np.sqrt(1 - z**2)
        P = domain.c + r[:, None] * np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
        pts.append(P)
        wts.append(np.full(n_cell, vol / (strata * n_cell)))
    return CollarQuadrature(np.concatenate(pts), np.concatenate(wts),
                            np.full(strata * n_cell, -1, dtype=int), eps, n)


def _generic3_collar_mc(domain, eps, n, seed) -> CollarQuadrature:
    lo, hi = domain.bounding_box
    strata = 32
    n_cell = max(8, n // strata)
    pts, wts = [], []
    vol_box = float(np.prod(hi - lo))
    for si in range(strata):
        rng = rng_stream(seed, 13, si)
        P = lo + (hi - lo) * rng.random((n_cell, domain.dim))
        sd = domain.signed_distance(P)
        keep = (sd > 0.0) & (sd < eps)
        P = P[keep]
        pts.append(P)
        wts.append(np.full(P.shape[0], vol_box / (strata * n_cell)))
    return CollarQuadrature(np.concatenate(pts), np.concatenate(wts),
                            np.full(sum(p.shape[0] for p in pts), -1, dtype=int), eps, n)


# ---------------------------------------------------------------------------
# piecewise decomposition


@dataclass(frozen=True)
class PiecewiseFace:
    p0: np.ndarray
    p1: np.ndarray
    normal: np.ndarray
    shrink_lo: bool   # shrink the p0 end of G_{i,delta}
    shrink_hi: bool

    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    def tangent(self):
        return (self.p1 - self.p0) / self.length()

    def in_exterior_neighborhood(self, X, delta, eps):
        """Membership in the exterior eps-neighborhood of G_{i,delta}."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = (X - self.p0) @ self.normal
        s = (X - self.p0) @ self.tangent()
        lo = delta if self.shrink_lo else 0.0
        hi = self.length() - (delta if self.shrink_hi else 0.0)
        return (t > 0.0) & (t < eps) & (s > lo) & (s < hi)


@dataclass(frozen=True)
class PiecewiseDecomposition:
    domain: Domain
    delta: float
    faces: list
    corners: np.ndarray

    def leftover_measure(self, eps: float, n: int = 4000) -> float:
        """|B(delta, eps)|: collar mass not covered by any face patch."""
        col = collar_points(self.domain, eps, n)
        covered = np.zeros(col.points.shape[0], dtype=bool)
        for f in self.faces:
            covered |= f.in_exterior_neighborhood(col.points, self.delta, eps)
        return pairwise_sum(np.where(covered, 0.0, col.weights))


def decompose_piecewise(domain: Domain, delta: float) -> PiecewiseDecomposition:
    """Faces G_i, corner set B, and shrunken faces G_{i,delta}.

    Convex corners keep the full face (no shrinking needed); faces meeting
    the L-shape's re-entrant corner are shrunk by delta at that end so
    their exterior neighborhoods are disjoint for eps < delta/2.
    """
    if domain.smoothness != "PiecewiseC1":
        raise ValueError("decompose_piecewise needs a piecewise-C1 domain")
    if domain.dim != 2:
        raise NotImplementedError("decomposition implemented for d = 2")
    edges = domain.faces()
    shortest = min(float(np.linalg.norm(p1 - p0)) for p0, p1, _ in edges)
    if not (0.0 < delta < shortest / 4.0):
        raise ValueError(f"delta must lie in (0, {shortest / 4.0})")
    reentrant = []
    if isinstance(domain, LShape):
        reentrant = [np.array([0.0, 0.0])]
    faces = []
    for (p0, p1, nv) in edges:
        s_lo = any(np.allclose(p0, c) for c in reentrant)
        s_hi = any(np.allclose(p1, c) for c in reentrant)
        faces.append(PiecewiseFace(p0, p1, nv, s_lo, s_hi))
    corners = np.array([f[0] for f in edges])
    return PiecewiseDecomposition(domain, delta, faces, corners)

"""Admissible kernel pairs and the two normalized families.

A pair couples an even weight profile with a symmetric measure density;
admissibility asks that min(1, |h|^2) times their product integrates over
R^d.  Two built-in one-parameter families are provided: a bounded family
supported in a shrinking ball ("localizing") and a power-law family with
full support ("fractional", order s = 1 - eps).  Both are normalized so
the admissibility integral equals the dimension exactly, and both satisfy
the vanishing-tail condition as eps -> 0.

All integrals reduce exactly to one radial dimension; the numeric path
uses the graded/extrapolated rule from the quadrature module, and the
built-in profiles additionally carry piecewise power-law metadata so tail
masses and segment integrals have closed forms.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .quadrature import (
    QuadSpec,
    QuadResult,
    NonIntegrableError,
    radial_integral,
    sphere_area,
    weight_antiderivative,
)

__all__ = [
    "RadialProfile",
    "AdmissiblePair",
    "KernelFamily",
    "AdmissibilityReport",
    "make_localizing_family",
    "make_fractional_family",
    "make_custom_family",
    "levy_integral",
    "tail_mass",
    "check_admissible",
]

OVERFLOW_GUARD = 1e12


@dataclass(frozen=True)
class RadialProfile:
    """Nonnegative radial function r -> value on (0, inf).

    ``singularity_exponent`` is the blow-up order p at 0 (value ~ c r^-p),
    0 for bounded profiles.  ``support_radius`` may be inf.  Optional
    ``power_pieces`` [(r_lo, r_hi, coef, expo), ...] describe the profile
    exactly as piecewise power laws; the built-in families always carry
    them, custom profiles may.
    """

    eval_radial: object
    singularity_exponent: float
    support_radius: float
    dim: int
    power_pieces: tuple = ()

    def eval(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self.eval_radial(r), dtype=float)
        if np.isfinite(self.support_radius):
            out = np.where(r > self.support_radius, 0.0, out)
        return out

    def eval_vec(self, H):
        """Vector adapter: profile value at |h| for points h (n, d)."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return self.eval(np.linalg.norm(H, axis=1))

    def tail_power_law(self):
        """(coef, expo) with profile ~ coef r^expo beyond the last piece,
        or (0, -inf) for compact support."""
        if np.isfinite(self.support_radius):
            return 0.0, -np.inf
        if self.power_pieces:
            lo, hi, coef, expo = self.power_pieces[-1]
            if not np.isfinite(hi):
                return coef, expo
        return None


def power_profile(coef: float, expo: float, d: int, support: float = np.inf) -> RadialProfile:
    """Single power law coef * r**expo, optionally cut at ``support``."""
    pieces = ((0.0, support, coef, expo),)
    return RadialProfile(
        eval_radial=lambda r, c=coef, e=expo: c * np.power(r, e, where=r > 0,
                                                           out=np.zeros_like(r)),
        singularity_exponent=max(0.0, -expo),
        support_radius=support,
        dim=d,
        power_pieces=pieces,
    )


def piecewise_power_profile(pieces, d: int) -> RadialProfile:
    """Profile from [(r_lo, r_hi, coef, expo), ...]; pieces must be sorted
    and non-overlapping."""
    pieces = tuple((float(a), float(b), float(c), float(e)) for a, b, c, e in pieces)
    for (a, b, c, e) in pieces:
        if b <= a:
            raise ValueError("piece bounds must increase")
        if c < 0:
            raise ValueError("profile values must be nonnegative")
    support = pieces[-1][1] if np.isfinite(pieces[-1][1]) else np.inf
    sing = max(0.0, -pieces[0][3]) if pieces[0][0] == 0.0 else 0.0

    def ev(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for (a, b, c, e) in pieces:
            m = (r > a) & (r <= b) if np.isfinite(b) else (r > a)
            out = np.where(m, c * np.power(r, e, where=r > 0, out=np.ones_like(r)), out)
        return out

    return RadialProfile(ev, sing, support, d, pieces)


class AdmissiblePair:
    """Weight/measure pair (alpha, mu) with a lazily cached admissibility
    value."""

    def __init__(self, alpha: RadialProfile, mu: RadialProfile):
        if alpha.dim != mu.dim:
            raise ValueError("alpha and mu must share a dimension")
        self.alpha = alpha
        self.mu = mu
        self.dim = alpha.dim
        self._levy = None
        self._levy_lock = threading.Lock()

    @property
    def levy_value(self) -> float:
        """Value of the admissibility integral, computed once."""
        if self._levy is None:
            with self._levy_lock:
                if self._levy is None:
                    self._levy = levy_integral(self, tol=1e-9).value
        return self._levy

    def product_profile(self) -> RadialProfile:
        """alpha * mu as a radial profile (piecewise metadata merged when
        both factors carry it)."""
        a, m = self.alpha, self.mu
        support = min(a.support_radius, m.support_radius)
        pieces = ()
        if a.power_pieces and m.power_pieces:
            cuts = sorted({p for piece in a.power_pieces + m.power_pieces
                           for p in piece[:2] if p > 0})
            merged = []
            lo = 0.0
            for hi in cuts + ([np.inf] if not np.isinf(cuts[-1]) else []):
                if hi <= lo:
                    continue
                mid = lo + (hi - lo) / 2 if np.isfinite(hi) else lo * 2 or 1.0
                ca = _piece_at(a.power_pieces, mid)
                cm = _piece_at(m.power_pieces, mid)
                if ca and cm:
                    merged.append((lo, hi, ca[0] * cm[0], ca[1] + cm[1]))
                lo = hi
            pieces = tuple(merged)
        return RadialProfile(
            eval_radial=lambda r: a.eval(r) * m.eval(r),
            singularity_exponent=a.singularity_exponent + m.singularity_exponent,
            support_radius=support,
            dim=self.dim,
            power_pieces=pieces,
        )

    def dual_weight(self) -> RadialProfile:
        """mu / alpha, the weight pairing gradients with fields in the
        duality identity."""
        a, m = self.alpha, self.mu
        pieces = ()
        if a.power_pieces and m.power_pieces and len(a.power_pieces) == 1 \
                and len(m.power_pieces) == 1:
            (_, hi_a, ca, ea) = a.power_pieces[0]
            (_, hi_m, cm, em) = m.power_pieces[0]
            pieces = ((0.0, min(hi_a, hi_m), cm / ca, em - ea),)

        def ev(r):
            av = a.eval(r)
            mv = m.eval(r)
            return np.where(av > 0, mv / np.where(av > 0, av, 1.0), 0.0)

        return RadialProfile(ev, max(0.0, m.singularity_exponent - a.singularity_exponent),
                             min(a.support_radius, m.support_radius), self.dim, pieces)


def _piece_at(pieces, r):
    for (a, b, c, e) in pieces:
        if a < r <= b or (a < r and not np.isfinite(b)):
            return c * 1.0, e
    return None


@dataclass(frozen=True)
class KernelFamily:
    """eps-indexed family of admissible pairs."""

    kind: str                      # "localizing" | "fractional" | "custom"
    dim: int
    pair_factory: object           # eps -> AdmissiblePair
    params: dict = field(default_factory=dict)

    def pair_at(self, eps: float) -> AdmissiblePair:
        if not (0.0 < eps < 1.0):
            raise ValueError(f"eps must lie in (0,1), got {eps}")
        return self.pair_factory(eps)


def make_localizing_family(d: int) -> KernelFamily:
    """Bounded compactly supported family: both profiles are indicators of
    the eps-ball, scaled so the admissibility integral is exactly d.

    alpha_eps = eps^-1 on B_eps; mu_eps = a_d eps^(-d-1) on B_eps with
    a_d = d (d+2) / H^{d-1}(S^{d-1}).
    """
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2, or 3")
    a_d = d * (d + 2) / sphere_area(d)

    def factory(eps: float) -> AdmissiblePair:
        alpha = power_profile(1.0 / eps, 0.0, d, support=eps)
        mu = power_profile(a_d * eps ** (-d - 1), 0.0, d, support=eps)
        return AdmissiblePair(alpha, mu)

    return KernelFamily("localizing", d, factory, {"a_d": a_d})


def make_fractional_family(d: int) -> KernelFamily:
    """Power-law family of order s = 1 - eps:
    alpha_eps = |h|^(-1+eps), mu_eps = (2 d eps (1-eps)/H^{d-1}) |h|^(-d-1+eps).
    """
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2, or 3")
    surf = sphere_area(d)

    def factory(eps: float) -> AdmissiblePair:
        alpha = power_profile(1.0, -1.0 + eps, d)
        c_mu = 2.0 * d * eps * (1.0 - eps) / surf
        mu = power_profile(c_mu, -d - (1.0 - eps), d)
        return AdmissiblePair(alpha, mu)

    return KernelFamily("fractional", d, factory, {"surface": surf})


def make_custom_family(d: int, alpha_pieces, mu_pieces) -> KernelFamily:
    """Family whose pairs are eps-independent piecewise power laws."""
    alpha = piecewise_power_profile(alpha_pieces, d)
    mu = piecewise_power_profile(mu_pieces, d)
    pair = AdmissiblePair(alpha, mu)
    return KernelFamily("custom", d, lambda eps: pair, {})


# ---------------------------------------------------------------------------
# admissibility integrals


def levy_integral(pair: AdmissiblePair, tol: float = 1e-9) -> QuadResult:
    """∫ min(1, |h|^2) alpha(h) mu(h) dh over R^d, by exact radial
    reduction: the angular factor is the sphere area, the 1-D integrand
    min(1, r^2) alpha mu r^{d-1} is integrated with graded endpoint
    handling and a divergence guard.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = pair.dim
    prod = pair.product_profile()
    surf = sphere_area(d)
    support = prod.support_radius

    def integrand(r):
        return np.minimum(1.0, r**2) * prod.eval(r) * r ** (d - 1)

    head = 2.0 - prod.singularity_exponent + (d - 1)
    if head <= -1.0:
        raise NonIntegrableError(
            f"admissibility integrand has power {head} at 0; the pair is not admissible")
    tail = None
    r_hi = support
    if not np.isfinite(support):
        tp = prod.tail_power_law()
        if tp is None:
            raise NonIntegrableError("profile tail behavior unknown")
        coef, expo = tp
        tail = expo + (d - 1)
        if coef != 0.0 and tail >= -1.0:
            raise NonIntegrableError(
                f"admissibility integrand has power {tail} at infinity; not admissible")
        r_hi = np.inf if coef != 0.0 else max(
            (p[1] for p in prod.power_pieces if np.isfinite(p[1])), default=1.0)
    spec = QuadSpec(rel_tol=tol, abs_tol=tol, max_evals=200_000)
    breaks = [1.0] if (r_hi > 1.0) else []
    res = radial_integral(integrand, 0.0, r_hi, spec, head_power=head,
                          tail_power=tail, breakpoints=breaks)
    value = res.value * surf
    if value > OVERFLOW_GUARD:
        raise NonIntegrableError(f"admissibility integral exceeds {OVERFLOW_GUARD:g}")
    return QuadResult(value, res.error_estimate * surf, res.n_evals,
                      res.seed_used, res.converged)


def tail_mass(pair: AdmissiblePair, delta: float) -> float:
    """∫_{|h| > delta} alpha(h) mu(h) dh; closed form for piecewise
    power-law profiles, +inf if divergent."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = pair.dim
    prod = pair.product_profile()
    if delta >= prod.support_radius:
        return 0.0
    if prod.power_pieces:
        return weight_antiderivative(prod, d, delta, np.inf) * sphere_area(d)
    spec = QuadSpec(rel_tol=1e-10, abs_tol=1e-12, max_evals=100_000)
    tp = prod.tail_power_law()
    if tp is None:
        return np.inf
    res = radial_integral(lambda r: prod.eval(r) * r ** (d - 1), delta,
                          prod.support_radius, spec,
                          tail_power=(tp[1] + d - 1) if tp[0] != 0 else None)
    return res.value * sphere_area(d)


@dataclass(frozen=True)
class AdmissibilityReport:
    passes: bool
    levy_value: float
    levy_finite: bool
    absolutely_continuous: bool
    alpha_singularity: float
    mu_singularity: float
    detail: str = ""


def check_admissible(pair: AdmissiblePair, tol: float = 1e-8) -> AdmissibilityReport:
    """Admissibility report: finiteness of the defining integral plus a
    structural absolute-continuity check (mu vanishes wherever alpha does,
    sampled on a log grid).  Failures are reported, never raised.
    """
    try:
        levy = levy_integral(pair, tol=tol).value
        finite = np.isfinite(levy) and levy <= OVERFLOW_GUARD
    except NonIntegrableError as exc:
        return AdmissibilityReport(False, np.inf, False, True,
                                   pair.alpha.singularity_exponent,
                                   pair.mu.singularity_exponent, str(exc))
    r = np.logspace(-6, 1.5, 400)
    av = pair.alpha.eval(r)
    mv = pair.mu.eval(r)
    ac = bool(np.all(mv[av == 0.0] == 0.0))
    passes = finite and ac
    detail = "" if passes else ("mu charges radii where alpha vanishes" if not ac else
                                "admissibility integral diverges")
    return AdmissibilityReport(passes, levy, finite, ac,
                               pair.alpha.singularity_exponent,
                               pair.mu.singularity_exponent, detail)

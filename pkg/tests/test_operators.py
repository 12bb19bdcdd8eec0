import math

import numpy as np
import pytest

from nlcalc.fields import (
    constant_field,
    custom_field,
    difference_field,
    extend_compactly,
    gaussian_bump,
    gaussian_gradient_field,
    generate_nonlocal_field,
    identity_field,
    rotation_field,
)
from nlcalc.geometry import Box, make_ball, make_lshape
from nlcalc.kernels import make_fractional_family, make_localizing_family
from nlcalc.operators import (
    OperatorContext,
    bulk_divergence_integral,
    duality_residual,
    exterior_normal_integral,
    gauss_green_forms,
    gauss_green_residual,
    nonlocal_divergence,
    nonlocal_normal,
    nonlocal_scalar_product,
    scalar_product,
)
from nlcalc.quadrature import QuadSpec

SPEC = QuadSpec(rel_tol=1e-5, abs_tol=1e-7, max_evals=400_000)


def _ctx(domain=None, eps=0.2, family="localizing"):
    domain = domain if domain is not None else make_ball(2)
    fam = make_localizing_family(2) if family == "localizing" else make_fractional_family(2)
    return OperatorContext(domain, fam.pair_at(eps), SPEC)


def _identity_setup(domain, eps, family="localizing", margin=1.0):
    fam = make_localizing_family(domain.dim) if family == "localizing" \
        else make_fractional_family(domain.dim)
    pair = fam.pair_at(eps)
    F = extend_compactly(identity_field(domain.dim), domain, margin)
    return OperatorContext(domain, pair, SPEC), generate_nonlocal_field(F, pair.alpha)


def test_divergence_of_constant_field_at_center():
    disk = make_ball(2)
    ctx = _ctx(disk)
    F = extend_compactly(constant_field([1.0, 2.0]), disk, 1.0)
    f = generate_nonlocal_field(F, ctx.pair.alpha)
    res = nonlocal_divergence(ctx, f, np.zeros(2))
    assert abs(res.value) <= 1e-7  # odd integrand on a symmetric window


def test_divergence_approaches_classical():
    disk = make_ball(2)
    for eps in (0.4, 0.1):
        ctx, f = _identity_setup(disk, eps)
        res = nonlocal_divergence(ctx, f, np.array([0.3, -0.2]))
        assert res.value == pytest.approx(2.0, rel=1e-9)  # exact for linear fields


def test_difference_field_bridges_to_scalar_operator():
    # the scalar operator L is the divergence of the difference field,
    # through the very same code path
    disk = make_ball(2)
    ctx = _ctx(disk, eps=0.3)
    phi = gaussian_bump(2, width=0.7)
    forms = gauss_green_forms(ctx, phi, phi)
    f = difference_field(phi)
    for x in (np.array([0.1, 0.2]), np.array([-0.4, 0.3])):
        a = forms.lnu_at(x)
        b = nonlocal_divergence(ctx, f, x)
        assert a.value == b.value  # identical, not merely close
    # and N is minus the nonlocal normal derivative of the same field
    y = np.array([1.1, 0.0])
    ngg = forms.nnu_at(y)
    nop = nonlocal_normal(ctx, f, y)
    assert ngg.value == -nop.value


def test_normal_derivative_vanishes_beyond_kernel_support():
    disk = make_ball(2)
    ctx, f = _identity_setup(disk, 0.2)
    res = nonlocal_normal(ctx, f, np.array([1.5, 0.0]))  # dist 0.5 > eps
    assert res.value == 0.0


def test_normal_derivative_zero_field():
    disk = make_ball(2)
    ctx = _ctx(disk)
    F = extend_compactly(constant_field([0.0, 0.0]), disk, 1.0)
    f = generate_nonlocal_field(F, ctx.pair.alpha)
    res = nonlocal_normal(ctx, f, np.array([1.05, 0.0]))
    assert res.value == 0.0


def test_normal_derivative_matches_riemann_oracle():
    # masked Riemann sum with Richardson extrapolation as the oracle
    from _oracles import richardson_masked_2d

    disk = make_ball(2)
    ctx, f = _identity_setup(disk, 0.2)
    x = np.array([1.05, 0.0])
    res = nonlocal_normal(ctx, f, x)

    mu_val = ctx.pair.mu.power_pieces[0][2]

    def g(P):
        return f.eval_pairs(np.broadcast_to(x, P.shape), P) * mu_val

    def mask(P):
        inside = np.linalg.norm(P, axis=1) < 1.0
        near = np.linalg.norm(P - x, axis=1) < 0.2
        return inside & near

    oracle = -2.0 * richardson_masked_2d(g, mask, x - 0.25, x + 0.25, 0.002)
    assert res.value == pytest.approx(oracle, rel=3e-3)


def test_nt_identity_disk_and_swap_sign():
    disk = make_ball(2)
    ctx, f = _identity_setup(disk, 0.2)
    bulk = bulk_divergence_integral(ctx, f)
    ext = exterior_normal_integral(ctx, f)
    assert bulk.value == pytest.approx(2 * math.pi, rel=1e-9)
    assert abs(bulk.value - ext.value) <= 3 * (bulk.error_estimate + ext.error_estimate)
    # difference-type field on the same geometry: swapping the roles of the
    # domain and its complement flips the sign of the right-hand side
    phi = gaussian_bump(2, width=0.7)
    fd = difference_field(phi)
    a = exterior_normal_integral(ctx, fd)
    b = exterior_normal_integral(ctx, fd, swapped=True)
    assert b.value == pytest.approx(-a.value, rel=1e-2, abs=1e-4)


def test_nt_identity_fractional_family():
    disk = make_ball(2)
    ctx, f = _identity_setup(disk, 0.4, family="fractional")
    bulk = bulk_divergence_integral(ctx, f)
    ext = exterior_normal_integral(ctx, f)
    assert abs(bulk.value - ext.value) <= 3 * (bulk.error_estimate + ext.error_estimate)


def test_divergence_linearity():
    disk = make_ball(2)
    ctx = _ctx(disk, 0.3)
    F1 = extend_compactly(identity_field(2), disk, 1.0)
    F2 = extend_compactly(rotation_field(), disk, 1.0)
    f1 = generate_nonlocal_field(F1, ctx.pair.alpha)
    f2 = generate_nonlocal_field(F2, ctx.pair.alpha)
    comb = custom_field(2, lambda A, B: 2.0 * f1.eval_pairs(A, B) - 3.0 * f2.eval_pairs(A, B),
                        diagonal_power=2.0)
    x = np.array([0.2, 0.4])
    a = nonlocal_divergence(ctx, comb, x)
    b1 = nonlocal_divergence(ctx, f1, x)
    b2 = nonlocal_divergence(ctx, f2, x)
    assert a.value == pytest.approx(2 * b1.value - 3 * b2.value, abs=1e-8)


def test_gauss_green_trivial_cases():
    disk = make_ball(2)
    ctx = _ctx(disk, 0.3)
    one = gaussian_bump(2, width=1.0)
    const = type(one)(2, lambda X: np.ones(len(np.atleast_2d(X))),
                      lambda X: np.zeros_like(np.atleast_2d(X)), math.inf, 1.0, 4.0)
    psi = gaussian_bump(2, width=0.8)
    forms = gauss_green_forms(ctx, const, psi)
    assert abs(forms.lnu_at(np.array([0.1, 0.1])).value) <= 1e-9
    assert abs(forms.nnu_at(np.array([1.1, 0.0])).value) <= 1e-9
    E = forms.energy()
    assert abs(E.value) <= 1e-7


def test_energy_nonnegative_for_equal_arguments():
    disk = make_ball(2)
    ctx = _ctx(disk, 0.3)
    phi = gaussian_bump(2, width=0.7)
    E = gauss_green_forms(ctx, phi, phi).energy()
    assert E.value >= 0.0


def test_gauss_green_identity_holds():
    disk = make_ball(2)
    ctx = _ctx(disk, 0.3)
    phi = gaussian_bump(2, width=0.6)
    psi = gaussian_bump(2, center=(0.3, 0.0), width=0.7)
    chk = gauss_green_residual(ctx, phi, psi)
    assert chk.residual <= 3 * chk.combined_error


def test_scalar_products():
    box = Box(2, (3.0, 3.0))
    phi = gaussian_bump(2, width=0.8)
    res = scalar_product(phi, phi, box, SPEC)
    # closed form: ∫ exp(-|x|^2 / w^2) = pi w^2
    assert res.value == pytest.approx(math.pi * 0.64, rel=1e-6)

    disk = make_ball(2)
    ctx = _ctx(disk, 0.3)
    F = extend_compactly(gaussian_gradient_field(2, width=0.7), disk, 1.0)
    f = generate_nonlocal_field(F, ctx.pair.alpha)
    sq = nonlocal_scalar_product(f, f, ctx.pair.dual_weight(), box, SPEC)
    assert sq.value >= 0.0
    from nlcalc.kernels import power_profile

    zero_w = power_profile(0.0, 0.0, 2, support=0.3)
    z = nonlocal_scalar_product(f, f, zero_w, box, SPEC)
    assert z.value == 0.0


def test_duality_trivial_and_residual():
    disk = make_ball(2)
    ctx = _ctx(disk, 0.3)
    phi = gaussian_bump(2, width=0.6)
    zero = custom_field(2, lambda A, B: np.zeros(A.shape[0]))
    chk0 = duality_residual(ctx, zero, phi)
    assert chk0.residual == 0.0
    zero_phi = type(phi)(2, lambda X: np.zeros(len(np.atleast_2d(X))),
                         lambda X: np.zeros_like(np.atleast_2d(X)), math.inf, 0.0, 2.0)
    F = extend_compactly(gaussian_gradient_field(2, width=0.6), disk, 1.0)
    f = generate_nonlocal_field(F, ctx.pair.alpha)
    chk1 = duality_residual(ctx, f, zero_phi)
    assert chk1.residual == 0.0


def test_context_validates_dimensions():
    with pytest.raises(ValueError):
        OperatorContext(make_ball(3), make_localizing_family(2).pair_at(0.2), SPEC)

import math

import numpy as np
import pytest

from nlcalc.fields import custom_field, gaussian_bump, normal_field
from nlcalc.fractional import (
    FracParams,
    frac_divergence,
    frac_gradient,
    frac_mean_curvature_direct,
    frac_mean_curvature_via_divergence,
    frac_p_laplacian_composed,
    frac_p_laplacian_direct,
    frac_perimeter,
    fractional_pair,
    mollified_maximizer,
    perimeter_functional,
)
from nlcalc.geometry import make_ball, make_halfspace
from nlcalc.quadrature import QuadSpec, sphere_area, unit_ball_volume

from _oracles import (
    curvature_disk_ref,
    frac_laplacian_gaussian_2d,
    frac_laplacian_gaussian_at0,
    mc_double_integral_disk,
    std_frac_constant,
)

SPEC = QuadSpec(rel_tol=1e-5, abs_tol=1e-7, max_evals=400_000)


def test_scaling_constant_closed_form():
    # matches H^{d-1}(S^{d-1}) / (4 d s |B^{d-1}|) for every d, and pi/4
    # at d=2, s=1/2
    for d in (1, 2, 3):
        for s in (0.3, 0.5, 0.9):
            fp = FracParams(s, d)
            expect = sphere_area(d) / (4 * d * s * unit_ball_volume(d - 1))
            assert abs(fp.c_ds - expect) <= 1e-12
    assert abs(FracParams(0.5, 2).c_ds - math.pi / 4) <= 1e-12


def test_frac_params_validation():
    with pytest.raises(ValueError):
        FracParams(1.5, 2)
    with pytest.raises(ValueError):
        FracParams(0.5, 5)
    with pytest.raises(ValueError):
        FracParams(0.5, 2, p=0.5)


def test_frac_gradient_examples():
    phi = gaussian_bump(2, width=0.8)
    for s in (0.3, 0.7):
        g = frac_gradient(phi, s)
        # hand-built linear increment: exactly 1 at unit distance
        x, y = np.zeros(2), np.array([[1.0, 0.0]])
        lin = custom_field(2, lambda A, B: (B[:, 0] - A[:, 0])
                           * np.linalg.norm(B - A, axis=1) ** (-s))
        assert lin.eval_pairs(x, y)[0] == pytest.approx(1.0)
        # the gradient field itself divides increments by |y-x|^s
        d = g.eval_pairs(np.zeros(2), np.array([[0.5, 0.0]]))[0]
        expect = (phi.value(np.array([[0.5, 0.0]]))[0] - phi.value(np.zeros((1, 2)))[0]) \
            * 0.5 ** (-s)
        assert d == pytest.approx(expect, rel=1e-12)


def test_frac_divergence_of_gradient_negative_at_maximum():
    phi = gaussian_bump(2, width=1.0)
    g = frac_gradient(phi, 0.5)
    res = frac_divergence(g, 0.5, np.zeros(2), SPEC)
    assert res.value < 0.0


def test_frac_divergence_gradient_matches_fourier_oracle_offcenter():
    d, s = 2, 0.5
    phi = gaussian_bump(d, width=1.0)
    g = frac_gradient(phi, s)
    x = np.array([0.5, 0.0])
    res = frac_divergence(g, s, x, SPEC)
    lam = frac_laplacian_gaussian_2d(s, 0.5)
    expect = -lam * 4 * d * (1 - s) * s / (std_frac_constant(d, s) * sphere_area(d))
    assert res.value == pytest.approx(expect, rel=5e-4)


def test_p_laplacian_constant_and_linear():
    const = type(gaussian_bump(2))(2, lambda X: np.ones(len(np.atleast_2d(X))),
                                   lambda X: np.zeros_like(np.atleast_2d(X)),
                                   math.inf, 1.0, 4.0, inf_limit=1.0)
    res = frac_p_laplacian_direct(const, 0.5, 2.0, np.zeros(2), SPEC)
    assert res.value == 0.0

    linear = type(gaussian_bump(2))(2, lambda X: np.atleast_2d(X)[:, 0],
                                    lambda X: np.tile([1.0, 0.0],
                                                      (len(np.atleast_2d(X)), 1)),
                                    math.inf, 1.0, 4.0)
    res = frac_p_laplacian_direct(linear, 0.5, 2.0, np.zeros(2), SPEC)
    assert abs(res.value) <= 1e-9  # odd increments cancel under symmetrization


def test_p_laplacian_p2_matches_fourier_oracle():
    d, s = 2, 0.5
    u = gaussian_bump(d, width=1.0)
    res = frac_p_laplacian_direct(u, s, 2.0, np.zeros(d), SPEC)
    oracle = -(1 - s) / std_frac_constant(d, s) * frac_laplacian_gaussian_at0(s, d)
    assert res.value == pytest.approx(oracle, rel=2e-4)


@pytest.mark.parametrize("s", [0.3, 0.7])
@pytest.mark.parametrize("p", [2.0, 3.0])
def test_p_laplacian_routes_agree(s, p):
    u = gaussian_bump(2, width=1.0)
    for x in (np.zeros(2), np.array([0.5, 0.0])):
        a = frac_p_laplacian_direct(u, s, p, x, SPEC)
        b = frac_p_laplacian_composed(u, s, p, x, SPEC)
        assert abs(a.value - b.value) <= 3 * (a.error_estimate + b.error_estimate) + 1e-7


def test_p_laplacian_rejects_small_p():
    u = gaussian_bump(2, width=1.0)
    with pytest.raises(ValueError):
        frac_p_laplacian_direct(u, 0.5, 1.5, np.zeros(2), SPEC)


def test_perimeter_translation_invariance():
    s = 0.4
    a = frac_perimeter(make_ball(2, center=(0.0, 0.0)), s, SPEC)
    b = frac_perimeter(make_ball(2, center=(0.7, -0.3)), s, SPEC)
    assert abs(a.value - b.value) <= 2 * (a.error_estimate + b.error_estimate) \
        + 1e-4 * a.value


def test_perimeter_matches_mc_oracle():
    s = 0.5
    disk = make_ball(2)
    det = frac_perimeter(disk, s, SPEC)
    mc, mc_err = mc_double_integral_disk(s, 400_000, seed=21)
    mc /= unit_ball_volume(1)
    mc_err /= unit_ball_volume(1)
    assert abs(det.value - mc) <= 4 * (mc_err + det.error_estimate)


def test_perimeter_functional_zero_field():
    zero = custom_field(2, lambda A, B: np.zeros(A.shape[0]),
                        far=lambda x: ("value", 0.0, 0.0))
    res = perimeter_functional(make_ball(2), 0.5, zero, SPEC)
    assert res.value == 0.0


def test_perimeter_functional_normal_field_attains_bound():
    # the two-point normal restricted to (set x complement) is the
    # indicator pairing, so the functional equals the scaled perimeter
    disk = make_ball(2)
    s = 0.5
    nf = normal_field(disk)
    val = perimeter_functional(disk, s, nf, SPEC)
    per = frac_perimeter(disk, s, SPEC)
    assert abs(val.value - (1 - s) * per.value) \
        <= 3 * (val.error_estimate + (1 - s) * per.error_estimate)


def test_perimeter_functional_upper_bound_for_small_fields():
    disk = make_ball(2)
    s = 0.5
    per = frac_perimeter(disk, s, SPEC)
    half = custom_field(2, lambda A, B: 0.5 * np.sign(
        np.linalg.norm(B, axis=1) - np.linalg.norm(A, axis=1)),
        far=lambda x: ("value", 0.5, 0.0))
    val = perimeter_functional(disk, s, half, SPEC)
    assert val.value <= (1 - s) * per.value + 3 * (val.error_estimate + per.error_estimate)
    full = perimeter_functional(disk, s, normal_field(disk), SPEC)
    assert val.value == pytest.approx(0.5 * full.value, rel=1e-12)


def test_mollified_maximizer_structure():
    disk = make_ball(2)
    g = mollified_maximizer(disk, 0.1)
    deep_in = np.array([0.0, 0.0])
    deep_out = np.array([[2.0, 0.0]])
    assert g.eval_pairs(deep_in, deep_out)[0] == 1.0
    # antisymmetry including the mollified band
    rng = np.random.default_rng(3)
    X = rng.uniform(-1.4, 1.4, size=(200, 2))
    Y = rng.uniform(-1.4, 1.4, size=(200, 2))
    assert np.array_equal(g.eval_pairs(X, Y), -g.eval_pairs(Y, X))
    assert np.max(np.abs(g.eval_pairs(X, Y))) <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        mollified_maximizer(disk, 0.7)


def test_mollified_band_values_between_zero_and_one():
    disk = make_ball(2)
    g = mollified_maximizer(disk, 0.2)
    u_mid = g._conv(np.array([[0.8, 0.0]]), +1)[0]  # in the ramp band
    assert 0.0 < u_mid < 1.0
    assert g._conv(np.array([[0.55, 0.0]]), +1)[0] == 1.0
    assert g._conv(np.array([[1.05, 0.0]]), +1)[0] == 0.0


def test_curvature_matches_gamma_oracle():
    # crossing positions near tangent directions are resolved only to the
    # distance function's noise floor, which dominates at large s
    disk = make_ball(2)
    for s, rel in ((0.3, 5e-6), (0.5, 5e-6), (0.7, 2e-5), (0.95, 5e-4)):
        res = frac_mean_curvature_direct(disk, s, np.array([1.0, 0.0]), SPEC)
        assert res.value == pytest.approx(curvature_disk_ref(s), rel=rel)
        assert abs(res.value - curvature_disk_ref(s)) <= 3 * res.error_estimate


def test_curvature_rotation_invariance():
    disk = make_ball(2)
    s = 0.5
    a = frac_mean_curvature_direct(disk, s, np.array([1.0, 0.0]), SPEC)
    th = 1.1
    b = frac_mean_curvature_direct(disk, s, np.array([math.cos(th), math.sin(th)]), SPEC)
    assert abs(a.value - b.value) <= 2 * (a.error_estimate + b.error_estimate) + 1e-6


def test_curvature_identity_both_routes():
    disk = make_ball(2)
    for s in (0.3, 0.7):
        hd = frac_mean_curvature_direct(disk, s, np.array([1.0, 0.0]), SPEC)
        hv = frac_mean_curvature_via_divergence(disk, s, np.array([1.0, 0.0]), SPEC)
        assert abs((1 - s) * hd.value - hv.value) \
            <= 3 * ((1 - s) * hd.error_estimate + hv.error_estimate) + 1e-9


def test_curvature_halfspace_zero():
    hs = make_halfspace(2)
    hd = frac_mean_curvature_direct(hs, 0.5, np.zeros(2), SPEC)
    hv = frac_mean_curvature_via_divergence(hs, 0.5, np.zeros(2), SPEC)
    assert hd.value == 0.0
    assert hv.value == 0.0


def test_curvature_snaps_off_boundary_inputs():
    disk = make_ball(2)
    s = 0.5
    a = frac_mean_curvature_direct(disk, s, np.array([1.0, 0.0]), SPEC)
    b = frac_mean_curvature_direct(disk, s, np.array([1.3, 0.0]), SPEC)
    assert a.value == b.value


def test_curvature_limit_is_classical():
    # (1-s) H_s at s -> 1 approaches the circle's curvature 1/R = 1
    disk = make_ball(2)
    vals = [(1 - s) * frac_mean_curvature_direct(disk, s, np.array([1.0, 0.0]),
                                                 SPEC).value
            for s in (0.5, 0.8, 0.95)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - 1.0) <= 0.15

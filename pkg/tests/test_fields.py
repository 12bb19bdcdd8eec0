import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlcalc.fields import (
    check_pv_integrability,
    constant_field,
    custom_field,
    difference_field,
    extend_compactly,
    gaussian_bump,
    gaussian_gradient_field,
    generate_nonlocal_field,
    gradient_field,
    identity_field,
    normal_field,
    rotation_field,
    unit_profile,
)
from nlcalc.geometry import make_ball
from nlcalc.kernels import make_fractional_family, make_localizing_family, power_profile


def test_extension_equals_field_on_domain():
    disk = make_ball(2)
    F = extend_compactly(identity_field(2), disk, 1.0)
    rng = np.random.default_rng(0)
    inside = rng.uniform(-0.7, 0.7, size=(40, 2))
    inside = inside[np.linalg.norm(inside, axis=1) <= 1.0]
    assert np.array_equal(F.eval(inside), inside)
    far = np.array([[2.5, 0.0], [0.0, -3.0]])
    assert np.all(F.eval(far) == 0.0)
    assert np.all(np.linalg.norm(F.eval(rng.uniform(-5, 5, (200, 2))), axis=1)
                  <= np.linalg.norm(rng.uniform(0, 0, (200, 2)), axis=1) + 5.0)


def test_extension_of_constant_is_scaled_cutoff():
    disk = make_ball(2)
    c = np.array([1.0, -2.0])
    F = extend_compactly(constant_field(c), disk, 0.5)
    mid = np.array([[1.0 + 0.375, 0.0]])  # halfway down the ramp
    val = F.eval(mid)[0]
    assert 0.0 < np.linalg.norm(val) < np.linalg.norm(c)
    assert np.allclose(val / np.linalg.norm(val), c / np.linalg.norm(c))


@pytest.mark.parametrize("make", [identity_field, gaussian_gradient_field])
def test_jacobian_matches_finite_differences(make):
    disk = make_ball(2)
    F = extend_compactly(make(2), disk, 1.0)
    rng = np.random.default_rng(1)
    X = rng.uniform(-0.6, 0.6, size=(25, 2))
    J = F.jacobian(X)
    Jfd = F.jacobian_fd(X)
    scale = np.maximum(np.abs(Jfd), 1e-3)
    assert np.max(np.abs(J - Jfd) / scale) <= 1e-5


def test_generated_field_closed_form_identity():
    # F(x) = x with alpha == 1: the line integral is (|y|^2 - |x|^2)/2
    f = generate_nonlocal_field(identity_field(2), unit_profile(2), order=2)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 2))
    Y = rng.normal(size=(50, 2))
    expect = 0.5 * (np.einsum("ij,ij->i", Y, Y) - np.einsum("ij,ij->i", X, X))
    got = np.array([f.eval_pairs(x, y[None, :])[0] for x, y in zip(X, Y)])
    assert np.max(np.abs(got - expect)) <= 1e-12


def test_generated_field_constant_closed_form():
    c = np.array([2.0, -1.0])
    f = generate_nonlocal_field(constant_field(c), unit_profile(2))
    x = np.array([0.3, 0.4])
    Y = np.array([[1.0, 1.0], [-2.0, 0.5]])
    assert np.allclose(f.eval_pairs(x, Y), (Y - x) @ c)


def test_line_quadrature_order_doubling_is_inert_for_cubics():
    # cubic field: GL8 is already exact, doubling changes nothing
    def cubic_eval(X):
        X = np.atleast_2d(X)
        return np.stack([X[:, 0] ** 3, X[:, 1] ** 3 - X[:, 0] * X[:, 1]], axis=1)

    from nlcalc.fields import VectorField

    F = VectorField(2, cubic_eval, lambda X: np.zeros((len(np.atleast_2d(X)), 2, 2)),
                    math.inf, math.inf)
    f8 = generate_nonlocal_field(F, unit_profile(2), order=8)
    f16 = generate_nonlocal_field(F, unit_profile(2), order=16)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 2))
    Y = rng.normal(size=(30, 2))
    for x, y in zip(X, Y):
        a = f8.eval_pairs(x, y[None, :])[0]
        b = f16.eval_pairs(x, y[None, :])[0]
        assert abs(a - b) < 1e-10 * max(1.0, abs(a))


def _all_field_kinds():
    disk = make_ball(2)
    pair = make_fractional_family(2).pair_at(0.4)
    phi = gaussian_bump(2, width=0.8)
    F = extend_compactly(identity_field(2), disk, 1.0)
    return {
        "generated": generate_nonlocal_field(F, pair.alpha),
        "gradient": gradient_field(phi, pair.alpha),
        "difference": difference_field(phi),
        "normal": normal_field(disk),
        "custom": custom_field(2, lambda A, B: np.sin(B[:, 0] - A[:, 0])),
    }


def test_antisymmetry_bitwise_all_kinds():
    rng = np.random.default_rng(4)
    n = 1_000_000
    X = rng.uniform(-2, 2, size=(n, 2))
    Y = rng.uniform(-2, 2, size=(n, 2))
    for kind, f in _all_field_kinds().items():
        a = f.eval_pairs(X, Y)
        b = f.eval_pairs(Y, X)
        assert np.array_equal(a, -b), kind


def test_diagonal_is_zero():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 2))
    for kind, f in _all_field_kinds().items():
        assert np.all(f.eval_pairs(X, X) == 0.0), kind


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_antisymmetry_property(ax, ay, bx, by):
    f = _all_field_kinds()["difference"]
    x = np.array([ax, ay])
    y = np.array([bx, by])
    assert f.eval_pairs(x, y[None, :])[0] == -f.eval_pairs(y, x[None, :])[0]


def test_gradient_field_examples():
    phi = gaussian_bump(2, width=0.7)
    pair = make_fractional_family(2).pair_at(0.5)  # s = 0.5
    g = gradient_field(phi, pair.alpha)
    # linear function through the raw formula: value 1 at distance 1
    lin = custom_field(2, lambda A, B: (B[:, 0] - A[:, 0])
                       / np.linalg.norm(B - A, axis=1) ** 0.5)
    assert lin.eval_pairs(np.zeros(2), np.array([[1.0, 0.0]]))[0] == pytest.approx(1.0)
    # constant scalar gives the zero field
    const = gradient_field(
        type(phi)(2, lambda X: np.ones(len(np.atleast_2d(X))),
                  lambda X: np.zeros_like(np.atleast_2d(X)), math.inf, 1.0, 4.0),
        pair.alpha)
    rng = np.random.default_rng(6)
    X = rng.normal(size=(20, 2))
    Y = rng.normal(size=(20, 2))
    assert np.all(const.eval_pairs(X, Y) == 0.0)


def test_gradient_field_matches_generated_from_grad():
    phi = gaussian_bump(2, width=0.8)
    alpha = make_localizing_family(2).pair_at(0.3).alpha
    g1 = gradient_field(phi, alpha)
    g2 = generate_nonlocal_field(phi.as_gradient_vector_field(), alpha, order=24)
    rng = np.random.default_rng(7)
    X = rng.uniform(-0.5, 0.5, size=(30, 2))
    Y = X + rng.uniform(-0.25, 0.25, size=(30, 2))
    for x, y in zip(X, Y):
        a = g1.eval_pairs(x, y[None, :])[0]
        b = g2.eval_pairs(x, y[None, :])[0]
        assert abs(a - b) <= 1e-6 * max(1.0, abs(a))


def test_normal_field_examples():
    disk = make_ball(2)
    n = normal_field(disk)
    x = np.array([0.5, 0.0])
    y = np.array([[2.0, 0.0]])
    assert n.eval_pairs(x, y)[0] == 1.0
    assert n.eval_pairs(np.array([2.0, 0.0]), np.array([[0.5, 0.0]]))[0] == -1.0
    same = n.eval_pairs(np.array([0.3, 0.4]), np.array([[0.4, 0.3]]))[0]
    assert same == 0.0  # equal radii, equal directed distance


def test_normal_field_translation_invariance():
    d1 = make_ball(2, center=(0.0, 0.0))
    d2 = make_ball(2, center=(1.5, -0.5))
    shift = np.array([1.5, -0.5])
    n1 = normal_field(d1)
    n2 = normal_field(d2)
    rng = np.random.default_rng(8)
    X = rng.uniform(-2, 2, size=(50, 2))
    Y = rng.uniform(-2, 2, size=(50, 2))
    a = n1.eval_pairs(X, Y)
    b = n2.eval_pairs(X + shift, Y + shift)
    assert np.array_equal(a, b)


def test_pv_integrability_generated_fractional_passes():
    disk = make_ball(2)
    pair = make_fractional_family(2).pair_at(0.4)
    F = extend_compactly(identity_field(2), disk, 1.0)
    f = generate_nonlocal_field(F, pair.alpha)
    rep = check_pv_integrability(f, pair, np.array([0.2, 0.1]))
    assert rep.passes and np.isfinite(rep.near_value) and np.isfinite(rep.far_value)


def test_pv_integrability_rough_field_fails_near_diagonal():
    # |difference of a corner function| does not vanish quadratically, and
    # the measure is too singular: the symmetrized mass diverges
    d = 2
    from nlcalc.kernels import AdmissiblePair

    alpha = power_profile(1.0, 0.0, d)
    mu = power_profile(1.0, -d - 1.5, d)
    pair = AdmissiblePair(alpha, mu)
    corner = custom_field(d, lambda A, B: np.linalg.norm(B, axis=1)
                          - np.linalg.norm(A, axis=1), diagonal_power=1.0)
    rep = check_pv_integrability(corner, pair, np.zeros(d))
    assert not rep.passes
    assert not rep.near_converged


def test_pv_integrability_localizing_far_mass_zero():
    disk = make_ball(2)
    pair = make_localizing_family(2).pair_at(0.5)
    F = extend_compactly(identity_field(2), disk, 1.0)
    f = generate_nonlocal_field(F, pair.alpha)
    rep = check_pv_integrability(f, pair, np.array([0.0, 0.0]))
    assert rep.passes
    assert rep.far_value == 0.0


def test_rotation_field_is_divergence_free():
    F = rotation_field()
    rng = np.random.default_rng(9)
    X = rng.normal(size=(50, 2))
    assert np.max(np.abs(F.divergence(X))) == 0.0

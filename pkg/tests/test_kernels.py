import math

import numpy as np
import pytest
from scipy import integrate

from nlcalc.kernels import (
    AdmissiblePair,
    check_admissible,
    levy_integral,
    make_custom_family,
    make_fractional_family,
    make_localizing_family,
    piecewise_power_profile,
    power_profile,
    tail_mass,
)
from nlcalc.quadrature import NonIntegrableError, sphere_area


EPS_GRID = (0.5, 0.25, 0.1, 0.05)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("kind", ["localizing", "fractional"])
def test_normalization_equals_dimension(d, kind):
    fam = make_localizing_family(d) if kind == "localizing" else make_fractional_family(d)
    for eps in EPS_GRID:
        res = levy_integral(fam.pair_at(eps), tol=1e-9)
        assert abs(res.value - d) <= 1e-7, (kind, d, eps, res.value)


def test_localizing_prefactors():
    # d(d+2)/H^{d-1}(S^{d-1}): 4/pi in d=2, 15/(4 pi) in d=3
    assert make_localizing_family(2).params["a_d"] == pytest.approx(4 / math.pi, rel=1e-14)
    assert make_localizing_family(3).params["a_d"] == pytest.approx(15 / (4 * math.pi), rel=1e-14)
    pair = make_localizing_family(2).pair_at(0.5)
    # alpha = 1/eps inside the ball, zero outside
    assert pair.alpha.eval(np.array([0.3]))[0] == pytest.approx(2.0)
    assert pair.alpha.eval(np.array([0.7]))[0] == 0.0


def test_fractional_prefactors():
    pair = make_fractional_family(2).pair_at(0.5)
    lo, hi, coef, expo = pair.mu.power_pieces[0]
    assert coef == pytest.approx(1.0 / (2 * math.pi), rel=1e-14)
    assert expo == pytest.approx(-2.5)
    pair1 = make_fractional_family(1).pair_at(0.9)
    assert pair1.mu.power_pieces[0][2] == pytest.approx(0.09, rel=1e-14)
    # product exponent is -d-2+2 eps
    prod = pair.product_profile()
    assert prod.power_pieces[0][3] == pytest.approx(-3.0)


def test_levy_indicator_pair_closed_form():
    # alpha = mu = indicator of the unit ball in d=1: integral of h^2 over (-1,1)
    alpha = power_profile(1.0, 0.0, 1, support=1.0)
    mu = power_profile(1.0, 0.0, 1, support=1.0)
    res = levy_integral(AdmissiblePair(alpha, mu), tol=1e-10)
    assert res.value == pytest.approx(2.0 / 3.0, abs=1e-9)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_tail_mass_against_scipy(d):
    pair = make_fractional_family(d).pair_at(0.3)
    prod = pair.product_profile()
    for delta in (0.5, 1.0, 2.0):
        ref, _ = integrate.quad(lambda r: prod.eval(np.array([r]))[0] * r ** (d - 1),
                                delta, np.inf)
        assert tail_mass(pair, delta) == pytest.approx(ref * sphere_area(d), rel=1e-8)


def test_tail_mass_localizing_support():
    fam = make_localizing_family(2)
    assert tail_mass(fam.pair_at(0.3), 0.5) == 0.0
    assert tail_mass(fam.pair_at(0.3), 0.3) == 0.0


@pytest.mark.parametrize("delta", [0.5, 1.0])
@pytest.mark.parametrize("kind", ["localizing", "fractional"])
def test_tail_mass_vanishes_along_family(kind, delta):
    d = 2
    fam = make_localizing_family(d) if kind == "localizing" else make_fractional_family(d)
    tails = [tail_mass(fam.pair_at(eps), delta) for eps in EPS_GRID]
    assert all(b <= a + 1e-12 for a, b in zip(tails, tails[1:]))
    assert tails[-1] <= 0.5 * tails[0]
    if kind == "localizing":
        assert tails[-1] == 0.0  # support already inside the ball of radius delta


def test_check_admissible_pass_and_levy_value():
    rep = check_admissible(make_localizing_family(2).pair_at(0.25))
    assert rep.passes
    assert rep.levy_value == pytest.approx(2.0, abs=1e-7)


def test_check_admissible_divergent():
    d = 2
    alpha = power_profile(1.0, 0.0, d)
    mu = power_profile(1.0, -d - 2.0, d)  # radial integrand ~ 1/r at zero
    rep = check_admissible(AdmissiblePair(alpha, mu))
    assert not rep.passes
    assert not rep.levy_finite


def test_check_admissible_absolute_continuity():
    d = 2
    alpha = power_profile(1.0, 0.0, d, support=1.0)   # vanishes beyond 1
    mu = power_profile(1.0, 0.0, d, support=5.0)      # still charges there
    rep = check_admissible(AdmissiblePair(alpha, mu))
    assert not rep.passes
    assert not rep.absolutely_continuous


def test_profile_even_through_vector_adapter():
    prof = make_fractional_family(2).pair_at(0.4).alpha
    rng = np.random.default_rng(7)
    H = rng.normal(size=(64, 2))
    a = prof.eval_vec(H)
    b = prof.eval_vec(-H)
    assert np.array_equal(a, b)  # bitwise: only the radius is consumed


def test_piecewise_profile_and_custom_family():
    fam = make_custom_family(
        1,
        alpha_pieces=[(0.0, 1.0, 1.0, 0.0)],
        mu_pieces=[(0.0, 1.0, 1.0, 0.0)],
    )
    res = levy_integral(fam.pair_at(0.5), tol=1e-10)
    assert res.value == pytest.approx(2.0 / 3.0, abs=1e-9)
    with pytest.raises(ValueError):
        piecewise_power_profile([(1.0, 0.5, 1.0, 0.0)], 1)


def test_levy_raises_on_fat_tail():
    d = 1
    alpha = power_profile(1.0, 0.0, d)
    mu = power_profile(1.0, -1.0, d)  # min(1,h^2) alpha mu ~ 1/h at infinity
    with pytest.raises(NonIntegrableError):
        levy_integral(AdmissiblePair(alpha, mu), tol=1e-8)


def test_levy_value_cached_once():
    pair = make_localizing_family(2).pair_at(0.1)
    v1 = pair.levy_value
    v2 = pair.levy_value
    assert v1 is not None and v1 == v2


def test_invalid_dimension_rejected():
    with pytest.raises(ValueError):
        make_localizing_family(4)
    with pytest.raises(ValueError):
        make_fractional_family(0)
    with pytest.raises(ValueError):
        make_localizing_family(2).pair_at(1.5)

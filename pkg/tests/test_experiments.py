import math

import numpy as np
import pytest

from nlcalc.experiments import (
    ExperimentReport,
    KernelValidationError,
    approx_identity_kernel,
    run_approx_identity,
    run_dc,
    run_nc,
    run_nt_check,
    validate_family,
)
from nlcalc.fields import identity_field, rotation_field
from nlcalc.geometry import make_ball, make_box
from nlcalc.kernels import make_custom_family, make_localizing_family
from nlcalc.quadrature import QuadSpec

SPEC = QuadSpec(rel_tol=1e-5, abs_tol=1e-7, max_evals=400_000)


def test_report_columns_validated_and_errors_recomputed():
    rep = ExperimentReport("demo", "eps", [0.1, 0.2], [1.0, 2.0], [1.5, 1.5],
                           [0.1, 0.1], [10, 10], seed=0)
    assert rep.abs_errors() == [0.5, 0.5]
    rep.values[0] = 1.4
    assert rep.abs_errors() == [pytest.approx(0.1), 0.5]  # never stale
    with pytest.raises(ValueError):
        ExperimentReport("demo", "eps", [0.1], [1.0, 2.0], [1.0], [0.0], [1], seed=0)


def test_validate_family_rejects_unnormalized():
    # indicator pair: admissible but not normalized to the dimension
    fam = make_custom_family(1, [(0.0, 1.0, 1.0, 0.0)], [(0.0, 1.0, 1.0, 0.0)])
    with pytest.raises(KernelValidationError):
        validate_family(fam, (0.5,))


def test_run_dc_disk_values_and_reference():
    rep = run_dc(make_ball(2), make_localizing_family(2), identity_field(2),
                 (0.4, 0.2), SPEC)
    assert rep.references[0] == pytest.approx(2 * math.pi, rel=1e-8)
    for v in rep.values:
        assert v == pytest.approx(2 * math.pi, rel=1e-8)
    assert rep.passed


def test_run_dc_divergence_free_field():
    rep = run_dc(make_ball(2), make_localizing_family(2), rotation_field(),
                 (0.4, 0.2), SPEC)
    assert rep.references[0] == pytest.approx(0.0, abs=1e-9)
    for v in rep.values:
        assert abs(v) <= 1e-8


def test_run_nc_box_faces_and_corner_term():
    rep = run_nc(make_box(2, (1.0, 1.0)), make_localizing_family(2),
                 identity_field(2), (0.2, 0.1), SPEC)
    assert rep.references[0] == pytest.approx(8.0, rel=1e-10)
    for v in rep.values:
        assert v == pytest.approx(8.0, rel=2e-2)
    # four face columns plus corner bookkeeping
    for fi in range(4):
        assert f"face{fi}" in rep.extras
    cm = rep.extras["corner_measure_scaled"]
    assert cm[0] == pytest.approx(math.pi * 0.2, rel=1e-6)
    assert cm[1] == pytest.approx(math.pi * 0.1, rel=1e-6)
    # the per-face fluxes are equal by symmetry and sum close to the total
    faces = [rep.extras[f"face{fi}"][0] for fi in range(4)]
    assert np.allclose(faces, faces[0], rtol=1e-6)


def test_run_nt_check_passes_on_disk():
    rep = run_nt_check(make_ball(2), make_localizing_family(2), identity_field(2),
                       (0.2,), SPEC)
    assert rep.passed
    assert rep.extras["difference"][0] <= 3 * rep.extras["combined_estimate"][0]


def test_approx_identity_masses():
    rep = run_approx_identity(2, (0.5, 0.1))
    assert rep.passed
    for m in rep.values:
        assert abs(m - 1.0) <= 1e-6
    # support is (0, eps): tail mass beyond delta=0.25 vanishes at eps=0.1
    assert rep.extras["tail_mass"][1] == 0.0
    assert rep.extras["tail_mass"][0] > 0.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_approx_identity_kernel_shape(d):
    k = approx_identity_kernel(d, 0.3)
    t = np.linspace(-0.5, 0.5, 101)
    vals = k(t)
    assert np.all(vals >= 0.0)
    assert np.all(vals[t <= 0] == 0.0)
    assert np.all(vals[t >= 0.3] == 0.0)


def test_reports_reproducible_and_thread_invariant():
    args = (make_ball(2), make_localizing_family(2), identity_field(2), (0.4, 0.2))
    r1 = run_dc(*args, SPEC, threads=1)
    r2 = run_dc(*args, SPEC, threads=4)
    assert r1.values == r2.values
    assert r1.err_estimates == r2.err_estimates
    assert r1.n_evals == r2.n_evals

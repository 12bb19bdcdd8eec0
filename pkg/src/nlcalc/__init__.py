"""Nonlocal vector calculus at desk scale.

Two-point antisymmetric fields stand in for vector fields; a nonlocal
divergence (a principal-value integral against a symmetric measure) and a
nonlocal normal derivative (an integral over the domain, evaluated
outside) satisfy an exact integration-by-parts identity, converge to the
classical divergence and boundary flux along normalized kernel families,
and specialize to the fractional gradient/divergence, perimeter, and mean
curvature.
"""

from .quadrature import QuadSpec, QuadResult
from .kernels import (
    RadialProfile,
    AdmissiblePair,
    KernelFamily,
    make_localizing_family,
    make_fractional_family,
    levy_integral,
    tail_mass,
    check_admissible,
)
from .geometry import (
    make_ball,
    make_box,
    make_ellipse,
    make_lshape,
    make_halfspace,
    boundary_quadrature,
    collar_points,
    decompose_piecewise,
    nearest_boundary_point,
)
from .fields import (
    VectorField,
    ScalarField,
    NonlocalField,
    identity_field,
    constant_field,
    rotation_field,
    gaussian_bump,
    gaussian_gradient_field,
    extend_compactly,
    generate_nonlocal_field,
    gradient_field,
    difference_field,
    normal_field,
    check_pv_integrability,
)
from .operators import (
    OperatorContext,
    nonlocal_divergence,
    nonlocal_normal,
    bulk_divergence_integral,
    exterior_normal_integral,
    gauss_green_forms,
    gauss_green_residual,
    scalar_product,
    nonlocal_scalar_product,
    duality_residual,
)
from .fractional import (
    FracParams,
    fractional_pair,
    frac_gradient,
    frac_divergence,
    frac_p_laplacian_direct,
    frac_p_laplacian_composed,
    frac_perimeter,
    perimeter_functional,
    mollified_maximizer,
    frac_mean_curvature_direct,
    frac_mean_curvature_via_divergence,
)
from .experiments import (
    ExperimentReport,
    run_dc,
    run_nc,
    run_nt_check,
    run_approx_identity,
    run_fractional_suite,
)

__version__ = "0.1.0"

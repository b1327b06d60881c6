"""Numerical laboratory for thin obstacle problems built from ellipsoidal potentials."""

from .grid import GridField, GridSpec, load_field, sample_field, save_field
from .harmonic import (
    HarmonicPolynomial,
    Membership,
    NormalizedQuadratic,
    Polynomial,
    classify_membership,
    fit_exterior_expansion,
    make_normalized_quadratic,
)
from .potential import (
    Ellipsoid,
    PotentialSolution,
    build_obstacle_solution,
    decay_certificate,
    interior_coefficients,
    potential_at,
    potential_gradient,
    solve_inverse_ellipsoid,
)
from .obstacle import (
    ContactSet,
    ObstacleProblemSpec,
    SolverConfig,
    convexity_defect,
    extract_contact_set,
    lcp_oracle,
    solve_obstacle,
)
from .thin import (
    BarrierCertificate,
    ThinProblemSpec,
    construct_global_from_polynomial,
    nondegeneracy_check,
    signorini_defects,
    solve_thin,
    thin_lcp_oracle,
    uniqueness_experiment,
)
from .linearization import (
    build_expansion_sequence,
    build_theorem1_sequence,
    expansion_limit,
    limit_field,
)
from .diagnostics import (
    DiagnosticCurve,
    almgren,
    alpha,
    boundary_mass,
    delta_measure_check,
    doubling_fit,
    growth_check,
    height,
    weiss,
)

__version__ = "0.1.0"

"""Boundary-value-corrected Lagrange multiplier and Nitsche FEM.

2D Poisson solvers on curved domains whose boundaries are approximated by
straight facets (chord polygons, staircases), with the facet-to-boundary
distance folded back into the boundary condition so that affine cells
recover optimal convergence orders up to cubic elements.
"""

from .analysis import (
    DegenerateFit,
    ErrorReport,
    RateFit,
    TooLarge,
    error_report,
    error_triple_norm,
    field_l2_norm,
    fit_rates,
    geometry_report,
    infsup_diagnostic,
    l2_h1_errors,
    multiplier_error,
    triple_norm,
)
from .assembly import (
    DimensionMismatch,
    NitscheSystem,
    SaddleSystem,
    assemble_bvc,
    assemble_nitsche,
    assemble_taylor,
    assemble_unmodified,
    boundary_mass_primal,
    dump_matrix,
    dump_system,
    load_vector,
    stiffness_matrix,
)
from .geometry import (
    GeometryError,
    ImplicitDomain,
    NoConvergence,
    NoIntersection,
    ZeroGradient,
    closest_point,
    exact_normal,
    make_ellipse_domain,
    make_polygon_domain,
    make_ring_domain,
    make_square_domain,
    make_unit_circle_domain,
    pullback_point,
    ray_distance,
)
from .mesh import (
    BoundaryFacet,
    EmptyMesh,
    InvalidResolution,
    Mesh,
    MeshError,
    build_annulus_mesh,
    build_square_mesh,
    build_staircase_mesh,
    euler_characteristic,
    export_mesh,
    load_mesh,
    mesh_from_arrays,
    mesh_sequence,
    precompute_boundary_geometry,
)
from .solver import SingularSystem, SolutionField, SolverError, solve, solve_linear
from .spaces import (
    MultiplierSpace,
    PrimalSpace,
    QuadratureRule,
    UnsupportedDegree,
    UnsupportedOrder,
    build_multiplier_space,
    build_primal_space,
    project_to_multiplier,
    quadrature,
)
from .study import (
    PRESETS,
    StudyConfig,
    StudyResult,
    emit_csv,
    emit_plots,
    read_csv,
    run_preset,
    run_study,
    run_unstable_pairing,
)

__version__ = "0.1.0"

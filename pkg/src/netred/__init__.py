"""Topology-preserving H2 model reduction of linear network systems.

Reduced models match prescribed moments of the full network, keep its
interconnection map and stability, and (locally) minimize the H2 norm of
the approximation error through a convex relaxation and a projected
gradient method.
"""

__version__ = "0.1.0"

from .errors import (
    DimensionError,
    FixtureError,
    NetredError,
    NetredWarning,
    PoleError,
    SolverError,
    SpectraOverlapError,
    StructureError,
    UnstableMatrixError,
)
from .linalg import (
    Spectrum,
    is_hurwitz,
    observability_rank,
    schur_decompose,
    solve_lyapunov,
    solve_sylvester,
    spectra_disjoint,
    spectrum,
)
from .network import (
    ConstraintReport,
    ErrorRealization,
    GramianPair,
    MomentReport,
    NetworkSystem,
    ReducedNetwork,
    ReducedOrders,
    Topology,
    build_reduced,
    check_problem_constraints,
    compute_pi,
    error_realization,
    gramians,
    h2_norm,
    moments,
    transfer_eval,
    verify_moment_matching,
)
from .sdp import (
    BlockDiagCertificate,
    build_sdp,
    check_sufficient_conditions,
    construct_certificate,
    recover_reduced,
    solve_sdp,
)
from .sdpsolver import SdpProblem, SdpSolution
from .gradopt import (
    ObjectiveEval,
    OptimizerConfig,
    OptimizerReport,
    finite_diff_gradient,
    gradient,
    line_search,
    objective,
    optimize,
    project_gradient,
)
from .benchmarks import (
    PowerAreaParams,
    fixture_positive_network,
    generate_power_network,
    generate_random_positive,
    sweep_h2_vs_n,
)
from .pipeline import ReductionResult, fallback_init, make_directions, reduce_network

__all__ = [
    "__version__",
    "NetredError", "NetredWarning", "DimensionError", "UnstableMatrixError",
    "SpectraOverlapError", "StructureError", "SolverError", "PoleError", "FixtureError",
    "Spectrum", "schur_decompose", "solve_sylvester", "solve_lyapunov", "spectrum",
    "is_hurwitz", "observability_rank", "spectra_disjoint",
    "Topology", "NetworkSystem", "ReducedOrders", "ReducedNetwork", "ErrorRealization",
    "GramianPair", "ConstraintReport", "MomentReport",
    "compute_pi", "moments", "build_reduced", "error_realization", "gramians",
    "h2_norm", "transfer_eval", "verify_moment_matching", "check_problem_constraints",
    "SdpProblem", "SdpSolution", "build_sdp", "solve_sdp", "recover_reduced",
    "BlockDiagCertificate", "check_sufficient_conditions", "construct_certificate",
    "ObjectiveEval", "OptimizerConfig", "OptimizerReport", "objective", "gradient",
    "project_gradient", "line_search", "optimize", "finite_diff_gradient",
    "PowerAreaParams", "fixture_positive_network", "generate_power_network",
    "generate_random_positive", "sweep_h2_vs_n",
    "ReductionResult", "reduce_network", "make_directions", "fallback_init",
]

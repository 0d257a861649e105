"""Matrix Dyson equation solver and finite-``N`` local-law laboratory.

Deformed Wigner matrices ``W = H + A``: the deterministic approximation
``M(z)`` of the resolvent, scalar reductions for Wigner-type noise, cumulant
expansion checks and a seeded Monte-Carlo harness that measures how closely
``G(z) = (W - z)^-1`` follows ``M(z)``.
"""

__version__ = "0.1.0"

from .exceptions import (
    BranchError,
    ConvergenceError,
    DimensionMismatchError,
    DivergenceError,
    EigensolverError,
    InsufficientGridError,
    MdelabError,
    PoleError,
    PositivityError,
    ValidationError,
)
from .measures import AtomicMeasure, SpectralDomain, SpectralPoint, in_domain, spectral_measure_of, stieltjes
from .mde import (
    DeformationMatrix,
    MdeOptions,
    MdeSolution,
    VarianceProfile,
    pi_residual,
    self_energy,
    solve_mde,
    solve_mde_curve,
)
from .scalar import (
    ErrorBudget,
    check_stability_bound,
    density,
    msc,
    pi_scalar,
    predicted_error_budget,
    solve_scalar,
    stability_margin,
)
from .ensemble import EntryDistribution, SampledMatrix, sample_general, sample_wigner
from .resolvent import eigendecompose, quadform, trace_g, ward_check
from .cumulant import expansion_check, moments_to_cumulants, cumulants_to_moments
from .harness import (
    DominationSample,
    ExperimentConfig,
    ExperimentReport,
    domination_test,
    run_local_law_experiment,
)
from .estimators import DeformedSemicircle, MatrixDysonSolver

__all__ = [
    "__version__",
    "BranchError",
    "ConvergenceError",
    "DimensionMismatchError",
    "DivergenceError",
    "EigensolverError",
    "InsufficientGridError",
    "MdelabError",
    "PoleError",
    "PositivityError",
    "ValidationError",
    "AtomicMeasure",
    "SpectralDomain",
    "SpectralPoint",
    "in_domain",
    "spectral_measure_of",
    "stieltjes",
    "DeformationMatrix",
    "MdeOptions",
    "MdeSolution",
    "VarianceProfile",
    "pi_residual",
    "self_energy",
    "solve_mde",
    "solve_mde_curve",
    "ErrorBudget",
    "check_stability_bound",
    "density",
    "msc",
    "pi_scalar",
    "predicted_error_budget",
    "solve_scalar",
    "stability_margin",
    "EntryDistribution",
    "SampledMatrix",
    "sample_general",
    "sample_wigner",
    "eigendecompose",
    "quadform",
    "trace_g",
    "ward_check",
    "expansion_check",
    "moments_to_cumulants",
    "cumulants_to_moments",
    "DominationSample",
    "ExperimentConfig",
    "ExperimentReport",
    "domination_test",
    "run_local_law_experiment",
    "DeformedSemicircle",
    "MatrixDysonSolver",
]

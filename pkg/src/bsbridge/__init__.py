"""Numerical laboratory for the Brenier-Schrödinger problem over Feller references."""

from .kernels import (
    Grid,
    LevyTriplet,
    GeneratorMatrix,
    TransitionKernel,
    build_grid,
    heat_generator,
    poisson_generator,
    stable_generator,
    levy_generator,
    ou_generator,
    ou_stable_generator,
    transition,
    invariant_residual,
)
from .solver import (
    ReferenceChain,
    ConstraintSet,
    BSPotentials,
    SolveReport,
    InfeasibleError,
    build_reference,
    marginal,
    endpoint_marginal,
    ipf_step,
    solve_bs,
    relative_entropy,
    brute_force_solve,
)
from .hjb import recover_psi, extract_pressure, hjb_residual, girsanov_tilt, htransform_consistency

__version__ = "0.1.0"

__all__ = [
    "Grid", "LevyTriplet", "GeneratorMatrix", "TransitionKernel", "build_grid", "heat_generator",
    "poisson_generator", "stable_generator", "levy_generator", "ou_generator", "ou_stable_generator",
    "transition", "invariant_residual",
    "ReferenceChain", "ConstraintSet", "BSPotentials", "SolveReport", "InfeasibleError", "build_reference",
    "marginal", "endpoint_marginal", "ipf_step", "solve_bs", "relative_entropy", "brute_force_solve",
    "recover_psi", "extract_pressure", "hjb_residual", "girsanov_tilt", "htransform_consistency",
]

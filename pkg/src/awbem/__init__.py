"""Adaptive Haar wavelet Galerkin solver for the Laplace double layer equation.

Solves ``(1/2 I - K) u = g`` on closed polyhedral surfaces assembled from
parallelogram patches, with uniform or adaptive (SOLVE, ESTIMATE, COARSE)
refinement of a tree of Haar wavelet indices.

Typical use::

    from awbem import RightHandSide, SolverConfig, make_fichera, solve

    state = solve(make_fichera(), RightHandSide.point(0.5), SolverConfig(eps=0.08))
    for record in state.history:
        print(record.dofs, record.residual_norm)
"""

from ._backend import NAME as BACKEND
from .analysis import best_nterm_reference, fit_rate, predicted_gamma
from .basis import CoeffVector, Kind, Tree, WaveletIndex, best_n_term_curve, uniform_tree
from .discretize import QuadConfig, RightHandSide, galerkin_matrix_dense, solid_angle
from .layer import ApplyParams, GalerkinOperator
from .solver import (
    PartialResultError,
    RhsApproximator,
    SolverConfig,
    SolverError,
    SolverState,
    apply,
    coarse,
    estimate_residual,
    solve,
    solve_adaptive,
    solve_galerkin,
    solve_uniform,
)
from .surface import Surface, make_cube, make_fichera, make_surface

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ApplyParams",
    "CoeffVector",
    "GalerkinOperator",
    "Kind",
    "PartialResultError",
    "QuadConfig",
    "RhsApproximator",
    "RightHandSide",
    "SolverConfig",
    "SolverError",
    "SolverState",
    "Surface",
    "Tree",
    "WaveletIndex",
    "apply",
    "best_n_term_curve",
    "best_nterm_reference",
    "coarse",
    "estimate_residual",
    "fit_rate",
    "galerkin_matrix_dense",
    "make_cube",
    "make_fichera",
    "make_surface",
    "predicted_gamma",
    "solid_angle",
    "solve",
    "solve_adaptive",
    "solve_galerkin",
    "solve_uniform",
    "uniform_tree",
]

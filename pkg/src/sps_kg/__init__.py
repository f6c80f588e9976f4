"""Implicit finite-difference solvers for the semilinear Klein-Gordon equation in de Sitter space.

Three discretizations share a Crank-Nicolson-type phi update and differ in
the psi update (see ``sps_kg.scheme``); diagnostics track the discrete total
Hamiltonian, its drift-corrected variant, and grid-scale vibrations.
"""
__version__ = "0.1.0"

from .grid import GridSpec, d1, grid_sum, lap_std, lap_wide
from .scheme import (
    FieldState,
    FormKind,
    PhysicsParams,
    TimeGrid,
    discrete_gradient_nl,
    hamiltonian_density,
    phi_residual,
    psi_residual,
    total_hamiltonian,
)
from .solver import Method, NonConvergence, SolverConfig, StepStats, eliminate_psi, initial_guess, step
from .simulation import RunConfig, RunResult, initial_state, simulate

__all__ = [
    "FieldState", "FormKind", "GridSpec", "Method", "NonConvergence", "PhysicsParams", "RunConfig",
    "RunResult", "SolverConfig", "StepStats", "TimeGrid", "d1", "discrete_gradient_nl",
    "eliminate_psi", "grid_sum", "hamiltonian_density", "initial_guess", "initial_state", "lap_std",
    "lap_wide", "phi_residual", "psi_residual", "simulate", "step", "total_hamiltonian",
]

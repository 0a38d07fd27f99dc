"""Localized vortex-stretching and vorticity-sparseness diagnostics for a
pseudo-spectral periodic-box Navier-Stokes solver."""

from .grid import Grid, ScalarField, VectorField, StrainTensor, SpectralField
from .solver import InitialCondition, SolverConfig, Trajectory, simulate, initial_condition
from .covers import Cover, certify, generate, adversarial_family
from .cutoffs import CutoffPair, make_spatial, make_temporal, boundary_adjust, verify_bounds, refinement_study
from .ensemble import (
    budget_check,
    ensemble_average,
    integrate_trajectory,
    local_average,
    macro_stats,
    theorem_check,
    vst_ensemble,
    vst_local,
)
from .sparseness import criticality_report, h_alpha, level_set, linear_sparseness, sparseness_scan

__version__ = "0.1.0"

"""Probabilistic state transfer along dephasing XX spin chains with restoring Kraus channels."""
from .chain_model import ChainSpec, build_generator, build_hamiltonian
from .dilation import Dilation, DilationError, dilate, verify_dilation
from .extraction import MeasurementOutcome, controlled_flip, measure_extract, output_fidelity, receiver_projector
from .propagator import ClosedChain, LambdaCurve, expm_generator, evolve, find_t0, lambda_roots_2qubit
from .restoring import (
    KrausSet,
    RestoreProblem,
    RestoreSolution,
    RestoringMap,
    SolverFailure,
    apply_restore,
    build_T,
    constraint_residuals,
    solve_multistart,
    universality_check,
)
from .robustness import delta_K, delta_T, perturb_kraus, sweep_and_fit
from .sector_basis import ChainPartition, SectorBasis, build_sector_basis, dimension_report

__all__ = [
    "ChainPartition", "ChainSpec", "ClosedChain", "Dilation", "DilationError", "KrausSet", "LambdaCurve",
    "MeasurementOutcome", "RestoreProblem", "RestoreSolution", "RestoringMap", "SectorBasis", "SolverFailure",
    "apply_restore", "build_T", "build_generator", "build_hamiltonian", "build_sector_basis", "constraint_residuals",
    "controlled_flip", "delta_K", "delta_T", "dilate", "dimension_report", "evolve", "expm_generator", "find_t0",
    "lambda_roots_2qubit", "measure_extract", "output_fidelity", "perturb_kraus", "receiver_projector",
    "solve_multistart", "sweep_and_fit", "universality_check", "verify_dilation",
]

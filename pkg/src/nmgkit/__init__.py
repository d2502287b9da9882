"""Neural multigrid solvers for Gaussian-kernel integral equations.

Learned Fourier-neural-operator smoothers plug into a Galerkin V-cycle; each
level's smoother is trained on its own frequency band of the error.
"""
from .classical import SolveReport, SolverError, cg_solve, jacobi_reduction_factor, mg_cycle, mg_solve
from .fno import FnoConfig, FnoSmoother, desk_config, fno_backward, fno_forward
from .nmg import NeuralHierarchy, error_spectra, nmg_cycle, nmg_cycle_1d, nmg_cycle_2d, nmg_solve
from .problems import LinearSystemOp, ProblemSpec, build_problem
from .training import TrainConfig, train
from .transfer import LevelHierarchy, build_hierarchy

__version__ = "0.1.0"

__all__ = [
    "SolveReport", "SolverError", "cg_solve", "jacobi_reduction_factor", "mg_cycle", "mg_solve",
    "FnoConfig", "FnoSmoother", "desk_config", "fno_backward", "fno_forward",
    "NeuralHierarchy", "error_spectra", "nmg_cycle", "nmg_cycle_1d", "nmg_cycle_2d", "nmg_solve",
    "LinearSystemOp", "ProblemSpec", "build_problem",
    "TrainConfig", "train",
    "LevelHierarchy", "build_hierarchy",
]

"""Nonparametric conditional-independence mixtures fit by nonlinearly smoothed MM."""

from .engine import DescentReport, FitConfig, FitResult, descent_decomposition, fit, initialize
from .engine import majorization_step, minimization_step
from .grid import Grid1D, KernelMatrix, build_grid, build_kernel, quadrature
from .model import BinnedDataset, MixtureState, bin_dataset, discrete_objective, rescale_optimality_check

__version__ = "0.1.0"

__all__ = [
    "BinnedDataset",
    "DescentReport",
    "FitConfig",
    "FitResult",
    "Grid1D",
    "KernelMatrix",
    "MixtureState",
    "bin_dataset",
    "build_grid",
    "build_kernel",
    "descent_decomposition",
    "discrete_objective",
    "fit",
    "initialize",
    "majorization_step",
    "minimization_step",
    "quadrature",
    "rescale_optimality_check",
]

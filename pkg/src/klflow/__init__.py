"""Karhunen-Loeve random fields on a box and a Reynolds-weighted random flow."""

from .geometry import BoxDomain, build_domain, integrate
from .kernels import Kernel, gaussian, rational_quadratic
from .spectral import KLBasis, NumericalError, TruncationWarning, dirichlet_basis, load_basis, save_basis, solve_nystrom
from .flow import FlowConfig
from .dissipation import DissipationReport

__version__ = "0.1.0"

__all__ = [
    "BoxDomain", "build_domain", "integrate", "Kernel", "gaussian", "rational_quadratic",
    "KLBasis", "NumericalError", "TruncationWarning", "dirichlet_basis", "load_basis",
    "save_basis", "solve_nystrom", "FlowConfig", "DissipationReport",
]

from ._version import __version__
from .energy import EnergyBreakdown, relaxed_energy
from .errors import InvalidInputError, NumericalFailure, VexpError
from .exponent import ExponentField
from .grid import GridDomain, GridFunction, Mollifier, gradient, mollify
from .integrand import EuclideanIntegrand, Integrand, SmoothedIntegrand
from .modular import associate_norm, luxemburg_norm, modular
from .phi import VariableExponentPhi
from .relax import RelaxationBracket, upper_sequence
from .variation import Jump1D, JumpSegment, PiecewiseBVFunction, dual_variation

__all__ = [
    "EnergyBreakdown",
    "EuclideanIntegrand",
    "ExponentField",
    "GridDomain",
    "GridFunction",
    "Integrand",
    "InvalidInputError",
    "Jump1D",
    "JumpSegment",
    "Mollifier",
    "NumericalFailure",
    "PiecewiseBVFunction",
    "RelaxationBracket",
    "SmoothedIntegrand",
    "VariableExponentPhi",
    "VexpError",
    "__version__",
    "associate_norm",
    "dual_variation",
    "gradient",
    "luxemburg_norm",
    "modular",
    "mollify",
    "relaxed_energy",
    "upper_sequence",
]

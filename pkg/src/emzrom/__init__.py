"""Memory-kernel reduced-order models for Langevin chains.

Symbolic operator cumulants, data-driven kernel regression, Monte-Carlo
simulation, a projected GLE solver and a Karhunen-Loeve fluctuation model.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, KernelModel
from .chain import ChainSpec
from .errors import (BlowUpError, ConfigError, ContractError, ConvergenceError,
                     DegreeOverflowError, EmzError, NotPSDError, NumericalError)
from .polynomial import SparsePoly, apply_kolmogorov, gibbs_expectation, gibbs_inner
from .series import SampledFunction

__all__ = [
    "BasisSpec", "KernelModel", "ChainSpec", "SparsePoly", "SampledFunction",
    "apply_kolmogorov", "gibbs_expectation", "gibbs_inner",
    "EmzError", "ContractError", "DegreeOverflowError", "NumericalError", "NotPSDError",
    "BlowUpError", "ConvergenceError", "ConfigError",
]

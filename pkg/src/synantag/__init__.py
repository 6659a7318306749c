"""Bayesian detection of synergistic and antagonistic exposure interactions.

Each pairwise interaction is the difference of two non-negative rank-one
surfaces built from squared splines. An HMC-within-Gibbs sampler fits the
model, and the posterior mass of each surface's positive and negative parts
classifies the interaction as synergistic, antagonistic or null.
"""

from .errors import (ConfigError, DegeneracyError, DomainError, EmptyDatasetError, NumericalError, SamplerError,
                     SchemaError, ShapeError, SynantagError)
from .model import Dataset, ModelState, pair_list
from .sampler import PosteriorSamples, SamplerConfig, run_chain, run_chains
from .selection import SelectionReport, classify
from .splines import BasisSet, make_basis, make_bases

__version__ = "0.1.0"

__all__ = [
    "BasisSet", "ConfigError", "Dataset", "DegeneracyError", "DomainError", "EmptyDatasetError", "ModelState",
    "NumericalError", "PosteriorSamples", "SamplerConfig", "SamplerError", "SchemaError", "SelectionReport",
    "ShapeError", "SynantagError", "classify", "make_basis", "make_bases", "pair_list", "run_chain", "run_chains",
]

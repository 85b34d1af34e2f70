"""Objective Bayesian variable selection for regression with ICAR spatial effects.

The pipeline: load a neighborhood graph and data (``graph``), diagonalize the
precision structure once (``spectral``), and score every candidate model with
fractional integrated likelihoods (``likelihood``) under the marginal
reference prior for tau (``prior``), combining them into posterior model
and inclusion probabilities (``selection``).
"""

from .errors import (
    DegeneratePriorError,
    DesignError,
    DisconnectedGraphError,
    GraphError,
    InputError,
    NumericalError,
    ParseError,
    QuadratureError,
)
from .graph import (
    Dataset,
    NeighborhoodGraph,
    PrecisionStructure,
    build_precision,
    chain_graph,
    grid_graph,
    load_adjacency,
    load_dataset,
)
from .likelihood import (
    FractionalLikelihoodResult,
    SpectralWorkspace,
    log_fractional_marginal,
    log_marginal_independent,
)
from .models import ModelSpec
from .prior import EigenPrior, TracePrior, WOraclePrior, check_properness
from .quadrature import QuadConfig, adaptive_quadrature
from .selection import (
    SelectionConfig,
    SelectionResult,
    enumerate_and_score,
    kff_path_score,
    model_prior,
)
from .simulate import SimConfig, run_benchmark, simulate_dataset
from .spectral import SpectralBasis, decompose, transform

__version__ = "0.1.0"

__all__ = [
    "DegeneratePriorError", "DesignError", "DisconnectedGraphError", "GraphError",
    "InputError", "NumericalError", "ParseError", "QuadratureError",
    "Dataset", "NeighborhoodGraph", "PrecisionStructure", "build_precision",
    "chain_graph", "grid_graph", "load_adjacency", "load_dataset",
    "FractionalLikelihoodResult", "SpectralWorkspace", "log_fractional_marginal",
    "log_marginal_independent", "ModelSpec", "EigenPrior", "TracePrior", "WOraclePrior",
    "check_properness", "QuadConfig", "adaptive_quadrature", "SelectionConfig",
    "SelectionResult", "enumerate_and_score", "kff_path_score", "model_prior",
    "SimConfig", "run_benchmark", "simulate_dataset", "SpectralBasis", "decompose", "transform",
]

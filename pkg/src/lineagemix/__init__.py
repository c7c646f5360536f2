"""Joint estimation of lineage definitions and abundances from wastewater
mutation count time series."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AbundanceSeries,
    ConstraintKind,
    FitReport,
    LineageDefinitionSet,
    LineageMixError,
    MutationPanel,
    PosteriorDraws,
    binomial_loglik,
    frequency_matrix,
)
from .mcmc import SamplerConfig  # noqa: E402

__all__ = [
    "AbundanceSeries",
    "ConstraintKind",
    "FitReport",
    "LineageDefinitionSet",
    "LineageMixError",
    "MutationPanel",
    "PosteriorDraws",
    "SamplerConfig",
    "binomial_loglik",
    "frequency_matrix",
    "__version__",
]

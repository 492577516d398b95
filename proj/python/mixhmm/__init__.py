"""Hidden Markov models with covariate-dependent parameters.

The model is described by a JSON spec (see the README) and bound to a CSV
table. Fits maximise the Laplace-approximated marginal likelihood.
"""

from ._core import (
    FitResult,
    Model,
    ModelError,
    ParameterSet,
    normalize_spec,
    reflected_random_walk,
    simulate,
)

__all__ = [
    "FitResult",
    "Model",
    "ModelError",
    "ParameterSet",
    "normalize_spec",
    "reflected_random_walk",
    "simulate",
]

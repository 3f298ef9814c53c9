"""Scalable spatio-temporal Gaussian process regression.

Combines spatial pseudo-point (inducing point) summaries with the Markov
state-space form of half-integer Matern temporal kernels, so that collapsed
variational inference, FITC-style alternatives and posterior prediction all
run as Kalman filtering/smoothing passes: linear in the number of time
points, cubic only in the (small) number of pseudo-inputs per time.

Dense reference implementations of every quantity live in
:mod:`stgp.oracle`; they are slow, obvious and used to verify the structured
routes.
"""

from .errors import (
    AlphaOutOfRange,
    CholeskyFailure,
    DimensionMismatch,
    MaskLengthMismatch,
    NegativeTimestep,
    NonDiagonalNoise,
    NonIncreasingTimes,
    QueryTimeNotOnGrid,
    SingularConditioningSet,
    SingularPseudoGram,
    StgpError,
    TimeAlignmentError,
)
from .kernels import (
    ExponentiatedQuadratic,
    SumSeparableKernel,
    TemporalMatern,
    full_gram,
    sde_discretize,
    separable,
    spatial_gram,
    temporal_cov,
)
from .lgssm import Lgssm, PosteriorMarginals, TimeStep
from .linalg import (
    CholeskyFactor,
    Gaussian,
    LinearGaussianConditional,
    bottleneck_inference,
    cholesky_upper,
    kron,
    low_rank_inference,
    naive_inference,
)
from .pseudopoint import (
    ApproximationFamily,
    PseudoInputs,
    TimeGroupedData,
    approximate_lgssm,
    conditional_independence_residual,
    elbo,
    modified_noise,
    predict,
    projection_matrices,
)
from .statespace import RectilinearSpec, StateSpaceGp, build_lgssm, lml, posterior_grid_marginals
from .training import (
    FitConfig,
    FitResult,
    KernelLayout,
    ParameterVector,
    Transform,
    build_model,
    fit,
    gradient,
    initial_parameters,
    objective,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaOutOfRange",
    "ApproximationFamily",
    "CholeskyFactor",
    "CholeskyFailure",
    "DimensionMismatch",
    "ExponentiatedQuadratic",
    "FitConfig",
    "FitResult",
    "Gaussian",
    "KernelLayout",
    "Lgssm",
    "LinearGaussianConditional",
    "MaskLengthMismatch",
    "NegativeTimestep",
    "NonDiagonalNoise",
    "NonIncreasingTimes",
    "ParameterVector",
    "PosteriorMarginals",
    "PseudoInputs",
    "QueryTimeNotOnGrid",
    "RectilinearSpec",
    "SingularConditioningSet",
    "SingularPseudoGram",
    "StateSpaceGp",
    "StgpError",
    "SumSeparableKernel",
    "TemporalMatern",
    "TimeAlignmentError",
    "TimeGroupedData",
    "TimeStep",
    "Transform",
    "approximate_lgssm",
    "bottleneck_inference",
    "build_lgssm",
    "build_model",
    "cholesky_upper",
    "conditional_independence_residual",
    "elbo",
    "fit",
    "full_gram",
    "gradient",
    "initial_parameters",
    "kron",
    "lml",
    "low_rank_inference",
    "modified_noise",
    "naive_inference",
    "objective",
    "posterior_grid_marginals",
    "predict",
    "projection_matrices",
    "sde_discretize",
    "separable",
    "spatial_gram",
    "temporal_cov",
]

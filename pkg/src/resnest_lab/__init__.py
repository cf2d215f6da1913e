"""ResNEst, A-ResNEst and DenseNEst models with empirical-risk landscape checks."""

from .errors import (
    DivergenceError,
    InputError,
    MonotonicityError,
    ParseError,
    PreconditionError,
    ResNEstLabError,
    ResourceError,
    ShapeError,
)
from .models import (
    AResNEstParams,
    BlockFn,
    DenseNEstConfig,
    DenseNEstParams,
    FeatureWeights,
    ResNEstConfig,
    ResNEstParams,
    compute_features,
    densenest_forward,
    init_params,
    resnest_forward,
)
from .risk import Dataset

__version__ = "0.1.0"

__all__ = [
    "AResNEstParams",
    "BlockFn",
    "Dataset",
    "DenseNEstConfig",
    "DenseNEstParams",
    "DivergenceError",
    "FeatureWeights",
    "InputError",
    "MonotonicityError",
    "ParseError",
    "PreconditionError",
    "ResNEstConfig",
    "ResNEstLabError",
    "ResNEstParams",
    "ResourceError",
    "ShapeError",
    "compute_features",
    "densenest_forward",
    "init_params",
    "resnest_forward",
]

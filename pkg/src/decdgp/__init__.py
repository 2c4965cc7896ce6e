"""Sparse variational deep Gaussian process regression with decoupled
inducing inputs: the predictive mean and the predictive variance of each
layer may use separate inducing sets of different sizes.

The package is organized around small, mostly pure modules:

``kernel``
    ARD squared-exponential covariance and the Cholesky/jitter numerics.
``layer``
    Per-layer predictive marginals (coupled and decoupled forms), static
    mean maps, reparameterized sampling.
``objective``
    Evidence lower bound: Monte Carlo expected log-likelihood plus
    analytic KL terms.
``model``
    Layer stacks, forward sampling, test metrics, serialization.
``train``
    Adam optimization with deterministic seeding and checkpoints.
``data``
    CSV ingestion, normalization, splits, synthetic generators.
``oracle``
    Independent brute-force references used by the test suite and the
    ``gradcheck`` command.
``cli``
    The ``decdgp`` command line tool (train / evaluate / benchmark /
    gradcheck).
"""

from .errors import (
    ConfigurationError,
    DecdgpError,
    IngestionError,
    NumericalError,
    OracleError,
    TrainingError,
    VerificationError,
)
from .kernel import JitterPolicy, KernelParams
from .layer import (
    CoupledLayerState,
    DecoupledLayerState,
    MeanVariant,
    StaticMeanMap,
    VarVariant,
)
from .model import DgpModel
from .train import TrainConfig

__all__ = [
    "ConfigurationError",
    "CoupledLayerState",
    "DecdgpError",
    "DecoupledLayerState",
    "DgpModel",
    "IngestionError",
    "JitterPolicy",
    "KernelParams",
    "MeanVariant",
    "NumericalError",
    "OracleError",
    "StaticMeanMap",
    "TrainConfig",
    "TrainingError",
    "VarVariant",
    "VerificationError",
]

__version__ = "0.1.0"

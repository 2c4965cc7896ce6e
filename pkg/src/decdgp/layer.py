"""Single-layer GP predictive marginals, coupled and decoupled.

A layer owns one set of variational parameters shared across its output
columns. The coupled form keeps one inducing set for both predictive
moments; the decoupled form splits them, with a (usually large) set
driving the mean and a (usually small) set driving the variance.

Only per-point variances are produced. Sampling between layers needs
marginals, and restricting to the diagonal is what makes the large
mean-inducing set affordable.
"""

from dataclasses import dataclass
from enum import Enum

import torch

from .errors import ConfigurationError, NumericalError
from .kernel import (
    JitterPolicy,
    KernelParams,
    default_jitter_policy,
    kernel_diag,
    kernel_matrix,
    robust_cholesky,
    triangular_solve,
)
from .util import DTYPE, as_tensor

VARIANCE_FLOOR_SCALE = 1e-8


class MeanVariant(str, Enum):
    """How the mean parameter matrix is interpreted.

    dual: the parameter is the dual weight vector per column; the
        predictive mean is the cross-covariance times the parameter, no
        solve involved.
    standard: the parameter is the usual inducing-output mean; the
        predictive mean applies the inverse mean-set covariance to it.
    whitened: the parameter lives in the basis where the prior is a
        standard Gaussian; the predictive mean applies the inverse
        transposed Cholesky factor of the mean-set covariance.
    """

    DUAL = "dual"
    STANDARD = "standard"
    WHITENED = "whitened"


class VarVariant(str, Enum):
    """Which covariance gram sits inside the variance-path inverse.

    standard: the variance inducing set's own covariance.
    mean_gram: the mean inducing set's covariance; only conformable when
        the two sets have equal size.
    """

    STANDARD = "standard"
    MEAN_GRAM = "mean-gram"


@dataclass
class StaticMeanMap:
    """Fixed linear map added to a layer's output mean: X -> X @ W.

    W is frozen at construction and never trained.
    """

    W: torch.Tensor

    def __post_init__(self):
        self.W = as_tensor(self.W)
        if self.W.ndim != 2:
            raise ConfigurationError("static mean map W must be a matrix")

    @classmethod
    def identity(cls, d_in: int, d_out: int) -> "StaticMeanMap":
        """Identity when widths match; truncated or zero-padded otherwise."""
        return cls(torch.eye(d_in, d_out, dtype=DTYPE))

    @classmethod
    def zero(cls, d_in: int, d_out: int) -> "StaticMeanMap":
        return cls(torch.zeros(d_in, d_out, dtype=DTYPE))


def apply_static_mean(X, mean_map: StaticMeanMap, layer_output_mean) -> torch.Tensor:
    """Add the fixed linear trend: layer_output_mean + X @ W."""
    X = as_tensor(X)
    out = as_tensor(layer_output_mean)
    if X.shape[1] != mean_map.W.shape[0] or out.shape[1] != mean_map.W.shape[1]:
        raise ConfigurationError(
            f"static mean map {tuple(mean_map.W.shape)} does not conform to input "
            f"{tuple(X.shape)} and output {tuple(out.shape)}"
        )
    return out + X @ mean_map.W


def _check_lower_triangular(L: torch.Tensor, name: str):
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ConfigurationError(f"{name} must be square, got {tuple(L.shape)}")
    if not bool((L.triu(1) == 0).all()):
        raise ConfigurationError(f"{name} must be lower-triangular")
    if not bool((L.diagonal() > 0).all()):
        raise ConfigurationError(f"{name} must have a strictly positive diagonal")


@dataclass
class CoupledLayerState:
    """One GP layer with a single inducing set for mean and variance.

    Z: M x d_in inducing inputs. m: M x d_out variational means, one
    column per output. L_s: lower-triangular factor of the shared
    variational covariance S = L_s L_s^T.
    """

    Z: torch.Tensor
    m: torch.Tensor
    L_s: torch.Tensor
    kernel: KernelParams

    def __post_init__(self):
        self.Z = as_tensor(self.Z)
        self.m = as_tensor(self.m)
        self.L_s = as_tensor(self.L_s)
        if self.Z.ndim != 2 or self.m.ndim != 2:
            raise ConfigurationError("Z and m must be matrices")
        M = self.Z.shape[0]
        if self.Z.shape[1] != self.kernel.input_dim:
            raise ConfigurationError("Z width does not match kernel input dimension")
        if self.m.shape[0] != M:
            raise ConfigurationError("m must have one row per inducing input")
        _check_lower_triangular(self.L_s, "L_s")
        if self.L_s.shape[0] != M:
            raise ConfigurationError("L_s size must match the number of inducing inputs")

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    @property
    def d_out(self) -> int:
        return self.m.shape[1]


@dataclass
class DecoupledLayerState:
    """One GP layer with separate inducing sets for mean and variance.

    Z_a: M_a x d_in inducing inputs for the mean path. Z_b: M_b x d_in
    inducing inputs for the variance path. mean_param: M_a x d_out,
    interpreted per MeanVariant. L_b: lower-triangular factor of the
    variance-path precision-like matrix B = L_b L_b^T, shared across
    outputs.
    """

    Z_a: torch.Tensor
    Z_b: torch.Tensor
    mean_param: torch.Tensor
    L_b: torch.Tensor
    kernel: KernelParams

    def __post_init__(self):
        self.Z_a = as_tensor(self.Z_a)
        self.Z_b = as_tensor(self.Z_b)
        self.mean_param = as_tensor(self.mean_param)
        self.L_b = as_tensor(self.L_b)
        for name, Z in (("Z_a", self.Z_a), ("Z_b", self.Z_b)):
            if Z.ndim != 2 or Z.shape[1] != self.kernel.input_dim:
                raise ConfigurationError(
                    f"{name} must be a matrix with {self.kernel.input_dim} columns"
                )
        if self.mean_param.ndim != 2 or self.mean_param.shape[0] != self.Z_a.shape[0]:
            raise ConfigurationError("mean_param must have one row per mean inducing input")
        _check_lower_triangular(self.L_b, "L_b")
        if self.L_b.shape[0] != self.Z_b.shape[0]:
            raise ConfigurationError("L_b size must match the variance inducing set")

    @property
    def num_mean_inducing(self) -> int:
        return self.Z_a.shape[0]

    @property
    def num_var_inducing(self) -> int:
        return self.Z_b.shape[0]

    @property
    def d_out(self) -> int:
        return self.mean_param.shape[1]


def variance_floor(params: KernelParams) -> torch.Tensor:
    """Positive clamp applied to predictive variances before sampling.

    Detached from the graph so the floor acts as a constant.
    """
    return VARIANCE_FLOOR_SCALE * params.signal_variance.detach()


def coupled_predict(X, layer: CoupledLayerState, policy: JitterPolicy | None = None):
    """Predictive marginals of a coupled layer at the rows of X.

    Returns (mean, var) with mean n x d_out and var an n-vector. The mean
    is the cross-covariance applied to the solved variational means; the
    variance subtracts the explained part and adds back the variational
    covariance contribution, all through one Cholesky factor of K_ZZ:

        A = L^-1 K_ZX,  C = L^-1 L_s
        mean = A^T (L^-1 m)
        var  = k_diag - colsum(A^2) + colsum((C^T A)^2)
    """
    X = as_tensor(X)
    if policy is None:
        policy = default_jitter_policy(layer.kernel.signal_variance)
    Kzz = kernel_matrix(layer.Z, layer.Z, layer.kernel)
    L, _ = robust_cholesky(Kzz, policy)
    Kzx = kernel_matrix(layer.Z, X, layer.kernel)
    A = triangular_solve(L, Kzx)
    u = triangular_solve(L, layer.m)
    mean = A.mT @ u
    C = triangular_solve(L, layer.L_s)
    var = (
        kernel_diag(X, layer.kernel)
        - (A * A).sum(dim=0)
        + ((C.mT @ A) ** 2).sum(dim=0)
    )
    return mean, torch.clamp_min(var, variance_floor(layer.kernel))


def decoupled_predict(
    X,
    layer: DecoupledLayerState,
    mean_variant: MeanVariant,
    var_variant: VarVariant,
    policy: JitterPolicy | None = None,
):
    """Predictive marginals of a decoupled layer at the rows of X.

    The mean path touches only Z_a and the variance path only Z_b (plus
    K_{Z_a Z_a} when the mean-gram variance is selected). B is applied
    through the identity

        (B^-1 + G)^-1 = L_b (I + L_b^T G L_b)^-1 L_b^T

    so no matrix is ever inverted explicitly; G is the gram selected by
    the variance variant. Cost is O(n M_a d_out) for the mean after an
    M_a^3 factorization (skipped entirely by the dual variant) and
    O(n M_b^2 + M_b^3) for the variance.
    """
    X = as_tensor(X)
    params = layer.kernel
    if policy is None:
        policy = default_jitter_policy(params.signal_variance)

    Kax = kernel_matrix(layer.Z_a, X, params)
    if mean_variant == MeanVariant.DUAL:
        weights = layer.mean_param
    else:
        Kaa = kernel_matrix(layer.Z_a, layer.Z_a, params)
        La, _ = robust_cholesky(Kaa, policy)
        if mean_variant == MeanVariant.STANDARD:
            half = triangular_solve(La, layer.mean_param)
            weights = triangular_solve(La, half, side="lower-transposed")
        elif mean_variant == MeanVariant.WHITENED:
            weights = triangular_solve(La, layer.mean_param, side="lower-transposed")
        else:
            raise ConfigurationError(f"unknown mean variant {mean_variant!r}")
    mean = Kax.mT @ weights

    if var_variant == VarVariant.STANDARD:
        gram = kernel_matrix(layer.Z_b, layer.Z_b, params)
    elif var_variant == VarVariant.MEAN_GRAM:
        if layer.num_mean_inducing != layer.num_var_inducing:
            raise ConfigurationError(
                "mean-gram variance needs equally sized inducing sets, got "
                f"{layer.num_mean_inducing} and {layer.num_var_inducing}"
            )
        gram = kernel_matrix(layer.Z_a, layer.Z_a, params)
    else:
        raise ConfigurationError(f"unknown variance variant {var_variant!r}")

    Kbx = kernel_matrix(layer.Z_b, X, params)
    Lb = layer.L_b
    M_b = layer.num_var_inducing
    T = torch.eye(M_b, dtype=DTYPE) + Lb.mT @ gram @ Lb
    Lt, _ = robust_cholesky(0.5 * (T + T.mT))
    H = triangular_solve(Lt, Lb.mT @ Kbx)
    var = kernel_diag(X, params) - (H * H).sum(dim=0)
    return mean, torch.clamp_min(var, variance_floor(params))


def sample_layer(mean, var, noise) -> torch.Tensor:
    """One reparameterized draw: mean + sqrt(var) * noise.

    var is a per-point vector broadcast across the output columns; noise
    carries the randomness, so the result is differentiable in mean and
    var.
    """
    mean = as_tensor(mean)
    var = as_tensor(var)
    noise = as_tensor(noise)
    if var.ndim != 1 or var.shape[0] != mean.shape[0] or noise.shape != mean.shape:
        raise ConfigurationError(
            f"sample shapes do not conform: mean {tuple(mean.shape)}, "
            f"var {tuple(var.shape)}, noise {tuple(noise.shape)}"
        )
    if bool((var < 0).any()):
        raise NumericalError("negative variance reached the sampler")
    return mean + torch.sqrt(var).unsqueeze(1) * noise

"""Training objective: expected log-likelihood plus analytic KL penalties.

The bound maximized during training is

    total = (N / batch) * sum_i E_q[log p(y_i | f_i)] - sum_l KL_l

with the expectation over one reparameterized path through the hidden
layers (the final layer enters analytically) and every KL available in
closed form. Both layer parameterizations get their own KL routine; under
the usual parameter mapping the two agree exactly, with no leftover
constant.
"""

import math
from dataclasses import dataclass

import torch

from .errors import ConfigurationError, NumericalError
from .kernel import (
    JitterPolicy,
    default_jitter_policy,
    kernel_matrix,
    robust_cholesky,
    triangular_solve,
)
from .layer import CoupledLayerState, DecoupledLayerState, MeanVariant
from .model import DgpModel, propagate_once
from .util import DTYPE, as_tensor

LOG_TWO_PI = math.log(2.0 * math.pi)


def kl_coupled(layer: CoupledLayerState, policy: JitterPolicy | None = None) -> torch.Tensor:
    """KL from the coupled variational distribution to the GP prior.

    Per output column: 1/2 m^T K^-1 m + 1/2 log|K| - 1/2 log|S|
    + 1/2 tr(K^-1 S) - M/2. The mean term is summed over columns; the
    shared-covariance terms are multiplied by the column count. Both
    log-determinants come from triangular diagonals, the trace from a
    squared Frobenius norm.
    """
    if policy is None:
        policy = default_jitter_policy(layer.kernel.signal_variance)
    Kzz = kernel_matrix(layer.Z, layer.Z, layer.kernel)
    L, _ = robust_cholesky(Kzz, policy)
    alpha = triangular_solve(L, layer.m)
    mean_term = 0.5 * (alpha * alpha).sum()
    logdet_K = 2.0 * torch.log(L.diagonal()).sum()
    logdet_S = 2.0 * torch.log(layer.L_s.diagonal()).sum()
    C = triangular_solve(L, layer.L_s)
    trace_term = (C * C).sum()
    M = layer.num_inducing
    shared = 0.5 * (logdet_K - logdet_S + trace_term) - 0.5 * M
    return mean_term + layer.d_out * shared


def kl_decoupled(
    layer: DecoupledLayerState,
    mean_variant: MeanVariant,
    policy: JitterPolicy | None = None,
) -> torch.Tensor:
    """KL of the decoupled variational distribution, by mean variant.

    Covariance part, shared across columns and scaled by the column
    count, with T = I + L_b^T K_ZbZb L_b:

        1/2 log|T| - 1/2 (M_b - tr(T^-1))

    Mean part, summed over columns: dual 1/2 a^T K_ZaZa a, standard
    1/2 m^T K_ZaZa^-1 m, whitened 1/2 m'^T m'. Equals the coupled KL
    exactly under the shared-inducing-set parameter mapping.
    """
    if policy is None:
        policy = default_jitter_policy(layer.kernel.signal_variance)
    p = layer.mean_param
    if mean_variant == MeanVariant.WHITENED:
        mean_term = 0.5 * (p * p).sum()
    elif mean_variant == MeanVariant.DUAL:
        Kaa = kernel_matrix(layer.Z_a, layer.Z_a, layer.kernel)
        mean_term = 0.5 * (p * (Kaa @ p)).sum()
    elif mean_variant == MeanVariant.STANDARD:
        Kaa = kernel_matrix(layer.Z_a, layer.Z_a, layer.kernel)
        La, _ = robust_cholesky(Kaa, policy)
        half = triangular_solve(La, p)
        mean_term = 0.5 * (half * half).sum()
    else:
        raise ConfigurationError(f"unknown mean variant {mean_variant!r}")

    Kbb = kernel_matrix(layer.Z_b, layer.Z_b, layer.kernel)
    Lb = layer.L_b
    M_b = layer.num_var_inducing
    T = torch.eye(M_b, dtype=DTYPE) + Lb.mT @ Kbb @ Lb
    Lt, _ = robust_cholesky(0.5 * (T + T.mT))
    half_logdet_T = torch.log(Lt.diagonal()).sum()
    Lt_inv = triangular_solve(Lt, torch.eye(M_b, dtype=DTYPE))
    trace_T_inv = (Lt_inv * Lt_inv).sum()
    shared = half_logdet_T - 0.5 * (M_b - trace_T_inv)
    return mean_term + layer.d_out * shared


def expected_log_lik_gaussian(y, mean, var, noise_var) -> torch.Tensor:
    """Closed-form E[log N(y | f, noise_var)] for f ~ N(mean, var), summed.

    var is a per-point vector broadcast over the output columns:
    each point/column contributes
    -1/2 log(2 pi nv) - ((y - mean)^2 + var) / (2 nv).
    """
    y = as_tensor(y)
    mean = as_tensor(mean)
    var = as_tensor(var)
    nv = as_tensor(noise_var).reshape(())
    if y.shape != mean.shape or var.shape != (y.shape[0],):
        raise ConfigurationError(
            f"shapes do not conform: y {tuple(y.shape)}, mean {tuple(mean.shape)}, "
            f"var {tuple(var.shape)}"
        )
    if not bool(nv > 0):
        raise ConfigurationError("noise variance must be positive")
    if bool((var < 0).any()):
        raise NumericalError("negative predictive variance in the likelihood term")
    d_y = y.shape[1]
    quad = ((y - mean) ** 2).sum() + d_y * var.sum()
    n_terms = y.shape[0] * d_y
    return -0.5 * n_terms * (LOG_TWO_PI + torch.log(nv)) - quad / (2.0 * nv)


@dataclass
class ElboEstimate:
    """One evaluation of the bound, decomposed.

    expected_log_lik is the unscaled batch sum; total applies the
    full-data reweighting and subtracts the KL terms:
    total = scale_factor * expected_log_lik - sum(kl_per_layer).
    """

    total: float
    expected_log_lik: float
    kl_per_layer: list
    scale_factor: float


def model_kl_terms(model: DgpModel) -> list:
    """Per-layer KL tensors for every layer in the stack."""
    terms = []
    for layer in model.layers:
        if isinstance(layer, CoupledLayerState):
            terms.append(kl_coupled(layer))
        else:
            terms.append(kl_decoupled(layer, model.mean_variant))
    return terms


def elbo_terms(model: DgpModel, X, Y, full_data_size: int, rng_seed: int):
    """Differentiable bound pieces: (total, batch log-lik sum, kls, scale).

    One sampled path through the hidden layers; the final layer's
    marginals feed the closed-form likelihood term. Deterministic given
    rng_seed.
    """
    X = as_tensor(X)
    Y = as_tensor(Y)
    if X.shape[0] == 0:
        raise ConfigurationError("empty batch")
    if Y.shape[0] != X.shape[0]:
        raise ConfigurationError("X and Y row counts differ")
    if full_data_size < X.shape[0]:
        raise ConfigurationError("full_data_size smaller than the batch")
    mean, var = propagate_once(model, X, rng_seed)
    ell = expected_log_lik_gaussian(Y, mean, var, model.noise_var)
    kls = model_kl_terms(model)
    scale = full_data_size / X.shape[0]
    total = scale * ell - sum(kls)
    return total, ell, kls, scale


def elbo(model: DgpModel, batch, full_data_size: int, rng_seed: int) -> ElboEstimate:
    """Evaluate the bound on one batch. See elbo_terms for the pieces."""
    X, Y = batch
    total, ell, kls, scale = elbo_terms(model, X, Y, full_data_size, rng_seed)
    return ElboEstimate(
        total=float(total),
        expected_log_lik=float(ell),
        kl_per_layer=[float(k) for k in kls],
        scale_factor=scale,
    )

"""Shared generators for random layer states.

Tight equivalence tolerances (1e-8 against a dense-inverse oracle)
need well-conditioned inducing grams, so inducing inputs come from a
jittered grid in lengthscale units: nodes 1.5 apart, jitter up to
0.25, leaving at least one unit of scaled separation between any two
rows. Test inputs carry no such constraint and are drawn uniformly.
"""

import numpy as np
import torch

from decdgp.kernel import KernelParams, kernel_matrix, robust_cholesky
from decdgp.layer import CoupledLayerState, DecoupledLayerState, MeanVariant
from decdgp.util import DTYPE

GRID_SPACING = 1.5
GRID_JITTER = 0.25


def tensor(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=DTYPE)


def random_kernel(rng, d):
    lengthscales = rng.uniform(0.4, 1.5, size=d)
    signal_variance = rng.uniform(0.5, 2.0)
    return KernelParams.from_values(lengthscales, signal_variance)


def separated_inputs(rng, n, d, kernel: KernelParams) -> torch.Tensor:
    """n points whose pairwise distance is >= 1 in lengthscale units."""
    side = int(np.ceil(n ** (1.0 / d)))
    while side**d < n:
        side += 1
    axes = [np.arange(side) * GRID_SPACING for _ in range(d)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    chosen = nodes[rng.choice(nodes.shape[0], size=n, replace=False)]
    scaled = chosen + rng.uniform(-GRID_JITTER, GRID_JITTER, size=(n, d))
    scaled -= scaled.mean(axis=0)
    ls = kernel.lengthscales.detach().numpy()
    return tensor(scaled * ls)


def uniform_inputs(rng, n, d, kernel: KernelParams) -> torch.Tensor:
    ls = kernel.lengthscales.detach().numpy()
    half = 0.75 * GRID_SPACING * max(2.0, n ** (1.0 / d))
    return tensor(rng.uniform(-half, half, size=(n, d)) * ls)


def random_lower(rng, m, diag_range=(0.4, 1.1), off_scale=0.15) -> torch.Tensor:
    L = np.tril(rng.normal(0.0, off_scale, size=(m, m)), k=-1)
    L[np.diag_indices(m)] = rng.uniform(*diag_range, size=m)
    return tensor(L)


def random_coupled(rng, m, d_in, d_out) -> CoupledLayerState:
    kernel = random_kernel(rng, d_in)
    Z = separated_inputs(rng, m, d_in, kernel)
    mean = tensor(rng.normal(0.0, 0.7, size=(m, d_out)))
    return CoupledLayerState(Z, mean, random_lower(rng, m), kernel)


def random_decoupled(rng, ma, mb, d_in, d_out) -> DecoupledLayerState:
    kernel = random_kernel(rng, d_in)
    both = separated_inputs(rng, ma + mb, d_in, kernel)
    mean = tensor(rng.normal(0.0, 0.7, size=(ma, d_out)))
    return DecoupledLayerState(
        both[:ma], both[ma:], mean, random_lower(rng, mb), kernel
    )


def assert_no_jitter(state):
    """The generators promise grams that factor cleanly; verify it."""
    if isinstance(state, CoupledLayerState):
        inducing = [state.Z]
    else:
        inducing = [state.Z_a, state.Z_b]
    for Z in inducing:
        K = kernel_matrix(Z, Z, state.kernel)
        assert robust_cholesky(K).jitter == 0.0


def matched_pair(rng, m, d_in, d_out, mean_variant: MeanVariant):
    """A coupled state and the decoupled state that reproduces it.

    Shares one inducing set Z and one kernel. Starting from a random
    factor L_b, the coupled covariance is S = (K^-1 + B)^-1 with
    B = L_b L_b^T, formed through the Woodbury identity so K is never
    inverted. The mean parameter is mapped per variant: K^-1 m for the
    dual form, m itself for the standard form, and chol(K)^-1 m for
    the whitened form.
    """
    kernel = random_kernel(rng, d_in)
    Z = separated_inputs(rng, m, d_in, kernel)
    K = kernel_matrix(Z, Z, kernel).numpy()
    L_b = random_lower(rng, m)
    B_half = L_b.numpy()

    KB = K @ B_half
    T = np.eye(m) + B_half.T @ KB
    S = K - KB @ np.linalg.solve(T, KB.T)
    S = 0.5 * (S + S.T)
    L_s = np.linalg.cholesky(S)

    mean = rng.normal(0.0, 0.7, size=(m, d_out))
    if mean_variant is MeanVariant.DUAL:
        mapped = np.linalg.solve(K, mean)
    elif mean_variant is MeanVariant.STANDARD:
        mapped = mean
    else:
        L = np.linalg.cholesky(K)
        mapped = np.linalg.solve(L, mean)

    coupled = CoupledLayerState(Z, tensor(mean), tensor(L_s), kernel)
    decoupled = DecoupledLayerState(Z, Z.clone(), tensor(mapped), L_b, kernel)
    return coupled, decoupled

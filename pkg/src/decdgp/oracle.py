"""Brute-force reference computations used only to validate the library.

Nothing here shares linear-algebra code with the modules under test:
kernels are evaluated pairwise in loops, inverses are explicit, and all
arithmetic is plain numpy. These routines are meant for small problems
inside the test suite and the gradient-check command, never for training.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, OracleError


def _np(v) -> np.ndarray:
    detach = getattr(v, "detach", None)
    return np.asarray(detach() if detach is not None else v, dtype=np.float64)


@dataclass
class FiniteDiffSpec:
    """Central differences with per-coordinate step h = h0 * (1 + |theta|)."""

    h0: float = 1e-4
    scheme: str = "central"

    def __post_init__(self):
        if not self.h0 > 0:
            raise ConfigurationError("finite-difference step h0 must be positive")
        if self.scheme != "central":
            raise ConfigurationError(f"unsupported scheme {self.scheme!r}")


def finite_diff_grad(f, theta, spec: FiniteDiffSpec | None = None) -> np.ndarray:
    """Gradient of a scalar function by central differences, coordinate-wise."""
    if spec is None:
        spec = FiniteDiffSpec()
    theta = _np(theta).ravel().copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        h = spec.h0 * (1.0 + abs(theta[i]))
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        f_up = float(f(up))
        f_down = float(f(down))
        if not (math.isfinite(f_up) and math.isfinite(f_down)):
            raise OracleError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_up - f_down) / (2.0 * h)
    return grad


def _require_spd(S: np.ndarray, name: str):
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise OracleError(f"{name} must be square")
    if not np.allclose(S, S.T, atol=1e-10):
        raise OracleError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(S).min() <= 0:
        raise OracleError(f"{name} is not positive definite")


def dense_gaussian_kl(m0, S0, m1, S1) -> float:
    """Textbook KL(N(m0, S0) || N(m1, S1)) with explicit dense operations."""
    m0 = _np(m0).ravel()
    m1 = _np(m1).ravel()
    S0 = _np(S0)
    S1 = _np(S1)
    _require_spd(S0, "S0")
    _require_spd(S1, "S1")
    k = m0.size
    S1_inv = np.linalg.inv(S1)
    diff = m1 - m0
    _, logdet0 = np.linalg.slogdet(S0)
    _, logdet1 = np.linalg.slogdet(S1)
    return 0.5 * float(
        np.trace(S1_inv @ S0) + diff @ S1_inv @ diff - k + logdet1 - logdet0
    )


def _kernel_values(kernel):
    if isinstance(kernel, tuple):
        lengthscales, signal_variance = kernel
    else:
        lengthscales = kernel.lengthscales
        signal_variance = kernel.signal_variance
    return _np(lengthscales).ravel(), float(_np(signal_variance))


def naive_kernel(A, B, kernel) -> np.ndarray:
    """Pairwise loop evaluation of the ARD squared-exponential kernel."""
    ls, s2 = _kernel_values(kernel)
    A = _np(A)
    B = _np(B)
    K = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            d = (A[i] - B[j]) / ls
            K[i, j] = s2 * math.exp(-0.5 * float(d @ d))
    return K


def exact_gp_log_marginal(X, y, kernel, noise_var: float) -> float:
    """log N(y | 0, K_XX + noise_var * I) by dense Cholesky, small N only.

    y may have several columns; columns are treated as independent draws
    and their log-densities summed.
    """
    X = _np(X)
    y = _np(y)
    if y.ndim == 1:
        y = y[:, None]
    N = X.shape[0]
    if N > 500:
        raise ConfigurationError("exact GP oracle is restricted to N <= 500")
    C = naive_kernel(X, X, kernel) + float(noise_var) * np.eye(N)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise OracleError("covariance is not positive definite") from exc
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    alpha = np.linalg.solve(L, y)
    total = 0.0
    for col in range(y.shape[1]):
        quad = float(alpha[:, col] @ alpha[:, col])
        total += -0.5 * quad - 0.5 * logdet - 0.5 * N * math.log(2.0 * math.pi)
    return total


def dense_predictive_oracle(X, layer, kind: str, mean_variant=None, var_variant=None):
    """Literal dense-inverse transcription of the predictive equations.

    Returns (mean, var) as numpy arrays, with no clamping and no code
    shared with the layer module. kind is "coupled" or "decoupled"; the
    decoupled form needs the variant tags (enum members or their string
    values).
    """
    X = _np(X)
    kernel = layer.kernel
    try:
        if kind == "coupled":
            Z = _np(layer.Z)
            m = _np(layer.m)
            L_s = _np(layer.L_s)
            Kzz = naive_kernel(Z, Z, kernel)
            Kxz = naive_kernel(X, Z, kernel)
            Kxx = naive_kernel(X, X, kernel)
            Kzz_inv = np.linalg.inv(Kzz)
            mean = Kxz @ Kzz_inv @ m
            S = L_s @ L_s.T
            Sigma = Kxx - Kxz @ Kzz_inv @ (Kzz - S) @ Kzz_inv @ Kxz.T
            return mean, np.diag(Sigma).copy()
        if kind != "decoupled":
            raise ConfigurationError(f"unknown oracle kind {kind!r}")
        mv = getattr(mean_variant, "value", mean_variant)
        vv = getattr(var_variant, "value", var_variant)
        Za = _np(layer.Z_a)
        Zb = _np(layer.Z_b)
        p = _np(layer.mean_param)
        Lb = _np(layer.L_b)
        Kxa = naive_kernel(X, Za, kernel)
        Kxx = naive_kernel(X, X, kernel)
        if mv == "dual":
            mean = Kxa @ p
        elif mv == "standard":
            Kaa = naive_kernel(Za, Za, kernel)
            mean = Kxa @ np.linalg.inv(Kaa) @ p
        elif mv == "whitened":
            Kaa = naive_kernel(Za, Za, kernel)
            La = np.linalg.cholesky(Kaa)
            mean = Kxa @ np.linalg.inv(La.T) @ p
        else:
            raise ConfigurationError(f"unknown mean variant {mean_variant!r}")
        if vv == "standard":
            G = naive_kernel(Zb, Zb, kernel)
        elif vv == "mean-gram":
            if Za.shape[0] != Zb.shape[0]:
                raise OracleError("mean-gram variance needs equally sized inducing sets")
            G = naive_kernel(Za, Za, kernel)
        else:
            raise ConfigurationError(f"unknown variance variant {var_variant!r}")
        B = Lb @ Lb.T
        middle = np.linalg.inv(np.linalg.inv(B) + G)
        Kxb = naive_kernel(X, Zb, kernel)
        Sigma = Kxx - Kxb @ middle @ Kxb.T
        return mean, np.diag(Sigma).copy()
    except np.linalg.LinAlgError as exc:
        raise OracleError("singular matrix in dense predictive oracle") from exc

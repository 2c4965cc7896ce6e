"""ARD squared-exponential covariance and Cholesky/jitter numerics.

Every other module funnels its linear algebra through this one:
``kernel_matrix`` / ``kernel_diag`` evaluate the covariance,
``robust_cholesky`` factorizes symmetric matrices with an escalating
diagonal jitter schedule, and ``triangular_solve`` realizes all inverse
applications as forward/back substitutions. Explicit matrix inversion is
deliberately absent.

Hyperparameters are stored as logs so optimizers work unconstrained while
the realized lengthscales and signal variance stay positive by
construction.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch

from .errors import ConfigurationError, NumericalError
from .util import DTYPE, as_tensor


@dataclass
class KernelParams:
    """ARD squared-exponential hyperparameters in log space.

    Realized form, with ``s2 = exp(log_signal_variance)`` and per-dimension
    ``l_j = exp(log_lengthscales[j])``::

        k(x, x') = s2 * exp(-0.5 * sum_j (x_j - x'_j)^2 / l_j^2)

    The lengthscale vector length fixes the expected input dimension.
    """

    log_lengthscales: torch.Tensor
    log_signal_variance: torch.Tensor

    def __post_init__(self):
        self.log_lengthscales = as_tensor(self.log_lengthscales).reshape(-1)
        self.log_signal_variance = as_tensor(self.log_signal_variance).reshape(())

    @classmethod
    def from_values(cls, lengthscales, signal_variance) -> "KernelParams":
        """Build from realized (positive) values rather than logs."""
        ls = as_tensor(lengthscales).reshape(-1)
        s2 = as_tensor(signal_variance).reshape(())
        if not bool((ls > 0).all()) or not bool(s2 > 0):
            raise ConfigurationError(
                "lengthscales and signal variance must be strictly positive"
            )
        return cls(torch.log(ls), torch.log(s2))

    @classmethod
    def unit(cls, input_dim: int) -> "KernelParams":
        """Unit lengthscales and unit signal variance (normalized inputs)."""
        return cls(torch.zeros(input_dim, dtype=DTYPE), torch.zeros((), dtype=DTYPE))

    @property
    def lengthscales(self) -> torch.Tensor:
        return torch.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> torch.Tensor:
        return torch.exp(self.log_signal_variance)

    @property
    def input_dim(self) -> int:
        return self.log_lengthscales.shape[0]


@dataclass
class JitterPolicy:
    """Diagonal jitter schedule for near-singular factorizations.

    The schedule tried is ``0, initial, initial*growth, ...`` and
    ``max_attempts`` counts every try including the jitter-free one.
    """

    initial_jitter: float = 1e-6
    growth_factor: float = 10.0
    max_attempts: int = 5

    def __post_init__(self):
        if not self.initial_jitter > 0:
            raise ConfigurationError("initial_jitter must be positive")
        if not self.growth_factor > 1:
            raise ConfigurationError("growth_factor must exceed 1")
        if self.max_attempts < 1:
            raise ConfigurationError("max_attempts must be at least 1")

    def schedule(self) -> list:
        eps = [0.0]
        value = float(self.initial_jitter)
        while len(eps) < self.max_attempts:
            eps.append(value)
            value *= self.growth_factor
        return eps


def default_jitter_policy(signal_variance) -> JitterPolicy:
    """Default policy scaled to the kernel magnitude: initial 1e-6 * s2."""
    sv = signal_variance
    if isinstance(sv, torch.Tensor):
        sv = float(sv.detach())
    sv = float(sv)
    if not math.isfinite(sv) or sv <= 0.0:
        # exp() of a wildly negative log-variance underflows to exactly 0;
        # that is numerical degeneracy, not a caller mistake
        raise NumericalError(f"signal variance {sv!r} leaves no usable jitter scale")
    return JitterPolicy(initial_jitter=1e-6 * sv)


class CholeskyResult(NamedTuple):
    L: torch.Tensor
    jitter: float


# Smallest acceptable Cholesky pivot, relative to the matrix scale. The
# LAPACK routine reports success whenever every pivot stays positive in
# floating point, which it does even for matrices that are singular to
# working precision; solves against such a factor amplify by the
# reciprocal of pivots that are pure roundoff. Rejecting those factors
# sends the schedule to its first jittered attempt, whose pivots land
# near sqrt(initial_jitter) and clear this bar comfortably.
_PIVOT_TRUST = 1e-4


def _check_inputs(A: torch.Tensor, params: KernelParams, name: str) -> torch.Tensor:
    A = as_tensor(A)
    if A.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-d matrix, got shape {tuple(A.shape)}")
    if A.shape[1] != params.input_dim:
        raise ConfigurationError(
            f"{name} has {A.shape[1]} columns but the kernel expects {params.input_dim}"
        )
    return A


class _RbfCross(torch.autograd.Function):
    """exp(log_s2 - 0.5 * d2(As, Bs)) with a hand-written adjoint.

    The generic autograd path through the distance expansion costs about
    a dozen full-matrix elementwise passes per evaluation; at n*m around
    1e6 entries those passes dominate whole training steps. The closed
    form backward needs one elementwise product, two GEMMs and two row
    reductions:

        u = dK (.) K,
        dAs = u Bs - rowsum(u) As,  dBs = u' As - colsum(u) Bs,
        dlog_s2 = sum(u).

    The forward clamp only fires where roundoff made a squared distance
    dip below zero, which requires As_i and Bs_j to coincide to working
    precision. There the (Bs_j - As_i) factor inside the adjoint kills
    the contribution on its own, so the backward can skip masking the
    clamped entries.
    """

    @staticmethod
    def forward(ctx, As, Bs, log_s2):
        a2 = (As * As).sum(dim=1, keepdim=True)
        b2 = a2 if Bs is As else (Bs * Bs).sum(dim=1, keepdim=True)
        ones_a = torch.ones_like(a2)
        ones_b = ones_a if Bs is As else torch.ones_like(b2)
        # One GEMM yields the full expansion: [-2As, a2, 1][Bs, 1, b2]^T
        # = -2 As Bs^T + a2 1^T + 1 b2^T, entry (i,j) = |As_i - Bs_j|^2.
        d2 = torch.cat((As * -2.0, a2, ones_a), dim=1) @ torch.cat(
            (Bs, ones_b, b2), dim=1
        ).mT
        d2.clamp_min_(0.0)
        d2.mul_(-0.5)
        d2.add_(log_s2)
        K = d2.exp_()
        ctx.save_for_backward(As, Bs, K)
        return K

    @staticmethod
    def backward(ctx, grad_out):
        As, Bs, K = ctx.saved_tensors
        u = grad_out * K
        grad_log_s2 = u.sum()
        grad_As = u @ Bs - u.sum(dim=1, keepdim=True) * As
        grad_Bs = u.mT @ As - u.sum(dim=0).unsqueeze(1) * Bs
        return grad_As, grad_Bs, grad_log_s2


def kernel_matrix(A, B, params: KernelParams) -> torch.Tensor:
    """Covariance matrix between the rows of ``A`` (n x d) and ``B`` (m x d).

    Squared distances use the expansion |x|^2 + |x'|^2 - 2 x.x' on
    lengthscale-divided inputs, clamped at zero so roundoff can never
    produce a negative distance. When ``A is B`` the result is symmetrized
    exactly and the diagonal is pinned to the signal variance.
    """
    same = A is B
    A = _check_inputs(A, params, "A")
    ls = params.lengthscales
    As = A / ls
    if same:
        Bs = As
    else:
        Bs = _check_inputs(B, params, "B") / ls
    K = _RbfCross.apply(As, Bs, params.log_signal_variance)
    if same:
        s2 = params.signal_variance
        K = torch.diagonal_scatter(0.5 * (K + K.mT), s2.expand(K.shape[0]))
    return K


def kernel_diag(A, params: KernelParams) -> torch.Tensor:
    """Diagonal of ``kernel_matrix(A, A)``: a constant signal-variance vector."""
    A = _check_inputs(A, params, "A")
    return params.signal_variance * torch.ones(A.shape[0], dtype=DTYPE)


def robust_cholesky(K, policy: JitterPolicy | None = None) -> CholeskyResult:
    """Lower Cholesky factor of ``K + eps*I`` for the smallest schedule eps.

    Tries each jitter in ``policy.schedule()`` in order and returns the
    factor together with the jitter that succeeded. An attempt only counts
    as a success when the factor is numerically trustworthy: all entries
    finite and the smallest pivot above ``_PIVOT_TRUST`` times the matrix
    scale. Deterministic: the same matrix and policy always yield the same
    factor.

    Raises ``NumericalError`` when the schedule is exhausted.
    """
    K = as_tensor(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ConfigurationError(f"cholesky input must be square, got {tuple(K.shape)}")
    if policy is None:
        policy = JitterPolicy()
    if K.shape[0] == 0:
        return CholeskyResult(K.clone(), 0.0)
    eye = torch.eye(K.shape[0], dtype=DTYPE)
    scale = float(K.diagonal().max().detach().clamp_min(0.0)) ** 0.5
    tried = 0.0
    for eps in policy.schedule():
        tried = eps
        Kj = K if eps == 0.0 else K + eps * eye
        L, info = torch.linalg.cholesky_ex(Kj)
        if int(info) != 0 or not bool(torch.isfinite(L).all()):
            continue
        if float(L.diagonal().min().detach()) >= _PIVOT_TRUST * scale:
            return CholeskyResult(L, eps)
    raise NumericalError(
        f"Cholesky factorization failed after {policy.max_attempts} attempts "
        f"(final jitter {tried:g})"
    )


def triangular_solve(L, B, side: str = "lower") -> torch.Tensor:
    """Solve ``L X = B`` (side "lower") or ``L^T X = B`` ("lower-transposed").

    ``L`` is a lower-triangular square matrix; ``B`` may be a vector or a
    matrix. A zero diagonal entry raises ``NumericalError`` instead of
    silently producing infinities.
    """
    L = as_tensor(L)
    B = as_tensor(B)
    vector = B.ndim == 1
    if vector:
        B = B.unsqueeze(1)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ConfigurationError(f"triangular factor must be square, got {tuple(L.shape)}")
    if B.ndim != 2 or B.shape[0] != L.shape[0]:
        raise ConfigurationError(
            f"right-hand side shape {tuple(B.shape)} does not conform to factor "
            f"{tuple(L.shape)}"
        )
    if bool((L.diagonal() == 0).any()):
        raise NumericalError("triangular factor has a zero diagonal entry")
    if side == "lower":
        X = torch.linalg.solve_triangular(L, B, upper=False)
    elif side == "lower-transposed":
        X = torch.linalg.solve_triangular(L.mT, B, upper=True)
    else:
        raise ConfigurationError(f"unknown solve side {side!r}")
    return X.squeeze(1) if vector else X

"""Shared numeric conventions: float64 torch tensors on CPU, and
deterministic seed derivation for every random stream in the package.

No module touches a global RNG; every draw comes from a generator seeded
through ``derive_seed`` so runs are reproducible from their explicit seeds.
"""

import numpy as np
import torch

DTYPE = torch.float64

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MASK63 = 0x7FFFFFFFFFFFFFFF


def as_tensor(x) -> torch.Tensor:
    """Convert array-like input to a float64 CPU tensor.

    Tensors are passed through (cast if needed) so autograd graphs survive.
    """
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a tuple of integer keys.

    Built on numpy's SeedSequence so streams derived for distinct key
    tuples, e.g. (seed, epoch, step) or (seed, path_index), are
    statistically independent and stable across processes.
    """
    entropy = [int(k) & _MASK64 for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state) & _MASK63


def normal_noise(shape, seed: int) -> torch.Tensor:
    """Standard-normal draws from an isolated generator seeded with ``seed``."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed))
    return torch.randn(tuple(shape), generator=gen, dtype=DTYPE)


def np_rng(seed: int) -> np.random.Generator:
    """Numpy generator for a derived seed (shuffles, subset draws)."""
    return np.random.default_rng(int(seed))

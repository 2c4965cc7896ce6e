"""The stacked GP model: composition, sampling, metrics, serialization.

A model is an ordered list of layers (all coupled or all decoupled), one
fixed static mean map per layer, and a Gaussian observation noise. Hidden
layers are sampled with the reparameterization trick during propagation;
the final layer always contributes its analytic marginals.

Metrics operate in the model's own (normalized) units and lift results
back to original units through the stored normalizer constants.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import Normalizer, init_inducing
from .errors import ConfigurationError, IngestionError
from .kernel import KernelParams
from .layer import (
    CoupledLayerState,
    DecoupledLayerState,
    MeanVariant,
    StaticMeanMap,
    VarVariant,
    apply_static_mean,
    coupled_predict,
    decoupled_predict,
    sample_layer,
)
from .util import DTYPE, as_tensor, derive_seed, normal_noise

MODEL_FORMAT = "decdgp-model"
MODEL_VERSION = 1

MAX_DEPTH = 4

# Fresh layers start near-deterministic: covariance factors are this
# multiple of the identity, small enough that no mass sits along badly
# conditioned directions of the inducing gram matrix.
INIT_FACTOR_SCALE = 1e-5

_LOG_TWO_PI = math.log(2.0 * math.pi)


def _layer_dims(layer):
    return layer.kernel.input_dim, layer.d_out


@dataclass
class DgpModel:
    """A depth-(L-1) stack of GP layers with Gaussian observation noise.

    layers run input to output; hidden layers all share hidden_width
    outputs; the last layer's output width is the target dimension. The
    noise variance is log-stored. Decoupled models carry their mean and
    variance variant tags; coupled models leave them None.
    """

    layers: list
    mean_maps: list
    log_noise_var: torch.Tensor
    hidden_width: int
    mean_variant: MeanVariant | None = None
    var_variant: VarVariant | None = None
    normalizer: Normalizer | None = None

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("a model needs at least one layer")
        if len(self.mean_maps) != len(self.layers):
            raise ConfigurationError("one static mean map per layer is required")
        kinds = {type(layer) for layer in self.layers}
        if len(kinds) != 1 or not kinds <= {CoupledLayerState, DecoupledLayerState}:
            raise ConfigurationError("layers must be homogeneous in parameterization")
        if self.is_decoupled and (self.mean_variant is None or self.var_variant is None):
            raise ConfigurationError("decoupled models need mean and variance variants")
        self.log_noise_var = as_tensor(self.log_noise_var).reshape(())
        dims = [_layer_dims(layer) for layer in self.layers]
        for l in range(len(dims) - 1):
            if dims[l][1] != dims[l + 1][0]:
                raise ConfigurationError(
                    f"layer {l} produces width {dims[l][1]} but layer {l + 1} "
                    f"expects {dims[l + 1][0]}"
                )
        for l, ((d_in, d_out), mmap) in enumerate(zip(dims, self.mean_maps)):
            if tuple(mmap.W.shape) != (d_in, d_out):
                raise ConfigurationError(
                    f"static mean map {l} has shape {tuple(mmap.W.shape)}, "
                    f"expected {(d_in, d_out)}"
                )

    @property
    def is_decoupled(self) -> bool:
        return isinstance(self.layers[0], DecoupledLayerState)

    @property
    def depth(self) -> int:
        """Number of hidden layers (layers beyond the output layer)."""
        return len(self.layers) - 1

    @property
    def input_dim(self) -> int:
        return self.layers[0].kernel.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    @property
    def noise_var(self) -> torch.Tensor:
        return torch.exp(self.log_noise_var)


def layer_predict(model: DgpModel, layer, X):
    """Dispatch to the layer's predictive marginals with the model's variants."""
    if isinstance(layer, CoupledLayerState):
        return coupled_predict(X, layer)
    return decoupled_predict(X, layer, model.mean_variant, model.var_variant)


def propagate_once(model: DgpModel, X, path_seed: int):
    """One pass through the stack: hidden layers sampled, final analytic.

    Returns the final layer's (mean, var) with static means applied at
    every layer. Deterministic given path_seed; depth-0 models involve no
    randomness at all.
    """
    H = as_tensor(X)
    if H.ndim != 2 or H.shape[1] != model.input_dim:
        raise ConfigurationError(
            f"input shape {tuple(H.shape)} does not match model input width "
            f"{model.input_dim}"
        )
    last = len(model.layers) - 1
    for idx, (layer, mmap) in enumerate(zip(model.layers, model.mean_maps)):
        mean, var = layer_predict(model, layer, H)
        mean = apply_static_mean(H, mmap, mean)
        if idx == last:
            return mean, var
        noise = normal_noise(mean.shape, derive_seed(path_seed, idx))
        H = sample_layer(mean, var, noise)


@dataclass
class PredictiveSamples:
    """S sampled predictive paths: means S x n x d_y, vars S x n."""

    means: torch.Tensor
    vars: torch.Tensor

    def __post_init__(self):
        if self.means.ndim != 3 or self.vars.shape != self.means.shape[:2]:
            raise ConfigurationError("inconsistent predictive sample shapes")
        if self.num_samples < 1:
            raise ConfigurationError("need at least one sample path")

    @property
    def num_samples(self) -> int:
        return self.means.shape[0]


def forward_sample(model: DgpModel, X, seed: int, S: int) -> PredictiveSamples:
    """S independent sampled paths, streams derived from (seed, path index)."""
    if S < 1:
        raise ConfigurationError("sample count must be at least 1")
    means = []
    vars_ = []
    with torch.no_grad():
        for s in range(S):
            mean, var = propagate_once(model, X, derive_seed(seed, s))
            means.append(mean)
            vars_.append(var)
    return PredictiveSamples(torch.stack(means), torch.stack(vars_))


def test_log_likelihood(
    model: DgpModel, X, Y, S: int, y_normalizer: Normalizer | None = None, seed: int = 0
) -> float:
    """Mean per-point predictive log-density under the S-path mixture.

    X and Y are in the model's working units; each path contributes a
    Gaussian with its predictive variance plus observation noise, combined
    with log-sum-exp. The result is shifted to original target units via
    the normalizer's log-Jacobian.
    """
    Y = as_tensor(Y)
    ps = forward_sample(model, X, seed, S)
    nv = model.noise_var.detach()
    total_var = ps.vars + nv
    d_y = Y.shape[1]
    diff2 = ((Y.unsqueeze(0) - ps.means) ** 2).sum(dim=2)
    log_dens = -0.5 * d_y * (_LOG_TWO_PI + torch.log(total_var)) - diff2 / (2.0 * total_var)
    ll = torch.logsumexp(log_dens, dim=0) - math.log(ps.num_samples)
    shift = y_normalizer.log_jacobian_y() if y_normalizer is not None else 0.0
    return float(ll.mean()) + shift


def rmse(
    model: DgpModel, X, Y, S: int, y_normalizer: Normalizer | None = None, seed: int = 0
) -> float:
    """Root-mean-square error of the S-path mean prediction, original units."""
    ps = forward_sample(model, X, seed, S)
    pred = ps.means.mean(dim=0).numpy()
    target = np.asarray(as_tensor(Y).numpy())
    if y_normalizer is not None:
        pred = y_normalizer.inverse_y(pred)
        target = y_normalizer.inverse_y(target)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _tensor_doc(t: torch.Tensor):
    return t.detach().tolist()


def _layer_doc(layer) -> dict:
    kernel = {
        "log_lengthscales": _tensor_doc(layer.kernel.log_lengthscales),
        "log_signal_variance": float(layer.kernel.log_signal_variance),
    }
    if isinstance(layer, CoupledLayerState):
        return {
            "Z": _tensor_doc(layer.Z),
            "m": _tensor_doc(layer.m),
            "L_s": _tensor_doc(layer.L_s),
            "kernel": kernel,
        }
    return {
        "Z_a": _tensor_doc(layer.Z_a),
        "Z_b": _tensor_doc(layer.Z_b),
        "mean_param": _tensor_doc(layer.mean_param),
        "L_b": _tensor_doc(layer.L_b),
        "kernel": kernel,
    }


def to_document(model: DgpModel) -> dict:
    """Self-describing, versioned, full-precision model document."""
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": "decoupled" if model.is_decoupled else "coupled",
        "hidden_width": model.hidden_width,
        "log_noise_var": float(model.log_noise_var),
        "mean_variant": model.mean_variant.value if model.mean_variant else None,
        "var_variant": model.var_variant.value if model.var_variant else None,
        "layers": [_layer_doc(layer) for layer in model.layers],
        "mean_maps": [_tensor_doc(mmap.W) for mmap in model.mean_maps],
        "normalizer": model.normalizer.to_dict() if model.normalizer else None,
    }


def _kernel_from_doc(doc: dict) -> KernelParams:
    return KernelParams(
        torch.tensor(doc["log_lengthscales"], dtype=DTYPE),
        torch.tensor(doc["log_signal_variance"], dtype=DTYPE),
    )


def from_document(doc: dict) -> DgpModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise IngestionError("not a model document")
    if doc.get("version") != MODEL_VERSION:
        raise IngestionError(
            f"unsupported model document version {doc.get('version')!r}"
        )
    kind = doc["kind"]
    layers = []
    for ldoc in doc["layers"]:
        kernel = _kernel_from_doc(ldoc["kernel"])
        if kind == "coupled":
            layers.append(
                CoupledLayerState(
                    torch.tensor(ldoc["Z"], dtype=DTYPE),
                    torch.tensor(ldoc["m"], dtype=DTYPE),
                    torch.tensor(ldoc["L_s"], dtype=DTYPE),
                    kernel,
                )
            )
        else:
            layers.append(
                DecoupledLayerState(
                    torch.tensor(ldoc["Z_a"], dtype=DTYPE),
                    torch.tensor(ldoc["Z_b"], dtype=DTYPE),
                    torch.tensor(ldoc["mean_param"], dtype=DTYPE),
                    torch.tensor(ldoc["L_b"], dtype=DTYPE),
                    kernel,
                )
            )
    mean_maps = [
        StaticMeanMap(torch.tensor(w, dtype=DTYPE)) for w in doc["mean_maps"]
    ]
    norm = doc.get("normalizer")
    return DgpModel(
        layers=layers,
        mean_maps=mean_maps,
        log_noise_var=torch.tensor(doc["log_noise_var"], dtype=DTYPE),
        hidden_width=doc["hidden_width"],
        mean_variant=MeanVariant(doc["mean_variant"]) if doc["mean_variant"] else None,
        var_variant=VarVariant(doc["var_variant"]) if doc["var_variant"] else None,
        normalizer=Normalizer.from_dict(norm) if norm else None,
    )


def save_model(model: DgpModel, path):
    Path(path).write_text(
        json.dumps(to_document(model), sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )


def load_model(path) -> DgpModel:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such model file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read model document {path}: {exc}") from exc
    return from_document(doc)


def init_model(
    train_X,
    d_y: int,
    *,
    kind: str,
    depth: int,
    width: int = 10,
    m: int | None = None,
    ma: int | None = None,
    mb: int | None = None,
    mean_variant: MeanVariant | None = None,
    var_variant: VarVariant | None = None,
    seed: int = 0,
    noise_var: float = 0.05,
    normalizer: Normalizer | None = None,
) -> DgpModel:
    """Build a model at the starting point used for every training run.

    Inducing inputs for the first layer are a seeded subset of the
    training rows; deeper layers carry that subset forward through the
    static mean maps. All variational means start at zero and both
    covariance factors start at a small multiple of the identity, so
    every layer begins close to deterministic. Starting the coupled
    factor at chol(K_ZZ) instead (exact zero KL) plants mass in the
    numerically null directions of K_ZZ, and once hyperparameters move
    the divergence penalty on that mass blows up; the near-zero start
    avoids the problem and is also closer to the optimum, whose
    variance along those directions is itself near zero. Kernels start
    at unit lengthscales and unit signal variance, which assumes
    normalized inputs.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    if not 0 <= depth <= MAX_DEPTH:
        raise ConfigurationError(f"depth must lie in 0..{MAX_DEPTH}")
    if noise_var <= 0:
        raise ConfigurationError("noise_var must be positive")
    D = train_X.shape[1]
    dims = [D] + [width] * depth + [d_y]
    mean_maps = [
        StaticMeanMap.identity(dims[i], dims[i + 1]) for i in range(len(dims) - 1)
    ]
    layers = []
    if kind == "coupled":
        if m is None:
            raise ConfigurationError("coupled models need an inducing count m")
        Z = as_tensor(init_inducing(train_X, m, derive_seed(seed, 0)))
        for l in range(len(dims) - 1):
            kernel = KernelParams.unit(dims[l])
            L_s = INIT_FACTOR_SCALE * torch.eye(m, dtype=DTYPE)
            layers.append(
                CoupledLayerState(Z, torch.zeros(m, dims[l + 1], dtype=DTYPE), L_s, kernel)
            )
            Z = Z @ mean_maps[l].W
    elif kind == "decoupled":
        if ma is None or mb is None:
            raise ConfigurationError("decoupled models need both ma and mb")
        mean_variant = mean_variant or MeanVariant.WHITENED
        var_variant = var_variant or VarVariant.STANDARD
        Za = as_tensor(init_inducing(train_X, ma, derive_seed(seed, 0)))
        Zb = as_tensor(init_inducing(train_X, mb, derive_seed(seed, 1)))
        for l in range(len(dims) - 1):
            kernel = KernelParams.unit(dims[l])
            layers.append(
                DecoupledLayerState(
                    Za,
                    Zb,
                    torch.zeros(ma, dims[l + 1], dtype=DTYPE),
                    INIT_FACTOR_SCALE * torch.eye(mb, dtype=DTYPE),
                    kernel,
                )
            )
            Za = Za @ mean_maps[l].W
            Zb = Zb @ mean_maps[l].W
    else:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    return DgpModel(
        layers=layers,
        mean_maps=mean_maps,
        log_noise_var=torch.log(torch.tensor(noise_var, dtype=DTYPE)),
        hidden_width=width,
        mean_variant=mean_variant if kind == "decoupled" else None,
        var_variant=var_variant if kind == "decoupled" else None,
        normalizer=normalizer,
    )

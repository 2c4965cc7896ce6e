"""Adam training of the stacked model against the evidence lower bound.

The trainer owns a flat dict of raw parameter tensors and rebuilds the
model from them on every step; triangular factors are stored with
log-diagonals so positivity is structural, never enforced by clipping.
Gradients come from reverse-mode differentiation through one
reparameterized sample path.

All shuffling and sampling seeds derive from (config seed, epoch, step),
so a run is a pure function of (dataset, config) in single-threaded mode,
and an interrupted run resumes bit-exactly from its checkpoint.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset
from .errors import ConfigurationError, IngestionError, NumericalError, TrainingError
from .kernel import KernelParams
from .layer import CoupledLayerState, DecoupledLayerState
from .model import DgpModel, from_document, to_document
from .objective import ElboEstimate, elbo_terms
from .util import derive_seed, np_rng

CHECKPOINT_FORMAT = "decdgp-checkpoint"
CHECKPOINT_VERSION = 1

# stream tags keeping the trainer's RNG consumers apart
_STREAM_SHUFFLE = 1
_STREAM_PATH = 2


@dataclass
class TrainConfig:
    epochs: int = 5000
    batch_size: int | None = None
    learning_rate: float = 0.01
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    trainable: tuple | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.trainable is not None:
            self.trainable = tuple(self.trainable)

    def resolve_batch_size(self, N: int) -> int:
        if self.batch_size is None:
            return min(N, 10000)
        return min(self.batch_size, N)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "trainable": list(self.trainable) if self.trainable is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if doc.get("trainable") is not None:
            doc["trainable"] = tuple(doc["trainable"])
        return cls(**doc)


def factor_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Lower-triangular factor with exp-transformed (hence positive) diagonal."""
    return torch.tril(raw, -1) + torch.diag(torch.exp(torch.diagonal(raw)))


def raw_from_factor(L: torch.Tensor) -> torch.Tensor:
    """Inverse of factor_from_raw for factors with a positive diagonal."""
    return torch.tril(L, -1) + torch.diag(torch.log(torch.diagonal(L)))


def model_parameters(model: DgpModel) -> dict:
    """Flat dict of raw trainable tensors extracted from a model.

    Triangular factors are converted to their raw form; everything is
    detached. Keys are 'layer{l}.{field}' plus the global
    'log_noise_var'.
    """
    params = {}
    for l, layer in enumerate(model.layers):
        pre = f"layer{l}."
        if isinstance(layer, CoupledLayerState):
            params[pre + "Z"] = layer.Z.detach().clone()
            params[pre + "m"] = layer.m.detach().clone()
            params[pre + "raw_factor"] = raw_from_factor(layer.L_s.detach())
        else:
            params[pre + "Z_a"] = layer.Z_a.detach().clone()
            params[pre + "Z_b"] = layer.Z_b.detach().clone()
            params[pre + "mean_param"] = layer.mean_param.detach().clone()
            params[pre + "raw_factor"] = raw_from_factor(layer.L_b.detach())
        params[pre + "log_lengthscales"] = layer.kernel.log_lengthscales.detach().clone()
        params[pre + "log_signal_variance"] = (
            layer.kernel.log_signal_variance.detach().clone()
        )
    params["log_noise_var"] = model.log_noise_var.detach().clone()
    return params


def build_model(template: DgpModel, params: dict) -> DgpModel:
    """Materialize a model from raw parameters, reusing the template's
    static structure (mean maps, width, variants, normalizer)."""
    layers = []
    for l, layer in enumerate(template.layers):
        pre = f"layer{l}."
        kernel = KernelParams(
            params[pre + "log_lengthscales"], params[pre + "log_signal_variance"]
        )
        if isinstance(layer, CoupledLayerState):
            layers.append(
                CoupledLayerState(
                    params[pre + "Z"],
                    params[pre + "m"],
                    factor_from_raw(params[pre + "raw_factor"]),
                    kernel,
                )
            )
        else:
            layers.append(
                DecoupledLayerState(
                    params[pre + "Z_a"],
                    params[pre + "Z_b"],
                    params[pre + "mean_param"],
                    factor_from_raw(params[pre + "raw_factor"]),
                    kernel,
                )
            )
    return DgpModel(
        layers=layers,
        mean_maps=template.mean_maps,
        log_noise_var=params["log_noise_var"],
        hidden_width=template.hidden_width,
        mean_variant=template.mean_variant,
        var_variant=template.var_variant,
        normalizer=template.normalizer,
    )


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    step: int
    m: dict
    v: dict

    @classmethod
    def initial(cls, params: dict) -> "AdamState":
        return cls(
            step=0,
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
        )

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "m": {k: t.tolist() for k, t in self.m.items()},
            "v": {k: t.tolist() for k, t in self.v.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict, params: dict) -> "AdamState":
        def grab(section):
            return {
                k: torch.tensor(section[k], dtype=params[k].dtype).reshape(params[k].shape)
                for k in params
            }

        return cls(step=int(doc["step"]), m=grab(doc["m"]), v=grab(doc["v"]))


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One ascent update: p += lr * mhat / (sqrt(vhat) + eps).

    Blocks absent from grads are carried through untouched, moments
    included. Returns (new params, state); the state is updated in place.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.adam_beta1**t
    bc2 = 1.0 - cfg.adam_beta2**t
    new_params = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        if not bool(torch.isfinite(g).all()):
            raise TrainingError(f"non-finite gradient in block {name}")
        state.m[name] = cfg.adam_beta1 * state.m[name] + (1.0 - cfg.adam_beta1) * g
        state.v[name] = cfg.adam_beta2 * state.v[name] + (1.0 - cfg.adam_beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        new_params[name] = (
            p + cfg.learning_rate * m_hat / (torch.sqrt(v_hat) + cfg.adam_eps)
        ).detach()
    return new_params, state


def _objective_with_grads(template: DgpModel, params: dict, X, Y, N: int, seed: int):
    """Evaluate the bound and differentiate it w.r.t. every raw block."""
    leaves = {k: p.detach().clone().requires_grad_(True) for k, p in params.items()}
    model = build_model(template, leaves)
    total, ell, kls, scale = elbo_terms(model, X, Y, N, seed)
    if not bool(torch.isfinite(total)):
        raise TrainingError("non-finite objective value")
    total.backward()
    grads = {}
    for name, leaf in leaves.items():
        g = leaf.grad
        grads[name] = torch.zeros_like(leaf) if g is None else g.detach()
        if not bool(torch.isfinite(grads[name]).all()):
            raise TrainingError(f"non-finite gradient in block {name}")
    estimate = ElboEstimate(
        total=float(total.detach()),
        expected_log_lik=float(ell.detach()),
        kl_per_layer=[float(k.detach()) for k in kls],
        scale_factor=scale,
    )
    return grads, estimate


def elbo_gradients(model: DgpModel, batch, full_data_size: int, seed: int) -> dict:
    """Gradient of the bound w.r.t. each raw parameter block of the model.

    Keys match model_parameters. Exact at the given reparameterization
    seed; validated against central finite differences in the test suite
    and the gradient-check command.
    """
    X, Y = batch
    params = model_parameters(model)
    grads, _ = _objective_with_grads(model, params, X, Y, full_data_size, seed)
    return grads


@dataclass
class TrainHistory:
    """Per-epoch record of the mean step objective.

    Deliberately holds no wall-clock data: histories are embedded in
    checkpoints, and a run is supposed to write byte-identical
    checkpoints every time it is repeated.
    """

    epochs: list = field(default_factory=list)
    elbo: list = field(default_factory=list)

    def append(self, epoch: int, elbo_value: float):
        self.epochs.append(epoch)
        self.elbo.append(elbo_value)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "elbo": self.elbo}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainHistory":
        return cls(epochs=list(doc["epochs"]), elbo=list(doc["elbo"]))


def _data_arrays(data):
    if isinstance(data, Dataset):
        return data.X, data.Y
    X, Y = data
    return np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)


def _select_trainable(grads: dict, trainable) -> dict:
    if trainable is None:
        return grads
    return {
        name: g
        for name, g in grads.items()
        if any(name == s or name.endswith(s) for s in trainable)
    }


def _snapshot(params: dict, adam: AdamState, epoch: int) -> dict:
    return {
        "raw_params": {k: p.tolist() for k, p in params.items()},
        "adam": adam.to_dict(),
        "epoch": epoch,
    }


def _run(template, params, adam, X, Y, cfg, start_epoch, history):
    N = X.shape[0]
    batch_size = cfg.resolve_batch_size(N)
    for epoch in range(start_epoch, cfg.epochs):
        perm = np_rng(derive_seed(cfg.seed, _STREAM_SHUFFLE, epoch)).permutation(N)
        totals = []
        for step, lo in enumerate(range(0, N, batch_size)):
            idx = perm[lo : lo + batch_size]
            seed = derive_seed(cfg.seed, _STREAM_PATH, epoch, step)
            try:
                grads, estimate = _objective_with_grads(
                    template, params, X[idx], Y[idx], N, seed
                )
                grads = _select_trainable(grads, cfg.trainable)
                params, adam = adam_step(params, grads, adam, cfg)
            except TrainingError as exc:
                exc.last_good = _snapshot(params, adam, epoch)
                raise
            except NumericalError as exc:
                # a factorization blowing up mid-step is still a training
                # abort; keep the recovery snapshot contract
                failure = TrainingError(f"training step failed: {exc}")
                failure.last_good = _snapshot(params, adam, epoch)
                raise failure from exc
            totals.append(estimate.total)
        history.append(epoch, float(np.mean(totals)))
    return build_model(template, params), params, adam, history


def train_with_state(model: DgpModel, data, cfg: TrainConfig):
    """Like train, but also returns the raw parameters and optimizer state
    so the caller can write a resumable checkpoint."""
    torch.set_num_threads(1)
    X, Y = _data_arrays(data)
    if X.shape[0] == 0:
        raise ConfigurationError("empty training set")
    params = model_parameters(model)
    adam = AdamState.initial(params)
    if cfg.epochs == 0:
        return model, params, adam, TrainHistory()
    return _run(model, params, adam, X, Y, cfg, 0, TrainHistory())


def train(model: DgpModel, data, cfg: TrainConfig):
    """Run the full schedule and return (trained model, history).

    data is a Dataset or an (X, Y) pair, already in the model's working
    units. Runs single-threaded for reproducibility.
    """
    trained, _, _, history = train_with_state(model, data, cfg)
    return trained, history


def save_checkpoint(path, template: DgpModel, params: dict, adam: AdamState,
                    cfg: TrainConfig, epoch: int, history: TrainHistory,
                    extra: dict | None = None):
    """Write a resumable training state: model document, raw parameters,
    optimizer moments, config and history. Raw parameters are stored
    separately from the realized model so resuming is bit-exact. extra
    is an optional JSON-able dict stored under "experiment" (dataset
    reference, repeat index, evaluation seeds)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": to_document(build_model(template, params)),
        "raw_params": {k: p.tolist() for k, p in params.items()},
        "adam": adam.to_dict(),
        "config": cfg.to_dict(),
        "epoch": epoch,
        "history": history.to_dict(),
    }
    if extra is not None:
        doc["experiment"] = extra
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


@dataclass
class Checkpoint:
    model: DgpModel
    params: dict
    adam: AdamState
    config: TrainConfig
    epoch: int
    history: TrainHistory
    extra: dict | None = None


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such checkpoint: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise IngestionError(f"{path} is not a checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise IngestionError(f"unsupported checkpoint version {doc.get('version')!r}")
    model = from_document(doc["model"])
    reference = model_parameters(model)
    params = {
        k: torch.tensor(doc["raw_params"][k], dtype=reference[k].dtype).reshape(
            reference[k].shape
        )
        for k in reference
    }
    return Checkpoint(
        model=model,
        params=params,
        adam=AdamState.from_dict(doc["adam"], params),
        config=TrainConfig.from_dict(doc["config"]),
        epoch=int(doc["epoch"]),
        history=TrainHistory.from_dict(doc["history"]),
        extra=doc.get("experiment"),
    )


def resume(checkpoint: Checkpoint, data):
    """Continue an interrupted run to its configured epoch budget."""
    torch.set_num_threads(1)
    X, Y = _data_arrays(data)
    cfg = checkpoint.config
    trained, params, adam, history = _run(
        checkpoint.model,
        checkpoint.params,
        checkpoint.adam,
        X,
        Y,
        cfg,
        checkpoint.epoch,
        checkpoint.history,
    )
    return trained, params, adam, history


def time_training_steps(model: DgpModel, X, Y, cfg: TrainConfig,
                        steps: int = 10, warmup: int = 3) -> list:
    """Wall-clock seconds per optimization step on a fixed batch.

    Runs warmup + steps full gradient/update iterations single-threaded
    and returns the timed (post-warmup) durations.
    """
    if steps < 1 or warmup < 0:
        raise ConfigurationError("need steps >= 1 and warmup >= 0")
    torch.set_num_threads(1)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    N = X.shape[0]
    batch_size = cfg.resolve_batch_size(N)
    bx, by = X[:batch_size], Y[:batch_size]
    params = model_parameters(model)
    adam = AdamState.initial(params)
    durations = []
    for step in range(warmup + steps):
        seed = derive_seed(cfg.seed, _STREAM_PATH, 0, step)
        start = time.perf_counter()
        grads, _ = _objective_with_grads(model, params, bx, by, N, seed)
        params, adam = adam_step(params, grads, adam, cfg)
        durations.append(time.perf_counter() - start)
    return durations[warmup:]

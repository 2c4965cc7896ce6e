"""Shipping gate: one end-to-end check per release criterion.

Each test here exercises a whole behavior at its stated tolerance, so a
single `pytest -v tests/test_acceptance.py` reads as the release
scorecard. Tolerances and protocol constants are fixed; loosening them
is not a fix for a failure.
"""

import json
import math

import numpy as np
import pytest
import torch

from decdgp.cli import ExperimentSpec, main, resolve_dataset, run_experiment
from decdgp.cli import gradcheck_model
from decdgp.data import SplitSpec, fit_normalizer, make_synthetic, split
from decdgp.errors import TrainingError
from decdgp.kernel import KernelParams, kernel_matrix, robust_cholesky
from decdgp.layer import (
    CoupledLayerState,
    DecoupledLayerState,
    MeanVariant,
    StaticMeanMap,
    VarVariant,
    coupled_predict,
    decoupled_predict,
)
from decdgp.model import DgpModel, init_model
from decdgp.objective import elbo_terms, kl_coupled, kl_decoupled
from decdgp.oracle import FiniteDiffSpec, dense_gaussian_kl, exact_gp_log_marginal
from decdgp.train import TrainConfig, train
from decdgp.util import DTYPE

from helpers import (
    matched_pair,
    random_coupled,
    random_decoupled,
    random_lower,
    separated_inputs,
    tensor,
    uniform_inputs,
)

MEAN_VARIANTS = (MeanVariant.DUAL, MeanVariant.STANDARD, MeanVariant.WHITENED)
VAR_VARIANTS = (VarVariant.STANDARD, VarVariant.MEAN_GRAM)


def relative_gap(actual, desired):
    scale = float(np.max(np.abs(desired)))
    return float(np.max(np.abs(actual - desired))) / max(scale, 1e-300)


def test_criterion_1_decoupled_reproduces_coupled_predictions_and_kl():
    rng = np.random.default_rng(20240811)
    for i in range(50):
        m = int(rng.integers(2, 11))
        n = int(rng.integers(5, 33))
        d = int(rng.integers(1, 4))
        d_out = int(rng.integers(1, 4))
        mean_variant = MEAN_VARIANTS[i % 3]
        var_variant = VAR_VARIANTS[i % 2]
        coupled, decoupled = matched_pair(rng, m, d, d_out, mean_variant)
        X = uniform_inputs(rng, n, d, coupled.kernel)

        mean_c, var_c = coupled_predict(X, coupled)
        mean_d, var_d = decoupled_predict(X, decoupled, mean_variant, var_variant)
        assert relative_gap(mean_d.numpy(), mean_c.numpy()) < 1e-8
        assert relative_gap(var_d.numpy(), var_c.numpy()) < 1e-8

        kl_c = kl_coupled(coupled)
        kl_d = kl_decoupled(decoupled, mean_variant)
        assert kl_d == pytest.approx(kl_c, rel=1e-8)


def test_criterion_2_kl_matches_dense_oracle_and_vanishes_at_the_prior():
    rng = np.random.default_rng(7)

    for _ in range(10):
        m = int(rng.integers(2, 9))
        state = random_coupled(rng, m, d_in=2, d_out=1)
        K = kernel_matrix(state.Z, state.Z, state.kernel).numpy()
        S = (state.L_s @ state.L_s.T).numpy()
        oracle = dense_gaussian_kl(
            state.m.numpy().ravel(), S, np.zeros(m), K
        )
        assert kl_coupled(state) == pytest.approx(oracle, rel=1e-9)

    for _ in range(25):
        m = int(rng.integers(2, 9))
        assert kl_coupled(random_coupled(rng, m, 2, 2)) >= -1e-8
        decoupled = random_decoupled(rng, m, max(2, m // 2), 2, 2)
        variant = MEAN_VARIANTS[int(rng.integers(0, 3))]
        assert kl_decoupled(decoupled, variant) >= -1e-8

    kernel = KernelParams.from_values([0.7, 1.1], 1.3)
    Z = separated_inputs(rng, 6, 2, kernel)
    K_chol = robust_cholesky(kernel_matrix(Z, Z, kernel)).L
    prior_coupled = CoupledLayerState(Z, torch.zeros(6, 1, dtype=DTYPE),
                                      K_chol, kernel)
    assert abs(kl_coupled(prior_coupled)) < 1e-10

    near_prior = DecoupledLayerState(
        Z, Z.clone(), torch.zeros(6, 1, dtype=DTYPE),
        1e-3 * torch.eye(6, dtype=DTYPE), kernel,
    )
    for variant in MEAN_VARIANTS:
        assert abs(kl_decoupled(near_prior, variant)) < 1e-5


def test_criterion_3_every_gradient_block_matches_finite_differences():
    data = make_synthetic("sinusoid", 16, 0.1, seed=0)
    norm = fit_normalizer(data)
    ds = norm.transform(data)

    coupled = init_model(ds.X, 1, kind="coupled", depth=1, m=8, seed=0)
    decoupled = init_model(
        ds.X, 1, kind="decoupled", depth=1, ma=8, mb=4,
        mean_variant=MeanVariant.WHITENED, var_variant=VarVariant.STANDARD,
        seed=1,
    )
    # a short warmup moves the check off the freshly initialized state,
    # where several blocks have identically zero gradients and the
    # near-delta factors leave no difference step accurate for every
    # block at once
    warmup = TrainConfig(epochs=50, learning_rate=0.01, seed=2)
    for model in (coupled, decoupled):
        warmed, _ = train(model, (ds.X, ds.Y), warmup)
        worst = gradcheck_model(
            warmed, ds.X, ds.Y, seed=11, spec=FiniteDiffSpec(h0=3e-5)
        )
        for block, err in worst.items():
            assert err < 1e-4, f"block {block} at relative error {err}"


def test_criterion_4_elbo_lower_bounds_the_exact_marginal_then_closes_the_gap():
    N = 50
    rng = np.random.default_rng(0)
    x = np.linspace(-2.0, 2.0, N)[:, None]
    y = np.sin(3.0 * x) + 0.1 * rng.standard_normal((N, 1))
    X, Y = tensor(x), tensor(y)
    kernel = KernelParams.from_values([0.1], 1.0)
    noise_var = 0.1
    log_marginal = exact_gp_log_marginal(x, y, kernel, noise_var)

    def model_for(mean, factor):
        layer = CoupledLayerState(X.clone(), mean, factor, kernel)
        return DgpModel(
            layers=[layer],
            mean_maps=[StaticMeanMap.zero(1, 1)],
            log_noise_var=torch.tensor(math.log(noise_var), dtype=DTYPE),
            hidden_width=1,
        )

    state_rng = np.random.default_rng(42)
    for _ in range(100):
        mean = tensor(state_rng.normal(0.0, 1.0, (N, 1)))
        factor = random_lower(state_rng, N, diag_range=(0.1, 1.5), off_scale=0.3)
        total, _, _, _ = elbo_terms(model_for(mean, factor), X, Y, N, rng_seed=0)
        assert float(total) <= log_marginal + 1e-8

    prior_factor = robust_cholesky(kernel_matrix(X, X, kernel)).L
    model = model_for(torch.zeros(N, 1, dtype=DTYPE), prior_factor)
    cfg = TrainConfig(
        epochs=2000, batch_size=N, learning_rate=0.02, seed=0,
        trainable=(".m", ".raw_factor"),
    )
    trained, _ = train(model, (x, y), cfg)
    total, _, _, _ = elbo_terms(trained, X, Y, N, rng_seed=0)
    gap = log_marginal - float(total)
    assert gap < 0.01 * abs(log_marginal), (
        f"gap {gap} vs log marginal {log_marginal}"
    )


def test_criterion_5_mean_parameterizations_train_stably_at_protocol_lr():
    data = make_synthetic("sinusoid", 200, 0.1, seed=0)
    train_set, _ = split(data, SplitSpec(seed=0))
    norm = fit_normalizer(train_set)
    tn = norm.transform(train_set)

    def run(variant):
        model = init_model(
            tn.X, 1, kind="decoupled", depth=1, width=10, ma=20, mb=10,
            mean_variant=variant, var_variant=VarVariant.STANDARD, seed=0,
        )
        _, history = train(
            model, tn, TrainConfig(epochs=500, learning_rate=0.01, seed=0)
        )
        return np.asarray(history.elbo)

    for variant in (MeanVariant.WHITENED, MeanVariant.STANDARD):
        elbo = run(variant)
        assert np.isfinite(elbo).all(), f"{variant.value} diverged"
        medians = [float(np.median(elbo[i : i + 50])) for i in range(0, 500, 50)]
        for earlier, later in zip(medians, medians[1:]):
            assert later >= earlier - 1e-6 * abs(earlier), (
                f"{variant.value} medians fell back: {medians}"
            )

    # the remaining variant is allowed to diverge; record what happened
    # without gating the release on a seed-dependent outcome
    try:
        elbo = run(MeanVariant.DUAL)
        outcome = "finite" if np.isfinite(elbo).all() else "non-finite"
    except TrainingError as exc:
        outcome = f"aborted ({exc})"
    print(f"[observed only] dual mean run: {outcome}")


def test_criterion_6_desk_scale_ordering_on_the_arm_benchmark():
    dataset = resolve_dataset("arm:2000")
    aggregates = {}
    for label, kind, depth, sizes in [
        ("dec-d1", "decoupled", 1, {"ma": 100, "mb": 20}),
        ("cpl-d1", "coupled", 1, {"m": 40}),
        ("dec-d0", "decoupled", 0, {"ma": 100, "mb": 20}),
        ("cpl-d0", "coupled", 0, {"m": 40}),
    ]:
        spec = ExperimentSpec(
            dataset="arm:2000", model_kind=kind, depth=depth,
            train=TrainConfig(epochs=500, learning_rate=0.01, seed=0),
            repeats=3, samples=100, **sizes,
        )
        report = run_experiment(spec, dataset, None)
        agg = report["aggregate"]
        assert agg["succeeded"] == 3, f"{label}: {agg}"
        aggregates[label] = agg
        print(
            f"{label}: mean LL {agg['mean_ll']:.4f} +- {agg['mean_ll_std']:.4f}"
            f"  RMSE {agg['rmse']:.4f} +- {agg['rmse_std']:.4f}"
        )

    assert aggregates["dec-d1"]["rmse"] <= aggregates["cpl-d1"]["rmse"] + 0.01
    assert aggregates["dec-d1"]["mean_ll"] > aggregates["dec-d0"]["mean_ll"]
    assert aggregates["cpl-d1"]["mean_ll"] > aggregates["cpl-d0"]["mean_ll"]


def test_criterion_7_per_step_cost_ordering(tmp_path):
    out = tmp_path / "bench"
    rc = main([
        "benchmark", "--m", "200", "--ma", "500", "--mb", "50,100,200",
        "--bench-n", "2000", "--bench-d", "8", "--depth", "2", "--width", "10",
        "--steps", "7", "--warmup", "2", "--seed", "0", "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads((out / "benchmark.json").read_text(encoding="utf-8"))
    by_key = {
        (r["kind"], r["m"], r["ma"], r["mb"]): r["median_step_seconds"]
        for r in doc["rows"]
    }
    t50 = by_key[("decoupled", None, 500, 50)]
    t100 = by_key[("decoupled", None, 500, 100)]
    t200 = by_key[("decoupled", None, 500, 200)]
    coupled = by_key[("coupled", 200, None, None)]
    print(f"per-step medians: mb 50/100/200 = {t50:.4f}/{t100:.4f}/{t200:.4f} s, "
          f"coupled m200 = {coupled:.4f} s")
    assert t50 < t100 < t200
    assert coupled > t100


def test_criterion_8_identical_runs_write_bitwise_identical_checkpoints(tmp_path):
    def run(tag):
        out = tmp_path / tag
        rc = main([
            "train", "--dataset", "sinusoid:80", "--model", "decoupled",
            "--ma", "12", "--mb", "6", "--depth", "1", "--width", "5",
            "--epochs", "40", "--lr", "0.01", "--repeats", "1", "--seed", "5",
            "--samples", "20", "--out", str(out),
        ])
        assert rc == 0
        return (out / "repeat0_checkpoint.json").read_bytes()

    assert run("a") == run("b")

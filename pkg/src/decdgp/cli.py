"""Command-line interface: train, evaluate, benchmark, gradcheck.

Defaults restate the reference experimental protocol: Adam at learning
rate 0.01 for 5000 epochs with batch min(N, 10000), width-10 hidden
layers, whitened mean and standard variance parameterization, and
M=200 (coupled) versus M_a=500, M_b=100 (decoupled), 5 repeats with a
random 20% test split each.

Human-readable tables print with 6 significant digits; machine documents
keep full precision. Exit codes: 0 success, 2 configuration, 3
ingestion, 4 numerical/training, 5 verification.
"""

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (
    CsvSchema,
    Dataset,
    SplitSpec,
    fit_normalizer,
    load_csv,
    make_arm_kinematics,
    make_benchmark,
    make_synthetic,
    parse_manifest,
    split,
)
from .errors import (
    ConfigurationError,
    DecdgpError,
    IngestionError,
    TrainingError,
    VerificationError,
)
from .layer import MeanVariant, VarVariant
from .model import init_model, rmse, test_log_likelihood
from .objective import elbo_terms
from .oracle import FiniteDiffSpec, finite_diff_grad
from .train import (
    TrainConfig,
    build_model,
    load_checkpoint,
    model_parameters,
    save_checkpoint,
    time_training_steps,
    train_with_state,
)
from .util import as_tensor, derive_seed

REPORT_FORMAT = "decdgp-report"
REPORT_VERSION = 1

# seed streams used by the experiment driver
_STREAM_INIT = 4
_STREAM_TRAIN = 5
_STREAM_EVAL = 6

_SYNTHETIC_KINDS = ("sinusoid", "step", "linear")


def fmt(x) -> str:
    """6 significant digits for human-facing numbers."""
    if x is None:
        return "-"
    return f"{float(x):.6g}"


def render_table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


@dataclass
class ExperimentSpec:
    """Everything one training experiment needs, with protocol defaults."""

    dataset: str
    model_kind: str = "decoupled"
    m: int | None = None
    ma: int | None = None
    mb: int | None = None
    depth: int = 1
    width: int = 10
    mean_variant: MeanVariant = MeanVariant.WHITENED
    var_variant: VarVariant = VarVariant.STANDARD
    train: TrainConfig = field(default_factory=TrainConfig)
    repeats: int = 5
    samples: int = 100

    def __post_init__(self):
        if self.model_kind not in ("coupled", "decoupled"):
            raise ConfigurationError(f"unknown model kind {self.model_kind!r}")
        if not 0 <= self.depth <= 4:
            raise ConfigurationError("depth must lie in 0..4")
        if self.width < 1:
            raise ConfigurationError("width must be positive")
        if not 1 <= self.repeats <= 5:
            raise ConfigurationError("repeats must lie in 1..5")
        if self.samples < 1:
            raise ConfigurationError("samples must be positive")
        if self.model_kind == "coupled":
            if self.m is None:
                self.m = 200
        else:
            if (self.ma is None) != (self.mb is None):
                raise ConfigurationError("decoupled models need both --ma and --mb")
            if self.ma is None:
                self.ma, self.mb = 500, 100

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_kind": self.model_kind,
            "m": self.m,
            "ma": self.ma,
            "mb": self.mb,
            "depth": self.depth,
            "width": self.width,
            "mean_variant": self.mean_variant.value,
            "var_variant": self.var_variant.value,
            "train": self.train.to_dict(),
            "repeats": self.repeats,
            "samples": self.samples,
        }


def resolve_dataset(name: str, manifest_path=None) -> Dataset:
    """Turn a dataset reference into arrays.

    Accepts: a synthetic kind (sinusoid, step, linear, arm), optionally
    suffixed ':N' for the point count; a path to a CSV file; a manifest
    entry name; or a bare name found as <data_dir>/<name>.csv where the
    data directory is the DECDGP_DATA_DIR environment variable (default
    'data'). Synthetic datasets use fixed generation seeds so a name
    always denotes the same data.
    """
    base, _, size = name.partition(":")
    n_points = None
    if size:
        try:
            n_points = int(size)
        except ValueError as exc:
            raise ConfigurationError(f"bad dataset size suffix in {name!r}") from exc
    if base in _SYNTHETIC_KINDS:
        return make_synthetic(base, n_points or 1000, noise_std=0.1, seed=0)
    if base == "arm":
        return make_arm_kinematics(n_points or 8192, noise_std=0.05, seed=0)
    path = Path(name)
    if path.suffix == ".csv" or path.is_file():
        return load_csv(path, CsvSchema())
    if manifest_path is not None:
        entries = parse_manifest(manifest_path)
        if name in entries:
            entry = entries[name]
            return load_csv(entry.path, entry.schema)
    data_dir = Path(os.environ.get("DECDGP_DATA_DIR", "data"))
    candidate = data_dir / f"{name}.csv"
    if candidate.is_file():
        return load_csv(candidate, CsvSchema())
    raise IngestionError(
        f"cannot resolve dataset {name!r}: not a synthetic kind, an existing "
        f"file, a manifest entry, or {candidate}"
    )


def run_experiment(spec: ExperimentSpec, dataset: Dataset, out_dir: Path | None):
    """Train spec.repeats models and collect the metrics report."""
    base_seed = spec.train.seed
    per_repeat = []
    for r in range(spec.repeats):
        split_spec = SplitSpec(test_fraction=0.2, repeat_index=r, seed=base_seed)
        train_ds, test_ds = split(dataset, split_spec)
        norm = fit_normalizer(train_ds)
        train_n = norm.transform(train_ds)
        test_n = norm.transform(test_ds)
        init_seed = derive_seed(base_seed, _STREAM_INIT, r)
        run_seed = derive_seed(base_seed, _STREAM_TRAIN, r)
        eval_seed = derive_seed(base_seed, _STREAM_EVAL, r)
        model = init_model(
            train_n.X,
            train_n.num_targets,
            kind=spec.model_kind,
            depth=spec.depth,
            width=spec.width,
            m=spec.m,
            ma=spec.ma,
            mb=spec.mb,
            mean_variant=spec.mean_variant,
            var_variant=spec.var_variant,
            seed=init_seed,
            normalizer=norm,
        )
        cfg = TrainConfig(
            epochs=spec.train.epochs,
            batch_size=spec.train.batch_size,
            learning_rate=spec.train.learning_rate,
            seed=run_seed,
            adam_beta1=spec.train.adam_beta1,
            adam_beta2=spec.train.adam_beta2,
            adam_eps=spec.train.adam_eps,
            trainable=spec.train.trainable,
        )
        entry = {
            "repeat": r,
            "train_seed": run_seed,
            "init_seed": init_seed,
            "eval_seed": eval_seed,
        }
        started = time.perf_counter()
        try:
            trained, params, adam, history = train_with_state(
                model, (train_n.X, train_n.Y), cfg
            )
        except TrainingError as exc:
            entry.update(status="failed", error=str(exc))
            if out_dir is not None and exc.last_good is not None:
                (out_dir / f"repeat{r}_lastgood.json").write_text(
                    json.dumps(exc.last_good, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8",
                )
            per_repeat.append(entry)
            print(f"repeat {r}: FAILED ({exc})")
            continue
        elapsed = time.perf_counter() - started
        ll = test_log_likelihood(
            trained, test_n.X, test_n.Y, spec.samples, norm, seed=eval_seed
        )
        err = rmse(trained, test_n.X, test_n.Y, spec.samples, norm, seed=eval_seed)
        entry.update(
            status="ok",
            mean_ll=ll,
            rmse=err,
            train_seconds=elapsed,
            final_elbo=history.elbo[-1] if history.elbo else None,
        )
        per_repeat.append(entry)
        if out_dir is not None:
            save_checkpoint(
                out_dir / f"repeat{r}_checkpoint.json",
                trained,
                params,
                adam,
                cfg,
                cfg.epochs,
                history,
                extra={
                    "dataset": spec.dataset,
                    "base_seed": base_seed,
                    "repeat_index": r,
                    "samples": spec.samples,
                    "eval_seed": eval_seed,
                },
            )
        print(
            f"repeat {r}: mean LL {fmt(ll)}  RMSE {fmt(err)}  ({fmt(elapsed)} s)"
        )
    ok = [e for e in per_repeat if e["status"] == "ok"]
    aggregate = {"succeeded": len(ok), "failed": len(per_repeat) - len(ok)}
    if ok:
        lls = [e["mean_ll"] for e in ok]
        errs = [e["rmse"] for e in ok]
        times = [e["train_seconds"] for e in ok]
        aggregate.update(
            mean_ll=float(np.mean(lls)),
            mean_ll_std=float(np.std(lls, ddof=1)) if len(ok) > 1 else None,
            rmse=float(np.mean(errs)),
            rmse_std=float(np.std(errs, ddof=1)) if len(ok) > 1 else None,
            median_train_seconds=float(statistics.median(times)),
        )
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "command": "train",
        "config": spec.to_dict(),
        "per_repeat": per_repeat,
        "aggregate": aggregate,
    }


def _report_tables(report: dict) -> str:
    rows = []
    for e in report["per_repeat"]:
        if e["status"] == "ok":
            rows.append(
                (
                    e["repeat"],
                    fmt(e["mean_ll"]),
                    fmt(e["rmse"]),
                    fmt(e["train_seconds"]),
                    "ok",
                )
            )
        else:
            rows.append((e["repeat"], "-", "-", "-", "failed"))
    text = render_table(("repeat", "mean LL", "RMSE", "seconds", "status"), rows)
    agg = report["aggregate"]
    if agg.get("succeeded"):
        ll_std = agg.get("mean_ll_std")
        rm_std = agg.get("rmse_std")
        text += (
            f"\n\nmean LL {fmt(agg['mean_ll'])}"
            + (f" +- {fmt(ll_std)}" if ll_std is not None else "")
            + f"   RMSE {fmt(agg['rmse'])}"
            + (f" +- {fmt(rm_std)}" if rm_std is not None else "")
            + f"   median runtime {fmt(agg['median_train_seconds'])} s"
        )
    return text


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    dataset = resolve_dataset(spec.dataset, args.manifest)
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    report = run_experiment(spec, dataset, out_dir)
    text = _report_tables(report)
    print(text)
    if out_dir is not None:
        (out_dir / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
        (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    return 0 if report["aggregate"]["failed"] == 0 else TrainingError.exit_code


def cmd_evaluate(args) -> int:
    if args.checkpoint is None:
        raise ConfigurationError("evaluate needs --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    exp = ck.extra or {}
    dataset_name = args.dataset or exp.get("dataset")
    if dataset_name is None:
        raise ConfigurationError(
            "checkpoint stores no dataset reference; pass --dataset"
        )
    dataset = resolve_dataset(dataset_name, args.manifest)
    base_seed = exp.get("base_seed", args.seed)
    repeat = exp.get("repeat_index", 0)
    samples = args.samples if args.samples is not None else exp.get("samples", 100)
    eval_seed = exp.get("eval_seed")
    if eval_seed is None or args.samples is not None:
        eval_seed = derive_seed(base_seed, _STREAM_EVAL, repeat)
    _, test_ds = split(
        dataset, SplitSpec(test_fraction=0.2, repeat_index=repeat, seed=base_seed)
    )
    model = ck.model
    if model.normalizer is None:
        raise ConfigurationError("checkpoint model stores no normalizer")
    test_n = model.normalizer.transform(test_ds)
    ll = test_log_likelihood(
        model, test_n.X, test_n.Y, samples, model.normalizer, seed=eval_seed
    )
    err = rmse(model, test_n.X, test_n.Y, samples, model.normalizer, seed=eval_seed)
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "command": "evaluate",
        "checkpoint": str(args.checkpoint),
        "dataset": dataset_name,
        "repeat_index": repeat,
        "samples": samples,
        "eval_seed": eval_seed,
        "mean_ll": ll,
        "rmse": err,
    }
    print(render_table(("mean LL", "RMSE", "samples"), [(fmt(ll), fmt(err), samples)]))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "evaluate.json").write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
    return 0


def _parse_int_list(text, flag) -> list:
    if text is None:
        return []
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError as exc:
        raise ConfigurationError(f"{flag} expects integers, got {text!r}") from exc


def _parse_single_int(text, flag):
    values = _parse_int_list(text, flag)
    if not values:
        return None
    if len(values) > 1:
        raise ConfigurationError(f"{flag} expects a single integer here, got {text!r}")
    return values[0]


def benchmark_grid(
    configs, N, D, depth, width, cfg, steps, warmup, binary=False,
    mean_variant=MeanVariant.DUAL, var_variant=VarVariant.STANDARD,
):
    """Median per-step times for a list of model size configurations.

    configs entries are ('coupled', m) or ('decoupled', ma, mb). Returns
    one row dict per configuration, in order. Decoupled entries default
    to the dual mean parameterization, the one whose per-step cost stays
    linear in the mean inducing count.
    """
    if not configs:
        raise ConfigurationError("benchmark grid is empty")
    dataset = make_benchmark(N, D, seed=cfg.seed, binary=binary)
    rows = []
    for entry in configs:
        kind = entry[0]
        if kind == "coupled":
            m, ma, mb = entry[1], None, None
        else:
            m, ma, mb = None, entry[1], entry[2]
        model = init_model(
            dataset.X,
            dataset.num_targets,
            kind=kind,
            depth=depth,
            width=width,
            m=m,
            ma=ma,
            mb=mb,
            mean_variant=mean_variant,
            var_variant=var_variant,
            seed=cfg.seed,
        )
        durations = time_training_steps(
            model, dataset.X, dataset.Y, cfg, steps=steps, warmup=warmup
        )
        rows.append(
            {
                "kind": kind,
                "m": m,
                "ma": ma,
                "mb": mb,
                "depth": depth,
                "width": width,
                "n": N,
                "d": D,
                "batch": cfg.resolve_batch_size(N),
                "steps": steps,
                "median_step_seconds": float(statistics.median(durations)),
            }
        )
    return rows


_BENCH_COLUMNS = (
    "kind", "m", "ma", "mb", "depth", "width", "n", "d", "batch", "steps",
    "median_step_seconds",
)


def cmd_benchmark(args) -> int:
    configs = []
    for m in _parse_int_list(args.m, "--m"):
        configs.append(("coupled", m))
    ma_list = _parse_int_list(args.ma, "--ma")
    mb_list = _parse_int_list(args.mb, "--mb")
    if bool(ma_list) != bool(mb_list):
        raise ConfigurationError("benchmark needs both --ma and --mb, or neither")
    for ma in ma_list:
        for mb in mb_list:
            configs.append(("decoupled", ma, mb))
    if not configs:
        raise ConfigurationError("benchmark needs --m and/or --ma/--mb")
    cfg = TrainConfig(
        epochs=1,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
    )
    rows = benchmark_grid(
        configs,
        N=args.bench_n,
        D=args.bench_d,
        depth=args.depth,
        width=args.width,
        cfg=cfg,
        steps=args.steps,
        warmup=args.warmup,
        binary=args.bench_binary,
        mean_variant=MeanVariant(args.mean_variant),
        var_variant=VarVariant(args.var_variant),
    )
    display = [
        tuple(
            fmt(row[c]) if c == "median_step_seconds" else ("-" if row[c] is None else row[c])
            for c in _BENCH_COLUMNS
        )
        for row in rows
    ]
    print(render_table(_BENCH_COLUMNS, display))
    tsv_lines = ["\t".join(_BENCH_COLUMNS)]
    for row in rows:
        tsv_lines.append(
            "\t".join("" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in _BENCH_COLUMNS)
        )
    tsv = "\n".join(tsv_lines) + "\n"
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "benchmark.tsv").write_text(tsv, encoding="utf-8")
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "command": "benchmark",
            "rows": rows,
            "config": {
                "n": args.bench_n,
                "d": args.bench_d,
                "depth": args.depth,
                "width": args.width,
                "steps": args.steps,
                "warmup": args.warmup,
                "seed": args.seed,
                "batch": cfg.resolve_batch_size(args.bench_n),
                "learning_rate": args.lr,
                "mean_variant": args.mean_variant,
                "var_variant": args.var_variant,
            },
        }
        (out_dir / "benchmark.json").write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
    else:
        print()
        print(tsv, end="")
    return 0


GRADCHECK_MAX_INDUCING = 16
GRADCHECK_MAX_POINTS = 32


def gradcheck_model(model, X, Y, seed: int, spec: FiniteDiffSpec | None = None) -> dict:
    """Worst relative error of the bound's gradient per parameter block.

    Compares reverse-mode gradients against central finite differences at
    fixed sampling noise. The relative error denominator is floored at
    1e-4 to keep near-zero coordinates meaningful.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    N = X.shape[0]
    params = model_parameters(model)
    leaves = {k: p.clone().requires_grad_(True) for k, p in params.items()}
    built = build_model(model, leaves)
    total, _, _, _ = elbo_terms(built, X, Y, N, seed)
    total.backward()
    results = {}
    for name, p in params.items():
        def f(theta, _name=name):
            trial = dict(params)
            trial[_name] = as_tensor(theta).reshape(params[_name].shape)
            value, _, _, _ = elbo_terms(build_model(model, trial), X, Y, N, seed)
            return float(value)

        numeric = finite_diff_grad(f, p.numpy().ravel(), spec)
        grad = leaves[name].grad
        analytic = (
            np.zeros_like(numeric) if grad is None else grad.numpy().ravel()
        )
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
        results[name] = float(np.max(np.abs(analytic - numeric) / denom))
    return results


def cmd_gradcheck(args) -> int:
    m = _parse_single_int(args.m, "--m")
    ma = _parse_single_int(args.ma, "--ma")
    mb = _parse_single_int(args.mb, "--mb")
    kind = args.model
    if kind == "coupled":
        m = m if m is not None else 8
        if m > GRADCHECK_MAX_INDUCING:
            raise ConfigurationError(
                f"gradcheck caps inducing counts at {GRADCHECK_MAX_INDUCING}"
            )
    else:
        ma = ma if ma is not None else 8
        mb = mb if mb is not None else 4
        if max(ma, mb) > GRADCHECK_MAX_INDUCING:
            raise ConfigurationError(
                f"gradcheck caps inducing counts at {GRADCHECK_MAX_INDUCING}"
            )
    n = args.batch if args.batch is not None else 16
    if n > GRADCHECK_MAX_POINTS:
        raise ConfigurationError(f"gradcheck caps the point count at {GRADCHECK_MAX_POINTS}")
    dataset = make_synthetic("sinusoid", n, noise_std=0.1, seed=0)
    norm = fit_normalizer(dataset)
    ds = norm.transform(dataset)
    model = init_model(
        ds.X,
        ds.num_targets,
        kind=kind,
        depth=args.depth,
        width=args.width,
        m=m,
        ma=ma,
        mb=mb,
        mean_variant=MeanVariant(args.mean_variant),
        var_variant=VarVariant(args.var_variant),
        seed=derive_seed(args.seed, _STREAM_INIT),
    )
    results = gradcheck_model(model, ds.X, ds.Y, seed=derive_seed(args.seed, _STREAM_TRAIN))
    tolerance = args.tolerance
    rows = [
        (name, fmt(worst), "pass" if worst < tolerance else "FAIL")
        for name, worst in sorted(results.items())
    ]
    print(render_table(("block", "worst rel err", "status"), rows))
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "command": "gradcheck",
        "tolerance": tolerance,
        "blocks": results,
        "passed": all(w < tolerance for w in results.values()),
    }
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.json").write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
    if not doc["passed"]:
        worst = max(results.items(), key=lambda kv: kv[1])
        raise VerificationError(
            f"gradient check failed: block {worst[0]} at relative error {fmt(worst[1])}"
        )
    return 0


def _spec_from_args(args) -> ExperimentSpec:
    if args.dataset is None:
        raise ConfigurationError("this command needs --dataset")
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
    )
    return ExperimentSpec(
        dataset=args.dataset,
        model_kind=args.model,
        m=_parse_single_int(args.m, "--m"),
        ma=_parse_single_int(args.ma, "--ma"),
        mb=_parse_single_int(args.mb, "--mb"),
        depth=args.depth,
        width=args.width,
        mean_variant=MeanVariant(args.mean_variant),
        var_variant=VarVariant(args.var_variant),
        train=cfg,
        repeats=args.repeats,
        samples=args.samples,
    )


def _add_shared_flags(sp):
    sp.add_argument("--dataset", help="dataset name, synthetic kind, or CSV path")
    sp.add_argument("--manifest", help="dataset manifest file")
    sp.add_argument(
        "--model", choices=("coupled", "decoupled"), default="decoupled",
        help="which parameterization to build (default decoupled)",
    )
    sp.add_argument("--m", help="inducing count for coupled models")
    sp.add_argument("--ma", help="mean-path inducing count for decoupled models")
    sp.add_argument("--mb", help="variance-path inducing count for decoupled models")
    sp.add_argument("--depth", type=int, default=1, help="hidden layers, 0..4")
    sp.add_argument("--width", type=int, default=10, help="hidden layer width")
    sp.add_argument(
        "--mean-variant",
        choices=[v.value for v in MeanVariant],
        default=MeanVariant.WHITENED.value,
    )
    sp.add_argument(
        "--var-variant",
        choices=[v.value for v in VarVariant],
        default=VarVariant.STANDARD.value,
    )
    sp.add_argument("--epochs", type=int, default=5000)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--batch", type=int, default=None, help="default min(N, 10000)")
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output directory for reports and checkpoints")
    sp.add_argument("--samples", type=int, default=None, help="test-time sample paths")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decdgp",
        description="Deep GP regression with decoupled inducing inputs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train and report test metrics")
    _add_shared_flags(p_train)

    p_eval = sub.add_parser("evaluate", help="recompute metrics for a checkpoint")
    _add_shared_flags(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint file to evaluate")

    p_bench = sub.add_parser("benchmark", help="per-step cost over a size grid")
    _add_shared_flags(p_bench)
    # The timing grid exists to show the cost split between the two
    # inducing sets, so its decoupled rows default to the dual mean path.
    p_bench.set_defaults(mean_variant=MeanVariant.DUAL.value)
    p_bench.add_argument("--bench-n", type=int, default=2000, help="synthetic rows")
    p_bench.add_argument("--bench-d", type=int, default=8, help="synthetic features")
    p_bench.add_argument("--bench-binary", action="store_true", help="binary features")
    p_bench.add_argument("--steps", type=int, default=10, help="timed steps")
    p_bench.add_argument("--warmup", type=int, default=3, help="untimed steps")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_shared_flags(p_grad)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    handlers = {
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "benchmark": cmd_benchmark,
        "gradcheck": cmd_gradcheck,
    }
    try:
        if args.command == "train" and args.samples is None:
            args.samples = 100
        return handlers[args.command](args)
    except DecdgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

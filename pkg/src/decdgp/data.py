"""Dataset ingestion, normalization, splitting, and synthetic generators.

Everything here is numpy-only and pure: loaders parse delimited text into
in-memory arrays, the normalizer is fit on training data and applied
elsewhere, and every random choice flows from an explicit seed.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError
from .util import derive_seed, np_rng


@dataclass
class Dataset:
    """A fully materialized regression dataset.

    X is N x D, Y is N x d_y, both float64 and finite. feature_kinds
    holds one of "continuous" or "binary" per feature column and is
    inferred when left empty.
    """

    X: np.ndarray
    Y: np.ndarray
    name: str = ""
    feature_kinds: list = field(default_factory=list)
    rejected_rows: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise IngestionError("dataset arrays must be 2-d")
        if self.X.shape[0] != self.Y.shape[0]:
            raise IngestionError("X and Y row counts differ")
        if self.X.shape[0] < 2:
            raise IngestionError("a dataset needs at least 2 rows")
        if not (np.isfinite(self.X).all() and np.isfinite(self.Y).all()):
            raise IngestionError("dataset contains non-finite entries")
        if not self.feature_kinds:
            self.feature_kinds = [
                "binary" if np.isin(col, (0.0, 1.0)).all() else "continuous"
                for col in self.X.T
            ]
        elif len(self.feature_kinds) != self.X.shape[1]:
            raise IngestionError("feature_kinds length does not match the feature count")

    @property
    def num_points(self) -> int:
        return self.X.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    @property
    def num_targets(self) -> int:
        return self.Y.shape[1]

    def subset(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(
            self.X[indices],
            self.Y[indices],
            name=self.name if name is None else name,
            feature_kinds=list(self.feature_kinds),
        )


@dataclass
class Normalizer:
    """Per-column affine maps fit on a training split.

    Columns with zero variance keep std 1 and are flagged, so they pass
    through centered. transform followed by the matching inverse is the
    identity to roundoff.
    """

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    x_constant: np.ndarray
    y_constant: np.ndarray

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std

    def transform_y(self, Y: np.ndarray) -> np.ndarray:
        return (np.asarray(Y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_x(self, Xn: np.ndarray) -> np.ndarray:
        return np.asarray(Xn, dtype=np.float64) * self.x_std + self.x_mean

    def inverse_y(self, Yn: np.ndarray) -> np.ndarray:
        return np.asarray(Yn, dtype=np.float64) * self.y_std + self.y_mean

    def transform(self, ds: Dataset) -> Dataset:
        return Dataset(
            self.transform_x(ds.X),
            self.transform_y(ds.Y),
            name=ds.name,
            feature_kinds=list(ds.feature_kinds),
        )

    def log_jacobian_y(self) -> float:
        """Log-density shift from normalized to original y units: -sum log std."""
        return -float(np.log(self.y_std).sum())

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
            "x_constant": [bool(v) for v in self.x_constant],
            "y_constant": [bool(v) for v in self.y_constant],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(
            x_mean=np.asarray(doc["x_mean"], dtype=np.float64),
            x_std=np.asarray(doc["x_std"], dtype=np.float64),
            y_mean=np.asarray(doc["y_mean"], dtype=np.float64),
            y_std=np.asarray(doc["y_std"], dtype=np.float64),
            x_constant=np.asarray(doc["x_constant"], dtype=bool),
            y_constant=np.asarray(doc["y_constant"], dtype=bool),
        )


def _column_stats(A: np.ndarray):
    mean = A.mean(axis=0)
    std = A.std(axis=0)
    constant = std == 0.0
    std = np.where(constant, 1.0, std)
    return mean, std, constant


def fit_normalizer(train: Dataset) -> Normalizer:
    """Column means and stds of the training split only."""
    x_mean, x_std, x_const = _column_stats(train.X)
    y_mean, y_std, y_const = _column_stats(train.Y)
    return Normalizer(x_mean, x_std, y_mean, y_std, x_const, y_const)


@dataclass
class SplitSpec:
    test_fraction: float = 0.2
    repeat_index: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        if not 0 <= self.repeat_index <= 4:
            raise ConfigurationError("repeat_index must lie in 0..4")


def split(dataset: Dataset, spec: SplitSpec):
    """Deterministic train/test partition; test gets floor(fraction * N) rows."""
    N = dataset.num_points
    perm = np_rng(derive_seed(spec.seed, spec.repeat_index)).permutation(N)
    n_test = int(math.floor(spec.test_fraction * N))
    if n_test < 2 or N - n_test < 2:
        raise ConfigurationError(
            f"split of {N} rows at fraction {spec.test_fraction} leaves a side "
            "with fewer than 2 rows"
        )
    test = dataset.subset(perm[:n_test])
    train = dataset.subset(perm[n_test:])
    return train, test


def init_inducing(train_X: np.ndarray, M: int, seed: int) -> np.ndarray:
    """M distinct training rows, drawn uniformly without replacement."""
    train_X = np.asarray(train_X, dtype=np.float64)
    N = train_X.shape[0]
    if M < 1:
        raise ConfigurationError("need at least one inducing input")
    if M > N:
        raise ConfigurationError(f"cannot draw {M} inducing inputs from {N} rows")
    idx = np_rng(seed).choice(N, size=M, replace=False)
    return train_X[idx].copy()


def load_csv(path, schema: "CsvSchema") -> Dataset:
    """Parse a delimited text file into a Dataset.

    Rows whose cell count disagrees with the first parseable row, or that
    contain empty or non-numeric cells, are rejected and counted in
    Dataset.rejected_rows. A file yielding no valid rows at all is an
    ingestion error naming the first offending line.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such dataset file: {path}")
    rows = []
    rejected = 0
    first_bad_line = None
    width = None
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=schema.delimiter)
            for line_no, cells in enumerate(reader, start=1):
                if line_no == 1 and schema.has_header:
                    continue
                cells = [c.strip() for c in cells]
                if not cells or all(c == "" for c in cells):
                    continue
                try:
                    values = [float(c) for c in cells]
                except ValueError:
                    rejected += 1
                    if first_bad_line is None:
                        first_bad_line = line_no
                    continue
                if width is None:
                    width = len(values)
                if len(values) != width:
                    rejected += 1
                    if first_bad_line is None:
                        first_bad_line = line_no
                    continue
                rows.append(values)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    if not rows:
        where = f" (first problem at line {first_bad_line})" if first_bad_line else ""
        raise IngestionError(f"{path} contains no parseable rows{where}")
    data = np.asarray(rows, dtype=np.float64)
    target = schema.target_column
    if not -data.shape[1] <= target < data.shape[1]:
        raise ConfigurationError(
            f"target column {target} out of range for {data.shape[1]} columns"
        )
    target %= data.shape[1]
    Y = data[:, target : target + 1]
    X = np.delete(data, target, axis=1)
    return Dataset(X, Y, name=path.stem, rejected_rows=rejected)


@dataclass
class CsvSchema:
    delimiter: str = ","
    has_header: bool = False
    target_column: int = -1


@dataclass
class ManifestEntry:
    name: str
    path: Path
    schema: CsvSchema


def parse_manifest(path) -> dict:
    """Read a key=value manifest mapping dataset names to files and schemas.

    Lines look like::

        kin8nm.path = data/kin8nm.csv
        kin8nm.delimiter = ,
        kin8nm.header = false
        kin8nm.target = -1

    Blank lines and '#' comments are skipped; relative paths resolve
    against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such manifest: {path}")
    raw: dict[str, dict] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line or "." not in line.split("=", 1)[0]:
            raise IngestionError(f"{path}:{line_no}: expected 'name.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        name, attr = key.split(".", 1)
        raw.setdefault(name, {})[attr] = value
    entries = {}
    for name, attrs in raw.items():
        if "path" not in attrs:
            raise IngestionError(f"{path}: dataset '{name}' has no path")
        schema = CsvSchema()
        if "delimiter" in attrs:
            schema.delimiter = attrs["delimiter"] or ","
        if "header" in attrs:
            schema.has_header = attrs["header"].lower() in ("true", "1", "yes")
        if "target" in attrs:
            try:
                schema.target_column = int(attrs["target"])
            except ValueError as exc:
                raise IngestionError(
                    f"{path}: dataset '{name}' has non-integer target column"
                ) from exc
        file_path = Path(attrs["path"])
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        entries[name] = ManifestEntry(name=name, path=file_path, schema=schema)
    return entries


def make_synthetic(kind: str, N: int, noise_std: float, seed: int) -> Dataset:
    """1-D toy regression data on x in [-2, 2].

    kinds: sinusoid y = sin(3x) + e, step y = sign(x) + e,
    linear y = 2x + e, with e ~ N(0, noise_std^2).
    """
    if N < 2:
        raise ConfigurationError("need N >= 2")
    rng = np_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(N, 1))
    eps = rng.normal(0.0, noise_std, size=(N, 1))
    if kind == "sinusoid":
        y = np.sin(3.0 * x) + eps
    elif kind == "step":
        y = np.sign(x) + eps
    elif kind == "linear":
        y = 2.0 * x + eps
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")
    return Dataset(x, y, name=kind)


def make_arm_kinematics(N: int, noise_std: float = 0.05, seed: int = 0) -> Dataset:
    """Eight-joint planar arm: angles in, end-effector goal distance out.

    Each of the 8 features is a joint angle drawn uniformly from
    [-pi/2, pi/2]; the links have equal length 1/8, and the target is the
    distance between the arm tip and a fixed goal point, plus Gaussian
    noise. A nonlinear, moderately noisy stand-in with the shape of the
    classic robot-arm kinematics benchmark, for use when no real file is
    on disk.
    """
    if N < 2:
        raise ConfigurationError("need N >= 2")
    rng = np_rng(seed)
    theta = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=(N, 8))
    cum = np.cumsum(theta, axis=1)
    link = 1.0 / 8.0
    px = link * np.cos(cum).sum(axis=1)
    py = link * np.sin(cum).sum(axis=1)
    goal = (0.5, 0.5)
    dist = np.hypot(px - goal[0], py - goal[1])
    y = dist[:, None] + rng.normal(0.0, noise_std, size=(N, 1))
    return Dataset(theta, y, name="arm")


def make_benchmark(N: int, D: int, seed: int, binary: bool = False) -> Dataset:
    """Featureless random data of a given shape, for cost benchmarking only."""
    if N < 2 or D < 1:
        raise ConfigurationError("need N >= 2 and D >= 1")
    rng = np_rng(seed)
    if binary:
        X = rng.integers(0, 2, size=(N, D)).astype(np.float64)
    else:
        X = rng.normal(size=(N, D))
    Y = rng.normal(size=(N, 1))
    return Dataset(X, Y, name="bench")

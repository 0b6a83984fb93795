"""Datasets, the synthetic linear generator, and preprocessing.

Feature matrices are float64 once categorical columns have been encoded.
Before that, a Dataset read from CSV with categorical columns holds an
object array; ``ordinal_encode`` turns it into floats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EncodingError, ShapeError, SpecificationError

RowRule = Callable[[np.ndarray, float], bool]


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    column_names: tuple[str, ...]
    categorical_columns: frozenset[int] = frozenset()

    def __post_init__(self):
        feats = np.asarray(self.features)
        dtype = object if feats.dtype == object else np.float64
        feats = _frozen(feats, dtype)
        if feats.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {feats.shape}")
        target = _frozen(self.target, np.float64).reshape(-1)
        if feats.shape[0] != target.shape[0]:
            raise ShapeError(
                f"{feats.shape[0]} feature rows but {target.shape[0]} targets")
        names = tuple(self.column_names)
        if len(names) != feats.shape[1]:
            raise ShapeError(
                f"{len(names)} column names for {feats.shape[1]} columns")
        cats = frozenset(int(c) for c in self.categorical_columns)
        if any(c < 0 or c >= feats.shape[1] for c in cats):
            raise ShapeError("categorical column index out of range")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "categorical_columns", cats)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def is_numeric(self) -> bool:
        return self.features.dtype != object

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.target[idx],
                       self.column_names, self.categorical_columns)

    def columns(self, idx) -> "Dataset":
        idx = [int(i) for i in idx]
        remap = {old: new for new, old in enumerate(idx)}
        return Dataset(self.features[:, idx], self.target,
                       tuple(self.column_names[i] for i in idx),
                       frozenset(remap[c] for c in self.categorical_columns if c in remap))

    def with_features(self, features, target=None) -> "Dataset":
        return Dataset(features, self.target if target is None else target,
                       self.column_names, self.categorical_columns)


@dataclass(frozen=True)
class DummySpec:
    n_features: int = 86
    n_positive: int = 29
    n_negative: int = 29
    n_zero: int = 28
    positive_range: tuple[float, float] = (0.1, 1.0)
    negative_range: tuple[float, float] = (-1.0, -0.1)
    n_samples: int = 27857
    seed: int = 0

    def validate(self):
        counts = (self.n_features, self.n_positive, self.n_negative, self.n_zero)
        if any(int(c) != c or c < 0 for c in counts):
            raise SpecificationError("feature counts must be non-negative integers")
        if self.n_positive + self.n_negative + self.n_zero != self.n_features:
            raise SpecificationError(
                "n_positive + n_negative + n_zero must equal n_features "
                f"({self.n_positive}+{self.n_negative}+{self.n_zero} != {self.n_features})")
        if self.n_features < 1 or self.n_samples < 1:
            raise SpecificationError("need at least one feature and one sample")
        plo, phi = self.positive_range
        nlo, nhi = self.negative_range
        if not (0 < plo <= phi):
            raise SpecificationError(f"positive_range must lie above 0, got {self.positive_range}")
        if not (nlo <= nhi < 0):
            raise SpecificationError(f"negative_range must lie below 0, got {self.negative_range}")


@dataclass(frozen=True)
class GroundTruth:
    coefficients: np.ndarray
    zero_indices: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _frozen(self.coefficients, np.float64))
        object.__setattr__(self, "zero_indices", frozenset(int(i) for i in self.zero_indices))


def generate_dummy(spec: DummySpec) -> tuple[Dataset, GroundTruth]:
    """Draw a noise-free linear dataset with known coefficients.

    The first ``n_positive`` coefficients come from ``positive_range``, the
    next ``n_negative`` from ``negative_range``, the rest are exactly zero.
    Feature values are uniform on [0, 1).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    coef = np.zeros(spec.n_features)
    p, q = spec.n_positive, spec.n_positive + spec.n_negative
    coef[:p] = rng.uniform(*spec.positive_range, size=spec.n_positive)
    coef[p:q] = rng.uniform(*spec.negative_range, size=spec.n_negative)
    X = rng.uniform(0.0, 1.0, size=(spec.n_samples, spec.n_features))
    y = X @ coef
    names = tuple(f"x{i}" for i in range(spec.n_features))
    truth = GroundTruth(coef, frozenset(range(q, spec.n_features)))
    return Dataset(X, y, names), truth


@dataclass(frozen=True)
class StandardScaler:
    means: np.ndarray
    stds: np.ndarray
    fitted_on: int
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means, np.float64))
        object.__setattr__(self, "stds", _frozen(self.stds, np.float64))


def _population_std(a, axis=0):
    # two-pass: subtract the mean before squaring
    mu = a.mean(axis=axis)
    return mu, np.sqrt(((a - mu) ** 2).mean(axis=axis))


def fit_scaler(data: Dataset, rows) -> StandardScaler:
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise SpecificationError("cannot fit a scaler on an empty row set")
    if not data.is_numeric():
        raise SpecificationError("encode categorical columns before scaling")
    X = data.features[rows]
    means, stds = _population_std(X)
    stds = np.where(stds > 0, stds, 1.0)
    tmean, tstd = _population_std(data.target[rows])
    return StandardScaler(means, stds, int(rows.size), float(tmean),
                          float(tstd) if tstd > 0 else 1.0)


def transform(scaler: StandardScaler, data: Dataset, scale_target: bool = False) -> Dataset:
    if data.n_features != scaler.means.shape[0]:
        raise ShapeError(
            f"scaler fitted on {scaler.means.shape[0]} columns, data has {data.n_features}")
    X = (data.features - scaler.means) / scaler.stds
    y = data.target
    if scale_target:
        y = (y - scaler.target_mean) / scaler.target_std
    return data.with_features(X, y)


def inverse_transform(scaler: StandardScaler, data: Dataset, scale_target: bool = False) -> Dataset:
    if data.n_features != scaler.means.shape[0]:
        raise ShapeError(
            f"scaler fitted on {scaler.means.shape[0]} columns, data has {data.n_features}")
    X = data.features * scaler.stds + scaler.means
    y = data.target
    if scale_target:
        y = y * scaler.target_std + scaler.target_mean
    return data.with_features(X, y)


class OrdinalEncoder:
    """Maps labels to integer codes in lexicographic label order."""

    def __init__(self):
        self.categories_: dict[int, list[str]] = {}

    def fit(self, data: Dataset, columns: Iterable[int]) -> "OrdinalEncoder":
        for c in columns:
            labels = sorted({str(v) for v in data.features[:, c]})
            self.categories_[int(c)] = labels
        return self

    def transform(self, data: Dataset) -> Dataset:
        X = np.array(data.features, dtype=object, copy=True)
        for c, labels in self.categories_.items():
            lookup = {lab: i for i, lab in enumerate(labels)}
            col = []
            for r, v in enumerate(X[:, c]):
                try:
                    col.append(lookup[str(v)])
                except KeyError:
                    raise EncodingError(
                        f"unseen label {v!r} in column {data.column_names[c]!r} (row {r})") from None
            X[:, c] = col
        try:
            X = X.astype(np.float64)
        except (TypeError, ValueError) as exc:
            raise EncodingError(f"non-numeric values remain after encoding: {exc}") from None
        return Dataset(X, data.target, data.column_names,
                       data.categorical_columns | frozenset(self.categories_))


def ordinal_encode(data: Dataset, columns) -> Dataset:
    return OrdinalEncoder().fit(data, columns).transform(data)


@dataclass(frozen=True)
class SplitPlan:
    train_fraction: float = 0.7
    n_folds: int = 5
    seed: int = 0

    def validate(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise SpecificationError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.n_folds < 2:
            raise SpecificationError(f"n_folds must be >= 2, got {self.n_folds}")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    folds: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __iter__(self):
        return iter((self.train, self.test, list(self.folds)))


def split(data: Dataset | int, plan: SplitPlan) -> Split:
    """Shuffle rows into train/test, then partition train into folds.

    Returned index arrays are sorted. Fold sizes differ by at most one.
    """
    plan.validate()
    n = data if isinstance(data, (int, np.integer)) else data.n_samples
    n_train = int(math.floor(plan.train_fraction * n + 0.5))
    if plan.n_folds > n_train:
        raise SpecificationError(f"{plan.n_folds} folds but only {n_train} training rows")
    perm = np.random.default_rng(plan.seed).permutation(n)
    train, test = perm[:n_train], perm[n_train:]
    folds = tuple(np.sort(f) for f in np.array_split(train, plan.n_folds))
    return Split(np.sort(train), np.sort(test), folds)


def no_nan(x, y) -> bool:
    return bool(np.all(np.isfinite(np.asarray(x, dtype=np.float64))) and math.isfinite(y))


def clean(data: Dataset, rules: Sequence[RowRule] = ()) -> Dataset:
    keep = [r for r in range(data.n_samples)
            if all(rule(data.features[r], float(data.target[r])) for rule in rules)]
    return data.rows(np.asarray(keep, dtype=np.intp))


def read_csv(path, target: str, categorical: Iterable[str] = ()) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if target not in header:
        raise SpecificationError(f"target column {target!r} not in {path}")
    t = header.index(target)
    names = [h for i, h in enumerate(header) if i != t]
    cat_names = set(categorical)
    unknown = cat_names - set(names)
    if unknown:
        raise SpecificationError(f"unknown categorical columns: {sorted(unknown)}")
    cat_idx = frozenset(i for i, h in enumerate(names) if h in cat_names)

    def cell(v, categorical_col):
        if categorical_col:
            return v
        return float(v) if v.strip() not in ("", "NA", "NaN", "nan") else math.nan

    X = [[cell(v, j in cat_idx) for j, v in enumerate(r[:t] + r[t + 1:])] for r in rows]
    y = [float(r[t]) if r[t].strip() not in ("", "NA") else math.nan for r in rows]
    feats = np.array(X, dtype=object if cat_idx else np.float64).reshape(len(rows), len(names))
    return Dataset(feats, np.array(y, dtype=np.float64), tuple(names), cat_idx)


def write_csv(data: Dataset, path, target: str = "target"):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.column_names) + [target])
        for x, y in zip(data.features, data.target):
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in x]
                       + [repr(float(y))])
    return path


def write_ground_truth(truth: GroundTruth, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "coefficient"])
        for i, c in enumerate(truth.coefficients):
            w.writerow([i, repr(float(c))])
    return path


def read_ground_truth(path) -> GroundTruth:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    coef = np.zeros(len(rows))
    for r in rows:
        coef[int(r["index"])] = float(r["coefficient"])
    return GroundTruth(coef, frozenset(int(i) for i in np.flatnonzero(coef == 0)))

"""Feature subset selectors.

The attribution-driven selector clusters per-feature importance scores with
1-D k-means and drops the cluster with the smallest centroid. Pearson, Lasso
and top-n selectors serve as comparisons.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribution import GlobalImportance
from .errors import ClusteringError, SpecificationError
from .seeding import derive_seed


@dataclass(frozen=True)
class ClusterResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    lowest_cluster: int
    inertia: float
    n_iter: int = 0


@dataclass(frozen=True)
class FeatureSubset:
    indices: tuple[int, ...]
    provenance: tuple = ()
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        idx = tuple(sorted({int(i) for i in self.indices}))
        if not idx:
            raise SpecificationError("a feature subset cannot be empty")
        if idx[0] < 0:
            raise SpecificationError("negative feature index")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self):
        return len(self.indices)

    @property
    def label(self) -> str:
        ks = [p for p in self.provenance if isinstance(p, int)]
        if ks and len(ks) == len(self.provenance):
            return "k=" + ",".join(str(k) for k in ks)
        return ",".join(str(p) for p in self.provenance)


def _scores(scores):
    if isinstance(scores, GlobalImportance):
        return scores.scores
    return np.asarray(scores, dtype=np.float64).reshape(-1)


def _assign(x, centroids):
    # argmin picks the lowest cluster id on exact ties
    return np.argmin(np.abs(x[:, None] - centroids[None, :]), axis=1)


def _inertia(x, labels, centroids):
    return float(np.sum((x - centroids[labels]) ** 2))


def kmeans_plusplus(x, k, rng):
    centroids = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centroids)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            centroids.append(x[rng.integers(len(x))])
        else:
            centroids.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centroids, dtype=np.float64)


def lloyd(x, centroids, max_iter=300):
    """Lloyd iterations from the given centroids.

    Returns (labels, centroids, inertia history). An emptied cluster is
    re-seeded at the point farthest from its current centroid.
    """
    centroids = np.array(centroids, dtype=np.float64)
    k = len(centroids)
    labels = _assign(x, centroids)
    history = [_inertia(x, labels, centroids)]
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean()
            else:
                far = int(np.argmax((x - centroids[labels]) ** 2))
                centroids[c] = x[far]
                labels[far] = c
        history.append(_inertia(x, labels, centroids))
        new = _assign(x, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
        history.append(_inertia(x, labels, centroids))
    return labels, centroids, history


def kmeans_1d(scores, k: int, seed: int = 0, n_restarts: int = 100, max_iter: int = 300) -> ClusterResult:
    """Best-of-``n_restarts`` Lloyd runs with k-means++ starts.

    Cluster ids are renumbered by ascending centroid, so ``lowest_cluster``
    is always 0.
    """
    x = _scores(scores)
    if k < 2 or k > x.shape[0]:
        raise SpecificationError(f"k must be in [2, {x.shape[0]}], got {k}")
    if k > np.unique(x).shape[0]:
        raise ClusteringError(f"k={k} exceeds the {np.unique(x).shape[0]} distinct scores")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        labels, cents, hist = lloyd(x, kmeans_plusplus(x, k, rng), max_iter)
        if best is None or hist[-1] < best[2] - 1e-15:
            best = (labels, cents, hist[-1], len(hist))
    labels, cents, inertia, n_iter = best
    order = np.argsort(cents, kind="stable")
    rank = np.empty(k, dtype=np.intp)
    rank[order] = np.arange(k)
    return ClusterResult(k, rank[labels], cents[order], 0, inertia, n_iter)


@dataclass
class Elimination:
    subsets: list[FeatureSubset]
    clusterings: dict[int, ClusterResult] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)


def eliminate_lowest_detailed(scores, k_values, seed: int = 0) -> Elimination:
    x = _scores(scores)
    n = x.shape[0]
    out = Elimination([])
    by_key: dict[tuple, int] = {}
    for k in k_values:
        k = int(k)
        if k < 2 or k > n:
            raise SpecificationError(f"k={k} outside [2, {n}]")
        res = kmeans_1d(x, k, derive_seed(seed, "kmeans", k))
        out.clusterings[k] = res
        keep = tuple(np.flatnonzero(res.assignments != res.lowest_cluster))
        if not keep:
            msg = f"k={k}: eliminating the lowest cluster would remove every feature"
            warnings.warn(msg, RuntimeWarning)
            out.skipped.append(msg)
            continue
        if keep in by_key:
            j = by_key[keep]
            old = out.subsets[j]
            out.subsets[j] = FeatureSubset(old.indices, old.provenance + (k,))
        else:
            by_key[keep] = len(out.subsets)
            out.subsets.append(FeatureSubset(keep, (k,)))
    return out


def eliminate_lowest(scores, k_values, seed: int = 0) -> list[FeatureSubset]:
    return eliminate_lowest_detailed(scores, k_values, seed).subsets


def _check_n(n, n_features):
    if n < 1:
        raise SpecificationError(f"n must be >= 1, got {n}")
    if n > n_features:
        raise SpecificationError(f"n={n} exceeds the {n_features} available features")


def pearson_correlations(X, y) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((Xc ** 2).sum(axis=0))
    sy = np.sqrt((yc ** 2).sum())
    num = Xc.T @ yc
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / (sx * sy)
    return np.where((sx > 0) & (sy > 0), r, 0.0)


def pearson_top_n(data, rows, n: int) -> FeatureSubset:
    _check_n(n, data.n_features)
    rows = np.asarray(rows, dtype=np.intp)
    r = pearson_correlations(data.features[rows], data.target[rows])
    order = np.argsort(-np.abs(r), kind="stable")
    return FeatureSubset(order[:n], ("pearson",))


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def lasso_cd(X, y, lam: float, beta0=None, tol: float = 1e-12, max_iter: int = 100_000):
    """Cyclic coordinate descent on (1/2m)||y - X b||^2 + lam ||b||_1 (no intercept)."""
    m, p = X.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)
    col_sq = (X ** 2).sum(axis=0) / m
    resid = y - X @ beta
    for _ in range(max_iter):
        max_step = 0.0
        for j in range(p):
            if col_sq[j] == 0:
                beta[j] = 0.0
                continue
            old = beta[j]
            rho = X[:, j] @ resid / m + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                resid -= X[:, j] * (new - old)
                beta[j] = new
                max_step = max(max_step, abs(new - old) * np.sqrt(col_sq[j]))
        if max_step < tol:
            break
    return beta


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    exact: bool = True


def lasso_fit(X, y, lam: float, fit_intercept: bool = True, beta0=None) -> LassoFit:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fit_intercept:
        xm, ym = X.mean(axis=0), y.mean()
        beta = lasso_cd(X - xm, y - ym, lam, beta0)
        return LassoFit(beta, float(ym - xm @ beta), lam)
    return LassoFit(lasso_cd(X, y, lam, beta0), 0.0, lam)


def lambda_max(X, y, fit_intercept: bool = True) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fit_intercept:
        X, y = X - X.mean(axis=0), y - y.mean()
    return float(np.max(np.abs(X.T @ y)) / X.shape[0])


def lasso_search(X, y, n: int, max_iter: int = 100) -> LassoFit:
    """Bisect the penalty until exactly ``n`` coefficients are nonzero.

    Falls back to the fit whose support size is closest to ``n`` (smaller
    penalty on ties) with ``exact=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_n(n, X.shape[1])
    lo, hi = 0.0, lambda_max(X, y)
    best, warm = None, None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fit = lasso_fit(X, y, mid, beta0=warm)
        warm = fit.coef
        count = int(np.count_nonzero(fit.coef))
        if best is None or (abs(count - n), -count) < (abs(np.count_nonzero(best.coef) - n),
                                                        -np.count_nonzero(best.coef)):
            best = fit
        if count == n:
            return fit
        if count > n:
            lo = mid
        else:
            hi = mid
    return LassoFit(best.coef, best.intercept, best.lam, exact=False)


def lasso_select(data, rows, n: int) -> FeatureSubset:
    rows = np.asarray(rows, dtype=np.intp)
    fit = lasso_search(data.features[rows], data.target[rows], n)
    active = np.flatnonzero(fit.coef)
    flags = () if fit.exact else (f"lasso support size {active.size} != requested {n}",)
    if active.size == 0:
        active = np.argsort(-np.abs(fit.coef), kind="stable")[:1]
    return FeatureSubset(active, ("lasso",), flags)


def top_n_by_score(scores, n: int, provenance=("kernelshap",)) -> FeatureSubset:
    s = _scores(scores)
    _check_n(n, s.shape[0])
    order = np.argsort(-s, kind="stable")
    return FeatureSubset(order[:n], provenance)


def complement(subset: FeatureSubset, n_features: int) -> FeatureSubset:
    if subset.indices[-1] >= n_features:
        raise SpecificationError("subset index out of range")
    rest = sorted(set(range(n_features)) - set(subset.indices))
    if not rest:
        raise SpecificationError("complement of the full feature set is empty")
    return FeatureSubset(rest, ("cross-check",))


def write_subsets_csv(subsets, names, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset", "feature_index", "feature_name", "provenance"])
        for s_id, sub in enumerate(subsets):
            for i in sub.indices:
                w.writerow([s_id, i, names[i], sub.label])
    return path

"""Integrated Gradients, KernelSHAP, and global importance scores.

Models only need ``forward(X)`` and ``input_gradient(X)`` over row batches,
which ``nn.Network`` provides.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AttributionError, ShapeError, SpecificationError

QUADRATURES = ("GaussLegendre", "Riemann")
AGGREGATIONS = ("MeanAbsolute", "MeanSigned")


@dataclass(frozen=True)
class IgConfig:
    baseline: np.ndarray | None = None
    n_steps: int = 50
    quadrature: str = "GaussLegendre"

    def __post_init__(self):
        if self.n_steps < 1:
            raise SpecificationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.quadrature not in QUADRATURES:
            raise SpecificationError(f"unknown quadrature {self.quadrature!r}")

    def baseline_for(self, n_features):
        if self.baseline is None:
            return np.zeros(n_features)
        b = np.asarray(self.baseline, dtype=np.float64).reshape(-1)
        if b.shape[0] != n_features:
            raise ShapeError(f"baseline has {b.shape[0]} entries, model expects {n_features}")
        return b


def quadrature_rule(n_steps: int, kind: str = "GaussLegendre"):
    """Nodes and weights on [0, 1]. Riemann uses interval midpoints."""
    if kind == "GaussLegendre":
        t, w = np.polynomial.legendre.leggauss(n_steps)
        return (t + 1.0) / 2.0, w / 2.0
    if kind == "Riemann":
        return (np.arange(n_steps) + 0.5) / n_steps, np.full(n_steps, 1.0 / n_steps)
    raise SpecificationError(f"unknown quadrature {kind!r}")


@dataclass(frozen=True)
class AttributionMatrix:
    values: np.ndarray
    method: str
    baseline_record: np.ndarray
    rows: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError("attribution values must be a 2-D matrix")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class GlobalImportance:
    scores: np.ndarray
    aggregation: str = "MeanAbsolute"

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64).reshape(-1)
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return self.scores.shape[0]


def _ig_rows(model, X, baseline, nodes, weights, first_row=0):
    n, d = X.shape
    diff = X - baseline
    # (n, steps, d) path points flattened into one gradient batch
    path = baseline + nodes[None, :, None] * diff[:, None, :]
    grads = np.asarray(model.input_gradient(path.reshape(-1, d))).reshape(n, len(nodes), d)
    avg = np.einsum("s,nsd->nd", weights, grads)
    out = diff * avg
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        r = int(np.flatnonzero(bad)[0]) + first_row
        raise AttributionError(f"non-finite gradient for sample {r}", sample=r)
    return out


def integrated_gradients(model, x, cfg: IgConfig = IgConfig()) -> np.ndarray:
    """Path-integrated gradients from ``cfg.baseline`` to ``x`` for one input."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.input_dim:
        raise ShapeError(f"expected {model.input_dim} inputs, got {x.shape[0]}")
    base = cfg.baseline_for(x.shape[0])
    nodes, weights = quadrature_rule(cfg.n_steps, cfg.quadrature)
    return _ig_rows(model, x[None, :], base, nodes, weights)[0]


def attribute_dataset(model, data, rows, cfg: IgConfig = IgConfig(),
                      chunk_points: int = 200_000) -> AttributionMatrix:
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise SpecificationError("no rows to attribute")
    X = np.asarray(data.features, dtype=np.float64)[rows]
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"expected {model.input_dim} inputs, got {X.shape[1]}")
    base = cfg.baseline_for(X.shape[1])
    nodes, weights = quadrature_rule(cfg.n_steps, cfg.quadrature)
    per_chunk = max(1, chunk_points // cfg.n_steps)
    out = np.empty_like(X)
    for s in range(0, X.shape[0], per_chunk):
        out[s:s + per_chunk] = _ig_rows(model, X[s:s + per_chunk], base, nodes, weights, s)
    return AttributionMatrix(out, "IG", base, rows)


def shapley_kernel_weight(m: int, s: int) -> float:
    return (m - 1) / (math.comb(m, s) * s * (m - s))


@dataclass(frozen=True)
class KernelShapResult:
    values: np.ndarray
    expected_value: float
    prediction: float
    ridge_fallback: bool = False
    n_coalitions: int = 0


def _coalition_values(model, x, background, masks, chunk_rows=100_000):
    """Mean model output with unmasked features from ``x``, the rest from background rows."""
    nb, d = background.shape
    out = np.empty(len(masks))
    per = max(1, chunk_rows // nb)
    for s in range(0, len(masks), per):
        m = masks[s:s + per].astype(bool)
        z = np.where(m[:, None, :], x[None, None, :], background[None, :, :])
        f = np.asarray(model.forward(z.reshape(-1, d))).reshape(len(m), nb)
        out[s:s + per] = f.mean(axis=1)
    return out


def _sample_coalitions(m, budget, rng):
    sizes = np.arange(1, m)
    p = (m - 1) / (sizes * (m - sizes))
    p = p / p.sum()
    counts: dict[bytes, int] = {}
    masks = []
    drawn = 0
    while drawn < budget:
        s = rng.choice(sizes, p=p)
        mask = np.zeros(m, dtype=np.uint8)
        mask[rng.choice(m, size=s, replace=False)] = 1
        for mk in (mask, 1 - mask):
            key = mk.tobytes()
            if key not in counts:
                counts[key] = 0
                masks.append(mk)
            counts[key] += 1
            drawn += 1
    masks = np.array(masks)
    weights = np.array([counts[mk.tobytes()] for mk in masks], dtype=np.float64)
    return masks, weights


def kernel_shap(model, x, background, budget="exhaustive", seed: int = 0,
                ridge: float = 1e-8) -> KernelShapResult:
    """Shapley values from the Shapley-kernel weighted regression.

    With ``budget="exhaustive"`` (or a budget covering all 2^M - 2 proper
    coalitions) the regression is solved over every coalition and reproduces
    exact Shapley values. Otherwise coalitions are sampled in complementary
    pairs with size probabilities proportional to the kernel mass.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    m = x.shape[0]
    if background.shape[0] == 0:
        raise SpecificationError("background set is empty")
    if background.shape[1] != m:
        raise ShapeError(f"background has {background.shape[1]} columns, x has {m}")
    if m == 1:
        base = float(np.mean(model.forward(background)))
        fx = float(model.forward(x[None, :])[0])
        return KernelShapResult(np.array([fx - base]), base, fx, False, 0)

    n_proper = 2 ** m - 2 if m < 63 else math.inf
    if budget == "exhaustive" or (not isinstance(budget, str) and budget >= n_proper):
        if m > 20:
            raise SpecificationError(f"exhaustive enumeration over {m} features is infeasible")
        masks = np.array([[(c >> j) & 1 for j in range(m)] for c in range(1, 2 ** m - 1)],
                         dtype=np.uint8)
        weights = np.array([shapley_kernel_weight(m, int(k.sum())) for k in masks])
    else:
        if budget < m + 2:
            raise SpecificationError(f"budget must be >= n_features + 2 ({m + 2}), got {budget}")
        masks, weights = _sample_coalitions(m, int(budget), np.random.default_rng(seed))

    base = float(np.mean(model.forward(background)))
    fx = float(model.forward(x[None, :])[0])
    total = fx - base
    y = _coalition_values(model, x, background, masks) - base

    # sum(phi) = total is enforced by eliminating the last coordinate
    Z = masks.astype(np.float64)
    A = Z[:, :-1] - Z[:, -1:]
    b = y - Z[:, -1] * total
    sw = np.sqrt(weights)
    Aw, bw = A * sw[:, None], b * sw
    AtA, Atb = Aw.T @ Aw, Aw.T @ bw
    fallback = False
    try:
        cond = np.linalg.cond(AtA)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(f"ill-conditioned ({cond:.3g})")
        head = np.linalg.solve(AtA, Atb)
    except np.linalg.LinAlgError as exc:
        warnings.warn(f"KernelSHAP regression singular, using ridge solve: {exc}", RuntimeWarning)
        fallback = True
        k = AtA.shape[0]
        lam = ridge * (np.trace(AtA) / k + 1.0)
        head = np.linalg.solve(AtA + lam * np.eye(k), Atb)
    phi = np.append(head, total - head.sum())
    return KernelShapResult(phi, base, fx, fallback, len(masks))


def attribute_dataset_shap(model, data, rows, background, budget=2048, seed=0) -> AttributionMatrix:
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise SpecificationError("no rows to attribute")
    X = np.asarray(data.features, dtype=np.float64)[rows]
    out = np.empty_like(X)
    for r, x in enumerate(X):
        res = kernel_shap(model, x, background, budget, seed=seed + r)
        if not np.all(np.isfinite(res.values)):
            raise AttributionError(f"non-finite KernelSHAP value for sample {rows[r]}",
                                   sample=int(rows[r]))
        out[r] = res.values
    return AttributionMatrix(out, "KernelSHAP", np.atleast_2d(background), rows)


def aggregate(attr: AttributionMatrix, mode: str = "MeanAbsolute") -> GlobalImportance:
    v = attr.values if isinstance(attr, AttributionMatrix) else np.atleast_2d(attr)
    if v.shape[0] == 0 or v.shape[1] == 0:
        raise SpecificationError("cannot aggregate an empty attribution matrix")
    if mode == "MeanAbsolute":
        scores = np.abs(v).mean(axis=0)
    elif mode == "MeanSigned":
        scores = np.abs(v.mean(axis=0))
    else:
        raise SpecificationError(f"unknown aggregation {mode!r}")
    return GlobalImportance(scores, mode)


def scale_to_range(scores, lo: float, hi: float) -> np.ndarray:
    """Min-max map onto [lo, hi]."""
    s = scores.scores if isinstance(scores, GlobalImportance) else np.asarray(scores, dtype=np.float64)
    if not hi > lo:
        raise SpecificationError(f"need hi > lo, got [{lo}, {hi}]")
    smin, smax = s.min(), s.max()
    if smax == smin:
        raise SpecificationError("all scores are equal; min-max scaling is undefined")
    return lo + (s - smin) * (hi - lo) / (smax - smin)


def write_importance_csv(importance: GlobalImportance, names, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "score"])
        for name, s in zip(names, importance.scores):
            w.writerow([name, f"{s:.12g}"])
    return path


def write_attribution_csv(attr: AttributionMatrix, names, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", *names])
        rows = attr.rows if attr.rows is not None else range(attr.values.shape[0])
        for r, vals in zip(rows, attr.values):
            w.writerow([int(r), *(f"{v:.12g}" for v in vals)])
    return path

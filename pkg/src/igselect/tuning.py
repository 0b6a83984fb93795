"""Surrogate-based hyperparameter tuning and k-fold cross-validation.

The loop follows the usual sequential design pattern: a Latin hypercube
initial design is evaluated, a Gaussian-process surrogate is fitted to all
observations, the expected-improvement maximizer on the surrogate is
evaluated next, and the loop repeats until the infill budget is spent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, stats
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import qmc

from . import nn
from .data import Dataset, SplitPlan, split
from .errors import SpecificationError, SurrogateError, TrainingError
from .seeding import derive_seed
from .selection import FeatureSubset


@dataclass(frozen=True)
class NumericParam:
    name: str
    lower: float
    upper: float
    integer: bool = False
    transform: str | None = None  # "pow2": the value is an exponent of 2

    def snap(self, v: float):
        v = min(max(v, self.lower), self.upper)
        return int(round(v)) if self.integer else float(v)

    def from_unit(self, u: float):
        if self.integer:
            n = int(self.upper - self.lower + 1)
            return int(self.lower + min(int(math.floor(u * n)), n - 1))
        return float(self.lower + u * (self.upper - self.lower))

    def to_unit(self, v) -> float:
        if self.upper == self.lower:
            return 0.0
        return (float(v) - self.lower) / (self.upper - self.lower)

    def materialize(self, v):
        return 2 ** int(v) if self.transform == "pow2" else v


@dataclass(frozen=True)
class CategoricalParam:
    name: str
    levels: tuple[str, ...]

    def from_unit(self, u: float):
        return self.levels[min(int(math.floor(u * len(self.levels))), len(self.levels) - 1)]

    def materialize(self, v):
        return v


@dataclass(frozen=True)
class SearchSpace:
    params: tuple

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def numeric(self) -> list[NumericParam]:
        return [p for p in self.params if isinstance(p, NumericParam)]

    @property
    def categorical(self) -> list[CategoricalParam]:
        return [p for p in self.params if isinstance(p, CategoricalParam)]

    def __getitem__(self, name):
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def from_unit(self, u) -> dict:
        return {p.name: p.from_unit(float(x)) for p, x in zip(self.params, u)}

    def encode(self, point: dict) -> np.ndarray:
        """Numeric parameters scaled to [0, 1]; categorical ones one-hot."""
        out = [p.to_unit(point[p.name]) for p in self.numeric]
        for p in self.categorical:
            out.extend(1.0 if point[p.name] == lev else 0.0 for lev in p.levels)
        return np.array(out, dtype=np.float64)

    def encode_many(self, points) -> np.ndarray:
        return np.array([self.encode(p) for p in points]).reshape(len(points), -1)

    def contains(self, point: dict) -> bool:
        for p in self.params:
            v = point.get(p.name)
            if isinstance(p, CategoricalParam):
                if v not in p.levels:
                    return False
            else:
                if v is None or not p.lower <= v <= p.upper:
                    return False
                if p.integer and int(v) != v:
                    return False
        return set(point) == set(self.names)

    def materialize(self, point: dict) -> dict:
        return {p.name: p.materialize(point[p.name]) for p in self.params}

    def random_points(self, n, rng) -> list[dict]:
        return [self.from_unit(u) for u in rng.random((n, len(self.params)))]


def full_space() -> SearchSpace:
    return SearchSpace((
        NumericParam("l1", 5, 9, True, "pow2"),
        NumericParam("epochs", 5, 10, True, "pow2"),
        NumericParam("batch_size", 3, 6, True, "pow2"),
        NumericParam("dropout_prob", 0.005, 0.25),
        NumericParam("lr_mult", 0.25, 5.0),
        NumericParam("patience", 3, 5, True, "pow2"),
        CategoricalParam("optimizer", ("Adadelta", "Adamax", "Adagrad")),
        CategoricalParam("act_fn", ("ReLU", "LeakyReLU")),
    ))


def desk_space() -> SearchSpace:
    """Full space with the expensive axes capped for CI-sized runs."""
    return SearchSpace((
        NumericParam("l1", 5, 7, True, "pow2"),
        NumericParam("epochs", 5, 7, True, "pow2"),
        NumericParam("batch_size", 4, 6, True, "pow2"),
        NumericParam("dropout_prob", 0.005, 0.25),
        NumericParam("lr_mult", 0.25, 5.0),
        NumericParam("patience", 3, 4, True, "pow2"),
        CategoricalParam("optimizer", ("Adadelta", "Adamax", "Adagrad")),
        CategoricalParam("act_fn", ("ReLU", "LeakyReLU")),
    ))


def network_settings(space: SearchSpace, point: dict, input_dim: int, seed: int,
                     validation_fraction: float = 0.2):
    """Turn a tuning point into (Architecture, TrainConfig); 2^x applied here only."""
    v = space.materialize(point)
    arch = nn.Architecture(input_dim, int(v["l1"]), v["act_fn"], float(v["dropout_prob"]))
    cfg = nn.TrainConfig(epochs=int(v["epochs"]), batch_size=int(v["batch_size"]),
                         optimizer=v["optimizer"], lr_mult=float(v["lr_mult"]),
                         patience=int(v["patience"]), seed=seed,
                         validation_fraction=validation_fraction)
    return arch, cfg


def initial_design(space: SearchSpace, size: int, seed: int) -> list[dict]:
    if size < 2:
        raise SpecificationError(f"initial design needs >= 2 points, got {size}")
    u = qmc.LatinHypercube(d=len(space.params), seed=np.random.default_rng(seed)).random(size)
    return [space.from_unit(row) for row in u]


class GaussianProcess:
    """Ordinary kriging with k(a, b) = exp(-sum_j theta_j (a_j - b_j)^2).

    ``log10 theta`` is fitted by maximizing the concentrated likelihood with
    bounded Nelder-Mead from several starts.
    """

    def __init__(self, jitter: float = 1e-10, n_restarts: int = 8,
                 log_theta_bounds=(-3.0, 2.0), seed: int = 0):
        self.jitter = jitter
        self.n_restarts = n_restarts
        self.bounds = log_theta_bounds
        self.seed = seed

    def _corr(self, A, B, theta):
        d = A[:, None, :] - B[None, :, :]
        return np.exp(-np.einsum("ijk,k->ij", d * d, theta))

    def _factor(self, theta):
        R = np.exp(-self._sqdiff @ theta)
        jitter = self.jitter
        while jitter <= 1e-4:
            try:
                return cho_factor(R + jitter * self._eye, lower=True, check_finite=False), jitter
            except np.linalg.LinAlgError:
                jitter *= 10
        raise SurrogateError("correlation matrix is singular even with jitter 1e-4")

    def _concentrated(self, theta):
        chol, jitter = self._factor(theta)
        n = len(self.y)
        # one solve for both right-hand sides; R^-1 (y - mu) follows by linearity
        Ri_y, Ri_1 = cho_solve(chol, self._rhs, check_finite=False).T
        mu = float(Ri_y.sum() / Ri_1.sum())
        resid = self.y - mu
        Ri_r = Ri_y - mu * Ri_1
        sigma2 = max(float(resid @ Ri_r) / n, 1e-300)
        logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
        nll = 0.5 * n * math.log(sigma2) + 0.5 * logdet
        return nll, mu, sigma2, chol, Ri_r, Ri_1, jitter

    def fit(self, X, y) -> "GaussianProcess":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.shape[0] < 2:
            raise SurrogateError("need at least two observations to fit the surrogate")
        self.X = X
        diff = X[:, None, :] - X[None, :, :]
        self._sqdiff = diff * diff
        self.y_shift = float(y.mean())
        self.y_scale = float(y.std()) or 1.0
        self.y = (y - self.y_shift) / self.y_scale
        self._eye = np.eye(len(y))
        self._rhs = np.column_stack([self.y, np.ones(len(y))])
        d = X.shape[1]
        self.constant = bool(np.ptp(y) == 0)
        if self.constant:
            self.log_theta = np.zeros(d)
        else:
            rng = np.random.default_rng(self.seed)
            lo, hi = self.bounds

            def nll(p):
                try:
                    return self._concentrated(10.0 ** p)[0]
                except SurrogateError:
                    return 1e10

            starts = [np.zeros(d)] + [rng.uniform(lo, hi, d) for _ in range(self.n_restarts - 1)]
            best = None
            for s in starts:
                res = optimize.minimize(nll, s, method="Nelder-Mead", bounds=[self.bounds] * d,
                                        options={"maxiter": 60 * d + 100, "xatol": 1e-2, "fatol": 1e-4})
                if best is None or res.fun < best.fun:
                    best = res
            self.log_theta = np.clip(best.x, lo, hi)
        self.theta = 10.0 ** self.log_theta
        (_, self.mu, self.sigma2, self.chol, self.Ri_r, self.Ri_1, self.used_jitter) = \
            self._concentrated(self.theta) if not self.constant else self._constant_state()
        return self

    def _constant_state(self):
        n = len(self.y)
        return (0.0, 0.0, 0.0, None, np.zeros(n), np.zeros(n), self.jitter)

    def predict(self, Xq, return_std: bool = True):
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        if self.constant:
            mean = np.full(Xq.shape[0], self.y_shift)
            return (mean, np.zeros(Xq.shape[0])) if return_std else mean
        r = self._corr(Xq, self.X, self.theta)
        # the jitter is a white-noise term in the kernel, so it also applies to
        # a query that coincides with a training point; this keeps interpolation exact
        same = np.all(Xq[:, None, :] == self.X[None, :, :], axis=2)
        r = r + self.used_jitter * same
        mean = self.mu + r @ self.Ri_r
        if not return_std:
            return mean * self.y_scale + self.y_shift
        Ri_rT = cho_solve(self.chol, r.T)
        ones = np.ones(self.X.shape[0])
        u = 1.0 - ones @ Ri_rT
        var = self.sigma2 * (1.0 + self.used_jitter * same.any(axis=1) - np.einsum("ij,ji->i", r, Ri_rT) + u * u / (ones @ self.Ri_1))
        std = np.sqrt(np.maximum(var, 0.0))
        return mean * self.y_scale + self.y_shift, std * self.y_scale

    def describe(self) -> dict:
        return {"kernel": "anisotropic squared exponential", "theta": self.theta.tolist(),
                "mean": self.mu * self.y_scale + self.y_shift,
                "process_variance": self.sigma2 * self.y_scale ** 2, "jitter": self.used_jitter}


def fit_surrogate(observations, space: SearchSpace | None = None, seed: int = 0,
                  jitter: float = 1e-10) -> "SurrogateState":
    """Fit the GP to (point, value) pairs; non-finite values are imputed with the worst finite one."""
    if len(observations) < 2:
        raise SurrogateError("need at least two observations")
    pts = [p for p, _ in observations]
    y = np.array([v for _, v in observations], dtype=np.float64)
    finite = np.isfinite(y)
    if not finite.any():
        raise SurrogateError("no finite observations to fit")
    y = np.where(finite, y, y[finite].max())
    X = space.encode_many(pts) if space is not None else np.atleast_2d(np.array(pts, dtype=float))
    gp = GaussianProcess(jitter=jitter, seed=seed).fit(X, y)
    return SurrogateState(gp, pts, y, space)


@dataclass
class SurrogateState:
    gp: GaussianProcess
    points: list
    values: np.ndarray
    space: SearchSpace | None

    def predict(self, points):
        return self.gp.predict(self.space.encode_many(points))


def expected_improvement(mean, std, best):
    mean, std = np.asarray(mean), np.asarray(std)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (best - mean) / std
        ei = (best - mean) * stats.norm.cdf(z) + std * stats.norm.pdf(z)
    return np.where(std > 1e-12, np.maximum(ei, 0.0), 0.0)


def _key(point):
    return tuple(sorted((k, round(v, 12) if isinstance(v, float) else v) for k, v in point.items()))


def _perturb(space, point, scale, rng):
    new = dict(point)
    for p in space.params:
        if isinstance(p, CategoricalParam):
            if rng.random() < scale:
                new[p.name] = p.levels[rng.integers(len(p.levels))]
        else:
            step = rng.normal(0.0, scale) * (p.upper - p.lower)
            new[p.name] = p.snap(new[p.name] + step)
    return new


def propose_next(state: SurrogateState, space: SearchSpace, seed: int,
                 n_candidates: int = 2000, n_refine: int = 5, refine_steps: int = 60) -> dict:
    """Maximize expected improvement over random candidates, then refine locally.

    Returns a feasible point not among the already evaluated ones. When the
    surrogate has no posterior variance anywhere, a random feasible point is
    returned instead.
    """
    rng = np.random.default_rng(seed)
    seen = {_key(p) for p in state.points}
    best_y = float(np.min(state.values))

    def score(points):
        mean, std = state.predict(points)
        return expected_improvement(mean, std, best_y)

    cands = [p for p in space.random_points(n_candidates, rng) if _key(p) not in seen]
    while not cands:
        cands = [p for p in (_perturb(space, q, 0.3, rng) for q in state.points)
                 if _key(p) not in seen]
    ei = score(cands)
    if not np.any(ei > 0):
        return cands[0]

    top = np.argsort(-ei, kind="stable")[:n_refine]
    best_p, best_ei = cands[top[0]], ei[top[0]]
    for i in top:
        cur, cur_ei = cands[i], ei[i]
        scale = 0.1
        for _ in range(refine_steps):
            trial = _perturb(space, cur, scale, rng)
            if _key(trial) in seen:
                continue
            t_ei = score([trial])[0]
            if t_ei > cur_ei:
                cur, cur_ei = trial, t_ei
            else:
                scale = max(scale * 0.9, 1e-3)
        if cur_ei > best_ei:
            best_p, best_ei = cur, cur_ei
    return best_p


@dataclass(frozen=True)
class CvReport:
    fold_mses: tuple[float, ...]
    mean_mse: float
    sd_mse: float
    flags: tuple[str, ...] = ()
    test_mse: float | None = None

    @classmethod
    def from_folds(cls, fold_mses, flags=(), test_mse=None) -> "CvReport":
        f = np.array(fold_mses, dtype=np.float64)
        ok = f[np.isfinite(f)]
        if ok.size == 0:
            mean, sd = math.inf, math.nan
        else:
            mean = float(np.mean(ok))
            sd = float(np.std(ok, ddof=1)) if ok.size > 1 else 0.0
        return cls(tuple(float(v) for v in f), mean, sd, tuple(flags), test_mse)


def _feature_view(data: Dataset, subset: FeatureSubset | None) -> Dataset:
    if subset is None or len(subset) == data.n_features:
        return data
    return data.columns(subset.indices)


def cross_validate(data: Dataset, subset: FeatureSubset | None, point: dict, plan: SplitPlan,
                   space: SearchSpace | None = None, seed: int | None = None,
                   with_test: bool = False) -> CvReport:
    """Train on all folds but one, score the held-out fold, for every fold."""
    space = space or full_space()
    view = _feature_view(data, subset)
    sp = split(data, plan)
    seed = plan.seed if seed is None else seed
    mses, flags = [], []
    for i, held in enumerate(sp.folds):
        train_rows = np.concatenate([f for j, f in enumerate(sp.folds) if j != i])
        fold_seed = derive_seed(seed, "fold", i)
        arch, cfg = network_settings(space, point, view.n_features, fold_seed)
        try:
            model = nn.train(nn.build(arch, derive_seed(fold_seed, "init")), view, train_rows, cfg)
            mses.append(nn.evaluate_mse(model, view, held))
        except TrainingError as exc:
            mses.append(math.nan)
            flags.append(f"fold {i + 1} diverged: {exc}")
    test_mse = None
    if with_test and sp.test.size:
        t_seed = derive_seed(seed, "test")
        arch, cfg = network_settings(space, point, view.n_features, t_seed)
        try:
            model = nn.train(nn.build(arch, derive_seed(t_seed, "init")), view, sp.train, cfg)
            test_mse = nn.evaluate_mse(model, view, sp.test)
        except TrainingError as exc:
            flags.append(f"test-split training diverged: {exc}")
    return CvReport.from_folds(mses, flags, test_mse)


def holdout_objective(data: Dataset, subset, point, plan: SplitPlan, space, seed) -> float:
    """Cheaper objective: train on folds 2..k, score fold 1."""
    view = _feature_view(data, subset)
    sp = split(data, plan)
    train_rows = np.concatenate(sp.folds[1:])
    arch, cfg = network_settings(space, point, view.n_features, seed)
    model = nn.train(nn.build(arch, derive_seed(seed, "init")), view, train_rows, cfg)
    return nn.evaluate_mse(model, view, sp.folds[0])


@dataclass
class Observation:
    point: dict
    value: float
    phase: str
    cv: CvReport | None = None
    error: str | None = None


@dataclass
class TuningRun:
    space: SearchSpace
    design: list[dict]
    observations: list[Observation] = field(default_factory=list)
    surrogate_state: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([o.value for o in self.observations])

    @property
    def best_index(self) -> int:
        v = np.where(np.isfinite(self.values), self.values, np.inf)
        return int(np.argmin(v))

    @property
    def best(self) -> dict:
        return self.observations[self.best_index].point

    @property
    def best_value(self) -> float:
        return float(self.observations[self.best_index].value)

    def incumbent_trace(self) -> np.ndarray:
        v = np.where(np.isfinite(self.values), self.values, np.inf)
        return np.minimum.accumulate(v)


def tune(data: Dataset | None, subset: FeatureSubset | None, space: SearchSpace,
         budget=(10, 30), seed: int = 0, plan: SplitPlan = SplitPlan(),
         objective: Callable[[dict], float] | str = "cv") -> TuningRun:
    """Run the full design/evaluate/fit/propose loop.

    ``objective`` is ``"cv"`` (mean 5-fold MSE), ``"holdout"`` (one fold held
    out), or any callable mapping a point to a value. Failed evaluations are
    recorded as +inf.
    """
    n_init, n_infill = budget
    if n_init < 2:
        raise SpecificationError(f"initial budget must be >= 2, got {n_init}")

    def evaluate(point, i) -> Observation:
        eval_seed = derive_seed(seed, "eval", i)
        try:
            if callable(objective):
                return Observation(point, float(objective(point)), "")
            if objective == "cv":
                rep = cross_validate(data, subset, point, plan, space, eval_seed)
                return Observation(point, rep.mean_mse, "", rep)
            if objective == "holdout":
                return Observation(point, holdout_objective(data, subset, point, plan, space,
                                                           eval_seed), "")
            raise SpecificationError(f"unknown objective {objective!r}")
        except (TrainingError, FloatingPointError, ValueError) as exc:
            if isinstance(exc, SpecificationError):
                raise
            return Observation(point, math.inf, "", error=str(exc))

    design = initial_design(space, n_init, derive_seed(seed, "design"))
    run = TuningRun(space, design)
    for i, p in enumerate(design):
        obs = evaluate(p, i)
        obs.phase = "initial"
        run.observations.append(obs)

    for it in range(n_infill):
        obs_pairs = [(o.point, o.value) for o in run.observations]
        try:
            state = fit_surrogate(obs_pairs, space, seed=derive_seed(seed, "gp", it))
            point = propose_next(state, space, derive_seed(seed, "propose", it))
            run.surrogate_state = state.gp.describe()
        except SurrogateError as exc:
            run.surrogate_state = {"error": str(exc)}
            seen = {_key(o.point) for o in run.observations}
            rng = np.random.default_rng(derive_seed(seed, "fallback", it))
            point = next(p for p in iter(lambda: space.random_points(1, rng)[0], None)
                         if _key(p) not in seen)
        obs = evaluate(point, n_init + it)
        obs.phase = "infill"
        run.observations.append(obs)
    return run


def write_tuning_csv(run: TuningRun, path) -> Path:
    path = Path(path)
    n_folds = max((len(o.cv.fold_mses) for o in run.observations if o.cv), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eval", "phase", *run.space.names,
                    *[f"fold_{i + 1}_mse" for i in range(n_folds)], "objective", "mean_mse", "sd_mse"])
        for i, o in enumerate(run.observations):
            m = run.space.materialize(o.point)
            folds = [f"{v:.10g}" for v in o.cv.fold_mses] if o.cv else [""] * n_folds
            w.writerow([i, o.phase, *[_fmt(m[n]) for n in run.space.names], *folds,
                        _fmt(o.value),
                        _fmt(o.cv.mean_mse) if o.cv else "", _fmt(o.cv.sd_mse) if o.cv else ""])
    summary = {"best_index": run.best_index, "best_point": run.best,
               "best_materialized": run.space.materialize(run.best),
               "best_value": run.best_value, "surrogate": run.surrogate_state}
    path.with_suffix(".best.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)

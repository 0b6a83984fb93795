"""Pipeline configuration: a flat YAML mapping with two built-in presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from ..data import DummySpec, SplitPlan
from ..errors import ConfigError
from ..tuning import desk_space, full_space

SELECTORS = ("cross-check", "pearson", "lasso", "kernelshap")


@dataclass(frozen=True)
class PipelineConfig:
    profile: str = "desk"
    data_source: str = "dummy"
    target_column: str = "target"
    categorical_columns: tuple[str, ...] = ()
    n_features: int = 86
    n_positive: int = 29
    n_negative: int = 29
    n_zero: int = 28
    positive_range: tuple[float, float] = (0.1, 1.0)
    negative_range: tuple[float, float] = (-1.0, -0.1)
    n_samples: int = 2000
    train_fraction: float = 0.7
    n_folds: int = 5
    scale_target: bool = False
    ig_steps: int = 50
    ig_quadrature: str = "GaussLegendre"
    ig_rows: str = "train"
    aggregation: str = "MeanAbsolute"
    k_values: tuple[int, ...] = tuple(range(2, 11))
    budget_initial: int = 5
    budget_infill: int = 10
    search_space: str = "desk"
    objective: str = "holdout"
    selectors: tuple[str, ...] = SELECTORS
    shap_budget: int = 512
    shap_background: int = 10
    shap_samples: int = 20
    run_validation: bool = False
    workers: int = 1
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        for name in ("categorical_columns", "k_values", "selectors",
                     "positive_range", "negative_range"):
            v = getattr(self, name)
            object.__setattr__(self, name, tuple(v) if not isinstance(v, str) else (v,))
        self.validate()

    def validate(self):
        if self.profile not in ("desk", "full"):
            raise ConfigError(f"profile must be 'desk' or 'full', got {self.profile!r}")
        if not self.k_values:
            raise ConfigError("k_values must not be empty")
        if any(int(k) != k or k < 2 for k in self.k_values):
            raise ConfigError(f"every k must be an integer >= 2, got {list(self.k_values)}")
        if self.budget_initial < 2 or self.budget_infill < 0:
            raise ConfigError("budget_initial must be >= 2 and budget_infill >= 0")
        if self.search_space not in ("desk", "full"):
            raise ConfigError(f"search_space must be 'desk' or 'full', got {self.search_space!r}")
        if self.objective not in ("cv", "holdout"):
            raise ConfigError(f"objective must be 'cv' or 'holdout', got {self.objective!r}")
        if self.ig_rows not in ("train", "all"):
            raise ConfigError(f"ig_rows must be 'train' or 'all', got {self.ig_rows!r}")
        if self.aggregation not in ("MeanAbsolute", "MeanSigned"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.ig_quadrature not in ("GaussLegendre", "Riemann"):
            raise ConfigError(f"unknown quadrature {self.ig_quadrature!r}")
        bad = set(self.selectors) - set(SELECTORS)
        if bad:
            raise ConfigError(f"unknown selectors {sorted(bad)}; choose from {SELECTORS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.split_plan.validate()
            if self.data_source == "dummy":
                self.dummy_spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def dummy_spec(self) -> DummySpec:
        from ..seeding import derive_seed
        return DummySpec(self.n_features, self.n_positive, self.n_negative, self.n_zero,
                         tuple(self.positive_range), tuple(self.negative_range),
                         self.n_samples, derive_seed(self.seed, "dummy"))

    @property
    def split_plan(self) -> SplitPlan:
        from ..seeding import derive_seed
        return SplitPlan(self.train_fraction, self.n_folds, derive_seed(self.seed, "split"))

    @property
    def space(self):
        return desk_space() if self.search_space == "desk" else full_space()

    @property
    def budget(self) -> tuple[int, int]:
        return (self.budget_initial, self.budget_infill)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


PRESETS = {
    "desk": {},
    "full": dict(profile="full", n_samples=27857, budget_initial=10, budget_infill=30,
                 search_space="full", objective="cv", shap_budget=2048,
                 shap_background=100, shap_samples=100),
}


def preset(profile: str) -> PipelineConfig:
    if profile not in PRESETS:
        raise ConfigError(f"unknown profile {profile!r}")
    return PipelineConfig(**PRESETS[profile])


def load_config(path=None, profile: str | None = None, **overrides) -> PipelineConfig:
    """Preset values, then the file's keys, then explicit overrides."""
    values: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a key-value mapping at top level")
        known = {f.name for f in fields(PipelineConfig)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
        nested = [k for k, v in raw.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: nested mappings are not allowed ({nested})")
        values.update(raw)
    prof = profile or values.get("profile", "desk")
    base = dict(PRESETS.get(prof, {}))
    if prof not in PRESETS:
        raise ConfigError(f"unknown profile {prof!r}")
    base.update(values)
    base["profile"] = prof
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
    return path

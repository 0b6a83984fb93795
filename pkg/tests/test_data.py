import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igselect.data import (Dataset, DummySpec, SplitPlan, clean, fit_scaler, generate_dummy,
                           inverse_transform, no_nan, ordinal_encode, read_csv,
                           read_ground_truth, split, transform, write_csv, write_ground_truth,
                           OrdinalEncoder)
from igselect.errors import EncodingError, ShapeError, SpecificationError

from oracles import two_pass_mean_std


def small(X, y=None):
    X = np.asarray(X, dtype=float)
    y = np.zeros(X.shape[0]) if y is None else y
    return Dataset(X, y, [f"c{i}" for i in range(X.shape[1])])


class TestDataset:
    def test_row_count_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros(2), ["a", "b"])

    def test_name_count_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros(3), ["a"])

    def test_immutable(self):
        ds = small(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0


class TestGenerateDummy:
    def test_full_shape(self):
        ds, truth = generate_dummy(DummySpec())
        assert ds.features.shape == (27857, 86)
        assert len(truth.zero_indices) == 28

    def test_all_zero_coefficients(self):
        ds, truth = generate_dummy(DummySpec(5, 0, 0, 5, n_samples=50, seed=3))
        assert np.all(ds.target == 0.0)
        assert truth.zero_indices == frozenset(range(5))

    def test_three_feature_recompute(self):
        ds, truth = generate_dummy(DummySpec(3, 1, 1, 1, n_samples=40, seed=7))
        w = truth.coefficients
        direct = [sum(w[i] * row[i] for i in range(3)) for row in ds.features]
        np.testing.assert_allclose(ds.target, direct, rtol=0, atol=1e-15)
        assert 0.1 <= w[0] <= 1.0 and -1.0 <= w[1] <= -0.1 and w[2] == 0.0

    def test_coefficient_layout(self):
        _, truth = generate_dummy(DummySpec(n_samples=10, seed=1))
        c = truth.coefficients
        assert np.all((c[:29] >= 0.1) & (c[:29] <= 1.0))
        assert np.all((c[29:58] >= -1.0) & (c[29:58] <= -0.1))
        assert np.all(c[58:] == 0.0)

    def test_feature_values_unit_interval(self):
        ds, _ = generate_dummy(DummySpec(n_samples=500, seed=2))
        assert ds.features.min() >= 0.0 and ds.features.max() < 1.0

    @pytest.mark.parametrize("kw", [dict(n_zero=27), dict(positive_range=(0.0, 1.0)),
                                    dict(negative_range=(-1.0, 0.0)), dict(n_positive=-1, n_zero=30)])
    def test_invalid_specs(self, kw):
        with pytest.raises(SpecificationError):
            generate_dummy(DummySpec(n_samples=5, **kw))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60))
    def test_determinism_and_linearity(self, seed, n):
        spec = DummySpec(n_samples=n, seed=seed)
        a, ta = generate_dummy(spec)
        b, tb = generate_dummy(spec)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.target.tobytes() == b.target.tobytes()
        assert ta.coefficients.tobytes() == tb.coefficients.tobytes()
        recomputed = np.array([math.fsum(w * x for w, x in zip(ta.coefficients, row))
                               for row in a.features])
        assert np.all(np.abs(a.target - recomputed) <= 1e-12 * np.maximum(1, np.abs(a.target)))


class TestScaler:
    def test_two_point(self):
        sc = fit_scaler(small([[1.0], [3.0]]), [0, 1])
        assert sc.means[0] == 2.0 and sc.stds[0] == 1.0

    def test_already_standardized(self):
        col = np.array([-1.0, 1.0, -1.0, 1.0])
        sc = fit_scaler(small(col[:, None]), range(4))
        assert abs(sc.means[0]) <= 1e-12 and abs(sc.stds[0] - 1) <= 1e-12

    def test_matches_two_pass(self):
        X = np.random.default_rng(0).normal(3.0, 2.0, size=(100, 5))
        sc = fit_scaler(small(X), range(100))
        mean, std = two_pass_mean_std(X)
        np.testing.assert_allclose(sc.means, mean, atol=1e-12)
        np.testing.assert_allclose(sc.stds, std, atol=1e-12)

    def test_empty_rows(self):
        with pytest.raises(SpecificationError):
            fit_scaler(small(np.ones((3, 2))), [])

    def test_constant_column_uses_unit_std(self):
        X = np.column_stack([np.full(4, 7.0), np.arange(4.0)])
        sc = fit_scaler(small(X), range(4))
        assert sc.stds[0] == 1.0
        assert np.all(transform(sc, small(X)).features[:, 0] == 0.0)

    def test_transform_points(self):
        X = np.array([[1.0], [3.0], [2.0], [4.0]])
        sc = fit_scaler(small(X), [0, 1])
        out = transform(sc, small(X)).features[:, 0]
        assert out[2] == 0.0 and out[1] == 1.0

    def test_transformed_block_is_standard(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-5, 9, size=(300, 4))
        rows = np.arange(200)
        Z = transform(fit_scaler(small(X), rows), small(X)).features[rows]
        mean, std = two_pass_mean_std(Z)
        np.testing.assert_allclose(mean, 0, atol=1e-10)
        np.testing.assert_allclose(std, 1, atol=1e-10)

    def test_column_mismatch(self):
        sc = fit_scaler(small(np.ones((3, 2))), range(3))
        with pytest.raises(ShapeError):
            transform(sc, small(np.ones((3, 3))))

    def test_target_scaling_flag(self):
        X = np.arange(6.0).reshape(3, 2)
        ds = small(X, np.array([1.0, 2.0, 3.0]))
        sc = fit_scaler(ds, range(3))
        assert np.array_equal(transform(sc, ds).target, ds.target)
        scaled = transform(sc, ds, scale_target=True).target
        np.testing.assert_allclose(scaled.mean(), 0, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
    def test_round_trip(self, seed, scale):
        X = np.random.default_rng(seed).normal(0, scale, size=(20, 3)) + scale
        ds = small(X, X[:, 0])
        sc = fit_scaler(ds, range(14))
        back = inverse_transform(sc, transform(sc, ds, True), True)
        assert np.all(np.abs(back.features - X) <= 1e-10 * np.maximum(1, np.abs(X)))
        assert np.all(np.abs(back.target - ds.target) <= 1e-10 * np.maximum(1, np.abs(ds.target)))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), value=st.floats(-1e6, 1e6))
    def test_no_leakage(self, seed, value):
        X = np.random.default_rng(seed).normal(size=(30, 3))
        train = np.arange(20)
        a = fit_scaler(small(X), train)
        X2 = X.copy()
        X2[25] = value
        b = fit_scaler(small(X2), train)
        assert a.means.tobytes() == b.means.tobytes() and a.stds.tobytes() == b.stds.tobytes()


class TestOrdinalEncode:
    def labels(self, col):
        X = np.array([[v, i] for i, v in enumerate(col)], dtype=object)
        return Dataset(X, np.zeros(len(col)), ["cat", "num"], {0})

    def test_lexicographic(self):
        out = ordinal_encode(self.labels(["b", "a", "b"]), {0})
        assert list(out.features[:, 0]) == [1, 0, 1]
        assert out.features.dtype == np.float64

    def test_single_label(self):
        out = ordinal_encode(self.labels(["z"] * 4), {0})
        assert np.all(out.features[:, 0] == 0)

    def test_cardinality(self):
        col = ["red", "green", "blue", "red", "blue", "green", "red", "red", "blue", "green"]
        out = ordinal_encode(self.labels(col), {0})
        assert set(out.features[:, 0]) == {0.0, 1.0, 2.0}

    def test_unseen_label(self):
        enc = OrdinalEncoder().fit(self.labels(["a", "b"]), [0])
        with pytest.raises(EncodingError):
            enc.transform(self.labels(["a", "c"]))


class TestSplit:
    def test_sizes(self):
        sp = split(10, SplitPlan(0.7, 5, seed=3))
        assert len(sp.train) == 7 and len(sp.test) == 3
        assert sorted(len(f) for f in sp.folds) == [1, 1, 1, 2, 2]

    def test_deterministic(self):
        a, b = split(50, SplitPlan(seed=11)), split(50, SplitPlan(seed=11))
        assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)
        assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))

    def test_partition_n1000(self):
        sp = split(1000, SplitPlan(seed=5))
        union = set().union(*map(set, sp.folds))
        assert union == set(sp.train.tolist())
        for i, a in enumerate(sp.folds):
            for b in sp.folds[i + 1:]:
                assert not set(a.tolist()) & set(b.tolist())
        assert not set(sp.train.tolist()) & set(sp.test.tolist())

    def test_too_many_folds(self):
        with pytest.raises(SpecificationError):
            split(4, SplitPlan(0.5, 3))

    @pytest.mark.parametrize("plan", [SplitPlan(0.0), SplitPlan(1.0), SplitPlan(0.7, 1)])
    def test_invalid_plan(self, plan):
        with pytest.raises(SpecificationError):
            split(100, plan)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(10, 400), k=st.integers(2, 7), seed=st.integers(0, 99))
    def test_fold_partition_property(self, n, k, seed):
        sp = split(n, SplitPlan(0.7, k, seed))
        sizes = [len(f) for f in sp.folds]
        assert sum(sizes) == len(sp.train) and max(sizes) - min(sizes) <= 1
        assert len(np.unique(np.concatenate(sp.folds))) == len(sp.train)


class TestClean:
    def test_nan_row_removed(self):
        X = np.array([[1.0, 2.0], [np.nan, 1.0], [3.0, 4.0]])
        out = clean(small(X), [no_nan])
        assert out.n_samples == 2 and np.all(np.isfinite(out.features))

    def test_no_rules_identity(self):
        ds = small(np.arange(6.0).reshape(3, 2))
        out = clean(ds)
        assert np.array_equal(out.features, ds.features)

    def test_positive_target_rule(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=200)
        out = clean(small(rng.normal(size=(200, 2)), y), [lambda x, t: t > 0])
        assert out.n_samples == sum(1 for v in y if v > 0)

    def test_empty_result_allowed(self):
        out = clean(small(np.ones((3, 1))), [lambda x, t: False])
        assert out.n_samples == 0 and out.n_features == 1


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds, truth = generate_dummy(DummySpec(4, 2, 1, 1, n_samples=12, seed=9))
        write_csv(ds, tmp_path / "d.csv", "y")
        back = read_csv(tmp_path / "d.csv", "y")
        assert back.features.tobytes() == ds.features.tobytes()
        assert back.target.tobytes() == ds.target.tobytes()
        write_ground_truth(truth, tmp_path / "gt.csv")
        gt = read_ground_truth(tmp_path / "gt.csv")
        assert gt.coefficients.tobytes() == truth.coefficients.tobytes()
        assert gt.zero_indices == truth.zero_indices

    def test_categorical_and_na(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("colour,size,y\nred,1.5,2\nblue,NA,3\nred,2.5,4\n")
        ds = read_csv(p, "y", ["colour"])
        enc = clean(ordinal_encode(ds, ds.categorical_columns), [no_nan])
        assert enc.n_samples == 2
        assert list(enc.features[:, 0]) == [1.0, 1.0]

    def test_missing_target(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(SpecificationError):
            read_csv(p, "y")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igselect import nn
from igselect.attribution import (AttributionMatrix, GlobalImportance, IgConfig, aggregate,
                                  attribute_dataset, attribute_dataset_shap, integrated_gradients,
                                  kernel_shap, quadrature_rule, scale_to_range, shapley_kernel_weight,
                                  write_importance_csv)
from igselect.data import Dataset
from igselect.errors import AttributionError, ShapeError, SpecificationError
from igselect.nn import Architecture, Network

from oracles import masked_value, riemann_ig, shapley_by_enumeration


def linear(w, b=0.0):
    return Network([np.asarray(w, dtype=float).reshape(-1, 1)], [np.array([b])])


def mlp(seed, d=5, l1=8, activation="LeakyReLU"):
    return nn.build(Architecture(d, l1, activation), seed)


class TestQuadrature:
    @pytest.mark.parametrize("kind", ["GaussLegendre", "Riemann"])
    def test_weights_sum_to_one(self, kind):
        nodes, w = quadrature_rule(50, kind)
        assert abs(w.sum() - 1) <= 1e-14 and nodes.min() > 0 and nodes.max() < 1

    def test_gauss_legendre_polynomial_exactness(self):
        nodes, w = quadrature_rule(5)
        for p in range(10):
            assert abs(w @ nodes ** p - 1 / (p + 1)) <= 1e-14


class TestIntegratedGradients:
    def test_linear_example(self):
        attr = integrated_gradients(linear([2.0, -3.0]), [1.0, 1.0])
        np.testing.assert_allclose(attr, [2.0, -3.0], atol=1e-14)
        assert abs(attr.sum() + 1) <= 1e-14

    def test_at_baseline(self):
        x = np.array([0.3, -1.0, 2.0, 0.0, 1.0])
        attr = integrated_gradients(mlp(0), x, IgConfig(baseline=x))
        assert np.all(attr == 0.0)

    def kink_free(self, seed, d=5):
        """Positive weights and biases with x >= 0: no unit changes state on the path."""
        net = mlp(seed, d, activation="ReLU")
        net.weights = [np.abs(w) for w in net.weights]
        net.biases = [np.abs(b) for b in net.biases]
        return net, np.random.default_rng(seed).uniform(0, 2, size=d)

    def test_against_dense_riemann_kink_free(self):
        net, x = self.kink_free(7)
        gl = integrated_gradients(net, x)
        ref = riemann_ig(net.input_gradient, x, np.zeros(5))
        assert np.max(np.abs(gl - ref)) <= 1e-4 * np.max(np.abs(ref))

    def test_gauss_legendre_error_shrinks_with_nodes(self):
        # kinks make the path gradient piecewise constant, so convergence is algebraic
        for seed in range(5):
            net = mlp(seed, d=10, l1=32)
            x = np.random.default_rng(seed).normal(size=10)
            gap = net(x) - net(np.zeros(10))
            resid = [abs(integrated_gradients(net, x, IgConfig(n_steps=n)).sum() - gap) for n in (50, 1000)]
            assert resid[1] < resid[0]

    def test_riemann_convergence(self):
        net = mlp(3, activation="ReLU")
        x = np.random.default_rng(3).normal(size=5)
        ref = riemann_ig(net.input_gradient, x, np.zeros(5))
        errs = [np.max(np.abs(integrated_gradients(net, x, IgConfig(n_steps=n, quadrature="Riemann")) - ref))
                for n in (10, 100, 1000)]
        assert errs[0] + 1e-9 >= errs[1] and errs[1] + 1e-9 >= errs[2]

    def test_sensitivity_witness(self):
        net = mlp(11)
        net.weights[0][2, :] = 0.0
        x = np.random.default_rng(0).normal(size=5)
        assert abs(integrated_gradients(net, x)[2]) <= 1e-10

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_completeness_kink_free(self, seed):
        rng = np.random.default_rng(seed)
        net, x = self.kink_free(seed, d=int(rng.integers(1, 10)))
        gap = net(x) - net(np.zeros(net.input_dim))
        assert abs(integrated_gradients(net, x).sum() - gap) <= 1e-10 * (abs(gap) + 1e-6)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_completeness_dense_riemann(self, seed):
        rng = np.random.default_rng(seed)
        net = mlp(seed, d=int(rng.integers(1, 10)), activation=str(rng.choice(["ReLU", "LeakyReLU"])))
        x = rng.normal(size=net.input_dim)
        gap = net(x) - net(np.zeros(net.input_dim))
        cfg = IgConfig(n_steps=100_000, quadrature="Riemann")
        assert abs(integrated_gradients(net, x, cfg).sum() - gap) <= 1e-3 * (abs(gap) + 1e-6)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_linear_exactness(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 12))
        w, x, base = rng.normal(size=d), rng.normal(size=d), rng.normal(size=d)
        attr = integrated_gradients(linear(w, rng.normal()), x, IgConfig(baseline=base))
        assert np.all(np.abs(attr - w * (x - base)) <= 1e-8)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            integrated_gradients(mlp(0), np.zeros(4))
        with pytest.raises(ShapeError):
            integrated_gradients(mlp(0), np.zeros(5), IgConfig(baseline=np.zeros(3)))

    def test_non_finite_gradient(self):
        net = linear([np.inf, 1.0])
        data = Dataset(np.ones((3, 2)), np.zeros(3), ["a", "b"])
        with pytest.raises(AttributionError) as info:
            attribute_dataset(net, data, [1, 2])
        assert info.value.sample == 0


class TestAttributeDataset:
    def data(self, n=100, d=5, seed=0):
        X = np.random.default_rng(seed).normal(size=(n, d))
        return Dataset(X, np.zeros(n), [f"x{i}" for i in range(d)])

    def test_single_row(self):
        net, data = mlp(1), self.data(5)
        m = attribute_dataset(net, data, [3])
        assert m.values.shape == (1, 5)
        np.testing.assert_array_equal(m.values[0], integrated_gradients(net, data.features[3]))

    def test_duplicate_rows(self):
        m = attribute_dataset(mlp(2), self.data(5), [1, 1])
        assert m.values[0].tobytes() == m.values[1].tobytes()

    def test_linear_dummy_model(self):
        w = np.random.default_rng(5).uniform(-1, 1, size=5)
        data = self.data()
        m = attribute_dataset(linear(w), data, np.arange(100))
        assert np.all(np.abs(m.values - w * data.features) <= 1e-6)

    def test_chunking_invariant(self):
        net, data = mlp(4), self.data(37)
        a = attribute_dataset(net, data, np.arange(37))
        b = attribute_dataset(net, data, np.arange(37), chunk_points=150)
        np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-14)

    def test_empty(self):
        with pytest.raises(SpecificationError):
            attribute_dataset(mlp(0), self.data(3), [])


class TestKernelShap:
    def test_kernel_weight(self):
        assert shapley_kernel_weight(4, 1) == 3 / (4 * 1 * 3)

    def test_constant_model(self):
        net = Network([np.zeros((4, 1))], [np.array([2.5])])
        res = kernel_shap(net, np.ones(4), np.zeros((3, 4)))
        assert np.all(np.abs(res.values) <= 1e-12)

    def test_linear_single_background(self):
        rng = np.random.default_rng(0)
        w, x, bg = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
        res = kernel_shap(linear(w, 0.4), x, bg[None, :])
        assert np.all(np.abs(res.values - w * (x - bg)) <= 1e-8)

    def test_eight_feature_mlp_exact(self):
        net = mlp(8, d=8)
        rng = np.random.default_rng(8)
        x, bg = rng.normal(size=8), rng.normal(size=(4, 8))
        res = kernel_shap(net, x, bg)
        assert res.n_coalitions == 2 ** 8 - 2
        exact = shapley_by_enumeration(masked_value(net, x, bg), 8)
        assert np.max(np.abs(res.values - exact)) <= 1e-6

    def test_efficiency(self):
        net = mlp(9, d=7)
        rng = np.random.default_rng(9)
        res = kernel_shap(net, rng.normal(size=7), rng.normal(size=(5, 7)), budget=40, seed=1)
        assert abs(res.values.sum() - (res.prediction - res.expected_value)) <= 1e-10

    def test_sampled_converges_toward_exact(self):
        net = mlp(12, d=9)
        rng = np.random.default_rng(12)
        x, bg = rng.normal(size=9), rng.normal(size=(3, 9))
        exact = kernel_shap(net, x, bg).values
        small = kernel_shap(net, x, bg, budget=40, seed=0).values
        large = kernel_shap(net, x, bg, budget=400, seed=0).values
        assert np.linalg.norm(large - exact) <= np.linalg.norm(small - exact) + 1e-12

    def test_sampling_deterministic(self):
        net = mlp(1, d=6)
        rng = np.random.default_rng(1)
        x, bg = rng.normal(size=6), rng.normal(size=(2, 6))
        a = kernel_shap(net, x, bg, budget=20, seed=5).values
        b = kernel_shap(net, x, bg, budget=20, seed=5).values
        assert a.tobytes() == b.tobytes()

    def test_ridge_fallback_flagged(self):
        net = mlp(2, d=6)
        rng = np.random.default_rng(2)
        with pytest.warns(RuntimeWarning):
            res = kernel_shap(net, rng.normal(size=6), rng.normal(size=(2, 6)), budget=8)
        assert res.ridge_fallback and np.all(np.isfinite(res.values))

    def test_errors(self):
        with pytest.raises(SpecificationError):
            kernel_shap(mlp(0), np.zeros(5), np.zeros((0, 5)))
        with pytest.raises(SpecificationError):
            kernel_shap(mlp(0), np.zeros(5), np.zeros((1, 5)), budget=6)
        with pytest.raises(ShapeError):
            kernel_shap(mlp(0), np.zeros(5), np.zeros((1, 4)))

    def test_dataset_wrapper(self):
        net = mlp(3, d=4)
        X = np.random.default_rng(3).normal(size=(6, 4))
        data = Dataset(X, np.zeros(6), list("abcd"))
        m = attribute_dataset_shap(net, data, [0, 2], X[3:], budget=14)
        assert m.values.shape == (2, 4) and m.method == "KernelSHAP"
        np.testing.assert_array_equal(m.values[0], kernel_shap(net, X[0], X[3:], 14, seed=0).values)


class TestAggregate:
    def test_single_row(self):
        g = aggregate(AttributionMatrix([[1.0, -2.0]], "IG", np.zeros(2)))
        np.testing.assert_array_equal(g.scores, [1.0, 2.0])

    def test_cancellation(self):
        m = AttributionMatrix([[1.0], [-1.0]], "IG", np.zeros(1))
        assert aggregate(m, "MeanAbsolute").scores[0] == 1.0
        assert aggregate(m, "MeanSigned").scores[0] == 0.0

    def test_errors(self):
        with pytest.raises(SpecificationError):
            aggregate(AttributionMatrix(np.zeros((0, 3)), "IG", np.zeros(3)))
        with pytest.raises(SpecificationError):
            aggregate(AttributionMatrix([[1.0]], "IG", np.zeros(1)), "Median")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), min_size=1, max_size=20))
    def test_nonnegative_and_ranking(self, rows):
        g = aggregate(AttributionMatrix(rows, "IG", np.zeros(4)))
        assert np.all(g.scores >= 0)
        if np.ptp(g.scores) > 0:
            order = np.argsort(g.scores, kind="stable")
            assert np.array_equal(np.argsort(scale_to_range(g, 0.0, 1.0), kind="stable"), order)
            # a wider range can round neighbours together but never swaps them
            assert np.all(np.diff(scale_to_range(g, -1.0, 1.0)[order]) >= 0)


class TestScale:
    def test_example(self):
        np.testing.assert_allclose(scale_to_range(np.array([0.0, 5.0, 10.0]), 0, 1), [0, 0.5, 1])

    def test_round_trip(self):
        s = np.random.default_rng(0).uniform(3, 17, size=20)
        back = scale_to_range(scale_to_range(s, 0, 1), s.min(), s.max())
        assert np.max(np.abs(back - s)) <= 1e-12

    def test_errors(self):
        with pytest.raises(SpecificationError):
            scale_to_range(np.ones(3), 0, 1)
        with pytest.raises(SpecificationError):
            scale_to_range(np.arange(3.0), 1, 1)


def test_importance_csv(tmp_path):
    path = write_importance_csv(GlobalImportance([0.5, 0.25]), ["a", "b"], tmp_path / "imp.csv")
    assert path.read_text().splitlines() == ["feature,score", "a,0.5", "b,0.25"]

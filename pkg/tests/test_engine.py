import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csagan import engine as E
from csagan.engine import Tensor
from csagan.gradcheck import check_gradients


class TestConv2d:
    def test_identity_1x1(self, rng):
        x = Tensor(rng.standard_normal((3, 5, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        y = E.conv2d(x, w)
        np.testing.assert_array_equal(y.data, x.data)

    def test_ones_sum(self):
        x = Tensor(np.ones((1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        y = E.conv2d(x, w, stride=1, pad=0)
        assert y.shape == (1, 1, 1)
        assert y.item() == 9.0

    def test_output_extent(self, rng):
        x = Tensor(rng.standard_normal((2, 11, 11)))
        w = Tensor(rng.standard_normal((4, 2, 3, 3)))
        y = E.conv2d(x, w, stride=2, pad=1)
        assert y.shape == (4, (11 + 2 - 3) // 2 + 1, (11 + 2 - 3) // 2 + 1)

    def test_channel_mismatch_rejected(self, rng):
        x = Tensor(rng.standard_normal((2, 6, 6)))
        w = Tensor(rng.standard_normal((3, 5, 3, 3)))
        with pytest.raises(E.EngineError, match="channels"):
            E.conv2d(x, w)

    def test_gradients_match_finite_differences(self, rng):
        x = Tensor(rng.standard_normal((2, 6, 6)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        probe = Tensor(rng.standard_normal((3, 6, 6)))
        err = check_gradients(lambda: E.mean(E.mul(E.conv2d(x, w, pad=1), probe)), {"x": x, "w": w})
        assert err < 1e-4

    def test_batched_matches_per_sample(self, rng):
        xb = Tensor(rng.standard_normal((4, 2, 8, 8)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        yb = E.conv2d(xb, w, stride=2, pad=1)
        for b in range(4):
            single = E.conv2d(Tensor(xb.data[b]), w, stride=2, pad=1)
            np.testing.assert_allclose(yb.data[b], single.data, atol=1e-12)


class TestSoftmaxRows:
    def test_uniform(self):
        y = E.softmax_rows(Tensor(np.full((1, 4), 3.7)))
        np.testing.assert_allclose(y.data, 0.25)

    def test_analytic(self):
        y = E.softmax_rows(Tensor(np.array([[0.0, np.log(2.0)]])))
        np.testing.assert_allclose(y.data, [[1 / 3, 2 / 3]], atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        y = E.softmax_rows(Tensor(rng.standard_normal((8, 8)) * 30))
        np.testing.assert_allclose(y.data.sum(axis=1), 1.0, atol=1e-12)

    def test_nan_rejected(self):
        bad = np.zeros((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(E.EngineError, match="NaN"):
            E.softmax_rows(Tensor(bad))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_stochastic_property(self, seed):
        E.set_precision("f64")
        r = np.random.default_rng(seed)
        y = E.softmax_rows(Tensor(r.standard_normal((5, 7)) * r.uniform(0.1, 50)))
        np.testing.assert_allclose(y.data.sum(axis=1), 1.0, atol=1e-12)
        assert (y.data >= 0).all() and (y.data <= 1).all()


class TestBackward:
    def test_square(self):
        x = Tensor(np.asarray(3.0))
        y = E.mul(x, x)
        E.backward(y)
        assert x.grad == pytest.approx(6.0)

    def test_product_plus_sum(self):
        a, b = Tensor(np.asarray(2.0)), Tensor(np.asarray(5.0))
        y = E.add(E.mul(a, b), a)
        E.backward(y)
        assert a.grad == pytest.approx(6.0)
        assert b.grad == pytest.approx(2.0)

    def test_leaf_rejected(self):
        with pytest.raises(E.EngineError, match="no graph record"):
            E.backward(Tensor(np.asarray(1.0)))

    def test_non_scalar_rejected(self, rng):
        y = E.mul(Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(3)))
        with pytest.raises(E.EngineError, match="scalar"):
            E.backward(y)

    def test_double_consumption_sums_gradients(self, rng):
        # t used twice must receive the sum of both branch gradients
        xv = rng.standard_normal((3, 3))
        x1 = Tensor(xv.copy())
        y1 = E.total(E.add(E.mul(x1, x1), E.tanh(x1)))
        E.backward(y1)
        # single-consumer rewrite: d/dx (x*x) = 2x, d/dx tanh = 1 - tanh^2
        expected = 2 * xv + (1 - np.tanh(xv) ** 2)
        np.testing.assert_allclose(x1.grad, expected, atol=1e-12)

    def test_random_graph_fd(self, rng):
        from csagan.gradcheck import check_random_graph
        assert check_random_graph(seed=3) < 1e-4


class TestSpectralNormalize:
    def test_diagonal(self, rng):
        w = Tensor(np.diag([3.0, 1.0]))
        state = E.init_spectral_state(2, rng, warmup_matrix=w.data, warmup_iterations=100)
        w_sn, state = E.spectral_normalize(w, state)
        assert E.sigma_estimate(w.data, state) == pytest.approx(3.0, rel=1e-6)
        np.testing.assert_allclose(w_sn.data, np.diag([1.0, 1 / 3]), atol=1e-6)

    def test_identity(self, rng):
        w = Tensor(np.eye(4))
        state = E.init_spectral_state(4, rng, warmup_matrix=w.data, warmup_iterations=50)
        w_sn, _ = E.spectral_normalize(w, state)
        np.testing.assert_allclose(w_sn.data, np.eye(4), atol=1e-9)

    def test_matches_eigendecomposition_oracle(self, rng):
        for trial in range(10):
            w = rng.standard_normal((8, 8))
            state = E.init_spectral_state(8, rng)
            for _ in range(50):
                E.spectral_normalize(Tensor(w), state)
            # oracle: largest singular value via eigendecomposition of W^T W
            sigma_true = float(np.sqrt(np.linalg.eigvalsh(w.T @ w).max()))
            assert E.sigma_estimate(w, state) == pytest.approx(sigma_true, rel=1e-3)

    def test_zero_matrix_floored(self, rng):
        w = Tensor(np.zeros((3, 3)))
        state = E.init_spectral_state(3, rng)
        w_sn, _ = E.spectral_normalize(w, state)
        assert np.isfinite(w_sn.data).all()

    def test_scale_equivariance(self, rng):
        w = rng.standard_normal((6, 4))
        out = []
        for c in (1.0, 7.5):
            state = E.init_spectral_state(6, rng, warmup_matrix=c * w, warmup_iterations=80)
            w_sn, _ = E.spectral_normalize(Tensor(c * w), state)
            out.append(w_sn.data)
        np.testing.assert_allclose(out[0], out[1], atol=1e-6)


class TestAdam:
    def test_zero_gradient_keeps_param(self):
        p = np.array([1.0, -2.0])
        st_ = E.adam_state_for(p)
        p2, _ = E.adam_step(p, np.zeros(2), st_, lr=0.1)
        np.testing.assert_array_equal(p2, p)

    def test_first_step_magnitude(self):
        # bias correction cancels the gradient scale on step one
        for g in (1e-3, 1.0, 250.0):
            p = np.zeros(4)
            st_ = E.adam_state_for(p)
            p2, _ = E.adam_step(p, np.full(4, g), st_, lr=0.05)
            np.testing.assert_allclose(np.abs(p2), 0.05, rtol=1e-4)

    def test_converges_on_quadratic(self):
        x = np.asarray(5.0)
        st_ = E.adam_state_for(x)
        for _ in range(500):
            x, st_ = E.adam_step(x, 2 * x, st_, lr=0.1)
        assert abs(float(x)) < 0.01

    def test_nan_gradient_rejected_state_unchanged(self):
        p = np.array([1.0])
        st_ = E.adam_state_for(p)
        st_.m[:] = 0.5
        with pytest.raises(E.EngineError, match="NaN"):
            E.adam_step(p, np.array([np.nan]), st_, lr=0.1)
        assert st_.t == 0 and st_.m[0] == 0.5


class TestPrecision:
    def test_mode_switch(self):
        E.set_precision("f32")
        assert Tensor(np.zeros(2)).data.dtype == np.float32
        E.set_precision("f64")
        assert Tensor(np.zeros(2)).data.dtype == np.float64

    def test_unknown_rejected(self):
        with pytest.raises(E.EngineError):
            E.set_precision("f16")

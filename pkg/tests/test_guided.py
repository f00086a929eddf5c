import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from indexnet import ops
from indexnet.errors import DimensionError
from indexnet.guided import expand_holistic, indexed_pool, indexed_upsample
from indexnet.samplers import max_index_map, uniform_index_map
from indexnet.tensor import Parameter, Tensor, backward, precision


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64).reshape((1, 1) + np.shape(a)) if np.ndim(a) == 2 else a)


def weighted_sum_oracle(x, idx, k=2):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // k, w // k))
    for b in range(n):
        for ch in range(c):
            for i in range(h // k):
                for j in range(w // k):
                    win = np.s_[b, ch, i * k : (i + 1) * k, j * k : (j + 1) * k]
                    out[b, ch, i, j] = (x[win] * idx[win]).sum()
    return out


class TestIndexedPool:
    def test_one_hot_is_max(self):
        x = T([[1.0, 3.0], [2.0, 4.0]])
        assert indexed_pool(x, T([[0.0, 0.0], [0.0, 1.0]])).item() == pytest.approx(4.0)

    def test_uniform_is_average(self):
        x = T([[1.0, 3.0], [2.0, 4.0]])
        assert indexed_pool(x, T(np.full((2, 2), 0.25))).item() == pytest.approx(2.5)

    def test_softmax_index_matches_loop(self, rng):
        x = rng.standard_normal((2, 3, 6, 8))
        with precision("f64"):
            idx = ops.region_softmax(Tensor(rng.standard_normal((2, 3, 6, 8))), 2)
            out = indexed_pool(Tensor(x), idx).data
        np.testing.assert_allclose(out, weighted_sum_oracle(x, idx.data), atol=1e-6)

    def test_holistic_index_broadcasts(self, rng):
        x = rng.standard_normal((1, 4, 4, 4))
        idx = rng.uniform(size=(1, 1, 4, 4))
        with precision("f64"):
            hin = indexed_pool(Tensor(x), Tensor(idx)).data
            din = indexed_pool(Tensor(x), expand_holistic(Tensor(idx), 4)).data
        np.testing.assert_allclose(hin, din)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="axis 1"):
            indexed_pool(Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))))

    @given(arrays(np.float64, (1, 2, 4, 4), elements=st.floats(-10, 10)), st.integers(0, 2**31))
    def test_convex_bound(self, x, seed):
        with precision("f64"):
            logits = np.random.default_rng(seed).standard_normal(x.shape) * 3
            out = indexed_pool(Tensor(x), ops.region_softmax(Tensor(logits), 2)).data
        win = x.reshape(1, 2, 2, 2, 2, 2)
        assert np.all(out >= win.min(axis=(3, 5)) - 1e-9)
        assert np.all(out <= win.max(axis=(3, 5)) + 1e-9)


class TestIndexedUpsample:
    def test_all_ones_is_nearest(self):
        out = indexed_upsample(T([[5.0]]), T(np.ones((2, 2)))).data[0, 0]
        np.testing.assert_array_equal(out, [[5, 5], [5, 5]])

    def test_unpooling_case(self):
        out = indexed_upsample(T([[5.0]]), T([[1.0, 0.0], [0.0, 0.0]])).data[0, 0]
        np.testing.assert_array_equal(out, [[5, 0], [0, 0]])

    def test_weighted_case(self):
        out = indexed_upsample(T([[2.0]]), T([[0.5, 0.25], [0.25, 0.0]])).data[0, 0]
        np.testing.assert_allclose(out, [[1, 0.5], [0.5, 0]])

    def test_spatial_ratio_checked(self):
        with pytest.raises(DimensionError):
            indexed_upsample(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 4))))

    @given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**31))
    def test_one_to_many(self, i, j, seed):
        r = np.random.default_rng(seed)
        d = r.standard_normal((1, 2, 4, 4))
        idx = Tensor(r.uniform(size=(1, 2, 8, 8)))
        base = indexed_upsample(Tensor(d), idx).data
        d2 = d.copy()
        d2[0, :, i, j] += 1.0
        changed = indexed_upsample(Tensor(d2), idx).data != base
        outside = changed.copy()
        outside[:, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = False
        assert not outside.any()


class TestDegeneracy:
    """Pooling with hard or uniform maps reproduces the fixed pooling operators."""

    @given(st.integers(0, 2**31))
    def test_max_and_average_and_nearest(self, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((1, 8, 16, 16))
        with precision("f64"):
            xt = Tensor(x)
            mp, _ = ops.max_pool_with_argmax(xt, 2)
            ip_max = indexed_pool(xt, Tensor(max_index_map(x))).data
            ip_avg = indexed_pool(xt, Tensor(uniform_index_map(x.shape))).data
            d = Tensor(r.standard_normal((1, 8, 8, 8)))
            iu = indexed_upsample(d, Tensor(np.ones((1, 8, 16, 16)))).data
            np.testing.assert_allclose(ip_max, mp.data, rtol=1e-6, atol=0)
            np.testing.assert_allclose(ip_avg, ops.avg_pool(xt, 2).data, rtol=1e-6, atol=1e-12)
            np.testing.assert_allclose(iu, ops.nearest_upsample(d, 2).data, rtol=1e-6, atol=0)


class TestExpandHolistic:
    def test_copies(self, rng):
        idx = rng.uniform(size=(2, 1, 3, 3))
        out = expand_holistic(Tensor(idx), 3).data
        for c in range(3):
            np.testing.assert_array_equal(out[:, c], idx[:, 0])

    def test_gradient_sums_over_channels(self, rng):
        src = Parameter(rng.uniform(size=(1, 1, 2, 2)))
        backward(ops.total(expand_holistic(src, 5)))
        np.testing.assert_allclose(src.grad, 5.0)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrtr import tensor as T
from nrtr.errors import ConfigError, MaskError, ShapeError
from nrtr.gradcheck import check, relative_error


def p64(x):
    return T.parameter(x, dtype=np.float64)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        b = np.random.default_rng(0).normal(size=(3, 3))
        np.testing.assert_array_equal(T.matmul(T.Tensor(np.eye(3)), T.Tensor(b)).data, b)

    def test_annihilator(self):
        out = T.matmul(T.Tensor([[1.0, 2.0], [3.0, 4.0]]), T.Tensor(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_against_triple_loop(self):
        gen = np.random.default_rng(1)
        a, b = gen.normal(size=(4, 5)), gen.normal(size=(5, 3))
        np.testing.assert_allclose(T.matmul(T.Tensor(a), T.Tensor(b)).data, naive_matmul(a, b), rtol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**31))
    def test_random_sizes_float32(self, m, k, n, seed):
        gen = np.random.default_rng(seed)
        a, b = gen.normal(size=(m, k)), gen.normal(size=(k, n))
        got = T.matmul(T.Tensor(a.astype(np.float32)), T.Tensor(b.astype(np.float32))).data
        ref = naive_matmul(a.astype(np.float32).astype(np.float64), b.astype(np.float32).astype(np.float64))
        assert np.max(np.abs(got - ref)) <= 1e-5 * max(1.0, np.max(np.abs(ref))) * k

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))

    def test_gradient_rule(self):
        gen = np.random.default_rng(2)
        a, b = p64(gen.normal(size=(3, 4))), p64(gen.normal(size=(4, 2)))
        g = gen.normal(size=(3, 2))
        T.backward(T.sum(T.mul(T.matmul(a, b), T.Tensor(g))))
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(T.Tensor(np.zeros(4))).data, [0.25] * 4)

    def test_singleton(self):
        assert T.softmax(T.Tensor([7.5])).data.tolist() == [1.0]

    def test_matches_float64_exp_normalize(self):
        x = [1.0, 2.0, 3.0]
        e = [math.exp(v) for v in x]
        ref = [v / sum(e) for v in e]
        np.testing.assert_allclose(T.softmax(T.Tensor(np.array(x))).data, ref, rtol=1e-14)

    def test_neg_inf_maps_to_exact_zero(self):
        y = T.softmax(T.Tensor(np.array([0.0, -np.inf, 1.0]))).data
        assert y[1] == 0.0
        assert abs(y.sum() - 1) < 1e-12

    def test_all_masked_slice_errors(self):
        with pytest.raises(MaskError):
            T.softmax(T.Tensor(np.array([[0.0, 1.0], [-np.inf, -np.inf]])))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 12), st.floats(0.1, 50), st.integers(0, 2**31))
    def test_rows_sum_to_one(self, rows, n, spread, seed):
        x = np.random.default_rng(seed).normal(0, spread, size=(rows, n)).astype(np.float32)
        y = T.softmax(T.Tensor(x)).data
        assert np.all(np.abs(y.sum(axis=-1) - 1) < 1e-6)
        assert np.all((y >= 0) & (y <= 1))


class TestLayerNorm:
    ones, zeros = np.ones(4), np.zeros(4)

    def test_constant_slice(self):
        y = T.layer_norm(T.Tensor(np.full(4, 5.0)), T.Tensor(self.ones), T.Tensor(self.zeros), 1e-6)
        np.testing.assert_array_equal(y.data, np.zeros(4))

    def test_two_element_symmetry(self):
        y = T.layer_norm(T.Tensor(np.array([1.0, 3.0])), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), 1e-6)
        np.testing.assert_allclose(y.data, [-1.0, 1.0], atol=1e-6)

    def test_random_moments(self):
        x = np.random.default_rng(3).normal(4.0, 3.0, size=(5, 16))
        y = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(16)), T.Tensor(np.zeros(16)), 1e-6).data
        assert np.all(np.abs(y.mean(axis=-1)) < 1e-6)
        assert np.all(np.abs(y.var(axis=-1) - 1) < 1e-4)

    def test_gain_and_bias_apply_after_normalisation(self):
        x = np.array([1.0, 3.0])
        y = T.layer_norm(T.Tensor(x), T.Tensor(np.array([2.0, 3.0])), T.Tensor(np.array([0.5, -0.5])), 0.0)
        np.testing.assert_allclose(y.data, [-1.5, 2.5])

    def test_param_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.layer_norm(T.Tensor(np.zeros((2, 4))), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)))


class TestElementwise:
    def test_relu(self):
        assert T.relu(T.Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_dropout_rate_zero_is_identity(self):
        x = T.Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        y = T.dropout(x, 0.0, np.random.default_rng(1))
        assert np.array_equal(y.data, x.data)

    def test_dropout_eval_is_identity_at_any_rate(self):
        x = T.Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        assert T.dropout(x, 0.9, None, training=False) is x

    def test_dropout_inverted_scaling(self):
        x = T.Tensor(np.ones((200, 200)))
        y = T.dropout(x, 0.25, np.random.default_rng(5)).data
        kept = y != 0
        np.testing.assert_allclose(y[kept], 1 / 0.75, rtol=1e-6)
        assert abs(kept.mean() - 0.75) < 0.01

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_dropout_rate_validation(self, rate):
        with pytest.raises(ConfigError):
            T.dropout(T.Tensor(np.ones(3)), rate, np.random.default_rng(0))

    def test_cross_entropy_uniform_38(self):
        loss = T.cross_entropy(T.Tensor(np.zeros((1, 38))), [5])
        assert abs(loss.item() - math.log(38)) < 1e-6
        assert abs(math.log(38) - 3.6376) < 1e-4

    def test_cross_entropy_ignores_padding(self):
        logits = np.random.default_rng(0).normal(size=(3, 5))
        full = T.cross_entropy(T.Tensor(logits[:2]), [1, 4]).item()
        padded = T.cross_entropy(T.Tensor(logits), [1, 4, -1]).item()
        assert abs(full - padded) < 1e-12

    def test_embedding_lookup_out_of_range(self):
        with pytest.raises(ShapeError, match="39"):
            T.embedding_lookup(T.Tensor(np.zeros((39, 4))), [0, 39])

    def test_concat_and_reshape_roundtrip(self):
        a, b = T.Tensor(np.arange(6.0).reshape(2, 3)), T.Tensor(np.arange(4.0).reshape(2, 2))
        c = T.concat_last_axis([a, b])
        assert c.shape == (2, 5)
        np.testing.assert_array_equal(T.reshape(c, (10,)).data, np.concatenate([a.data, b.data], 1).ravel())


class TestBackward:
    def test_sum(self):
        w = p64(np.array([1.0, 2.0, 3.0]))
        T.backward(T.sum(w))
        assert w.grad.tolist() == [1.0, 1.0, 1.0]

    def test_sum_of_squares(self):
        w = p64(np.array([1.0, 2.0, 3.0]))
        T.backward(T.sum(T.mul(w, w)))
        assert w.grad.tolist() == [2.0, 4.0, 6.0]

    def test_non_scalar_rejected(self):
        w = p64(np.ones(3))
        with pytest.raises(ShapeError):
            T.backward(T.mul(w, w))

    def test_unreachable_params_get_zero_grad(self):
        w, u = p64(np.ones(3)), p64(np.ones(2))
        T.backward(T.sum(w), params=[w, u])
        assert w.grad.tolist() == [1.0] * 3
        assert u.grad.tolist() == [0.0, 0.0]

    def test_fan_out_sums_consumer_contributions(self):
        w = p64(np.array([2.0]))
        y = T.add(T.mul(w, w), T.scale(w, 3.0))  # w^2 + 3w
        T.backward(T.sum(y))
        assert w.grad.tolist() == [7.0]

    def test_tape_is_in_construction_order(self):
        w = p64(np.ones(2))
        a = T.scale(w, 2.0)
        b = T.relu(a)
        loss = T.sum(T.mul(a, b))
        tape = T.Tape.collect(loss)
        assert [n._seq for n in tape.nodes] == sorted(n._seq for n in tape.nodes)
        assert tape.nodes[0] is w and tape.nodes[-1] is loss

    def test_no_grad_records_nothing(self):
        w = p64(np.ones(2))
        with T.no_grad():
            y = T.sum(T.mul(w, w))
        assert not y.requires_grad and y._parents == ()


def _rand(gen, *shape):
    return p64(gen.normal(size=shape))


COMPOSITES = {
    "matmul_batched": lambda g: ((a := _rand(g, 2, 3, 4)), (b := _rand(g, 4, 5)), lambda: T.sum(T.matmul(a, b) * T.matmul(a, b))),
    "softmax": lambda g: ((x := _rand(g, 3, 5)), None, lambda: T.sum(T.mul(T.softmax(x), T.Tensor(np.arange(15.0).reshape(3, 5))))),
    "layer_norm": lambda g: ((x := _rand(g, 3, 6)), None, lambda: T.sum(T.mul(T.layer_norm(x, T.Tensor(np.ones(6)), T.Tensor(np.zeros(6)), 1e-6), T.Tensor(np.arange(18.0).reshape(3, 6))))),
    "cross_entropy": lambda g: ((x := _rand(g, 4, 38)), None, lambda: T.cross_entropy(x, [0, 37, -1, 5])),
    "broadcast_add": lambda g: ((x := _rand(g, 2, 3, 4)), (b := _rand(g, 4)), lambda: T.sum(T.mul(T.add(x, b), T.add(x, b)))),
    "concat_transpose": lambda g: ((x := _rand(g, 2, 3)), (y := _rand(g, 2, 2)), lambda: T.sum(T.mul(T.transpose(T.concat([x, y])), T.Tensor(np.arange(10.0).reshape(5, 2))))),
    "embedding": lambda g: ((w := _rand(g, 6, 3)), None, lambda: T.sum(T.mul(T.embedding_lookup(w, [[0, 5, 5], [2, 0, 1]]), T.embedding_lookup(w, [[0, 5, 5], [2, 0, 1]])))),
    "mean": lambda g: ((x := _rand(g, 3, 4)), None, lambda: T.sum(T.mean(T.mul(x, x), axis=1))),
}


@pytest.mark.parametrize("name", sorted(COMPOSITES))
def test_finite_difference_agreement(name):
    gen = np.random.default_rng(11)
    a, b, fn = COMPOSITES[name](gen)
    inputs = [t for t in (a, b) if t is not None]
    assert check(fn, inputs, gen) < 1e-4


def test_relative_error_metric():
    assert relative_error(np.array([1e-9]), np.array([2e-9])) == pytest.approx(1e-9)
    assert relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(1 / 101)

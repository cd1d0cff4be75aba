import numpy as np
import pytest
import scipy.sparse as sp

from regiongcn.numerics import (AdamState, Prng, activation, activation_grad,
                                adam_step, as_dense, matmul, spmm)


def csr(dense):
    m = sp.csr_matrix(np.asarray(dense, dtype=float))
    m.sort_indices()
    return m


class TestSpmm:
    def test_two_cycle_permutes_rows(self):
        a = csr([[0, 1], [1, 0]])
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(spmm(a, x), [[3, 4], [1, 2]])

    def test_all_zeros(self):
        a = sp.csr_matrix((3, 3))
        x = np.ones((3, 2))
        assert np.array_equal(spmm(a, x), np.zeros((3, 2)))

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        dense = rng.random((6, 6)) * (rng.random((6, 6)) < 0.4)
        x = rng.standard_normal((6, 3))
        assert np.max(np.abs(spmm(csr(dense), x) - dense @ x)) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            spmm(csr(np.eye(3)), np.ones((4, 2)))


class TestMatmul:
    def test_identity(self):
        a = np.random.default_rng(1).standard_normal((3, 3))
        assert np.array_equal(matmul(a, np.eye(3)), a)

    def test_hand_case(self):
        out = matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]]))
        assert np.array_equal(out, [[19, 22], [43, 50]])

    def test_transpose_identity(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        assert np.allclose(matmul(a, b).T, matmul(b.T, a.T), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestActivations:
    def test_relu_values(self):
        out = activation(np.array([-1.0, 0.0, 2.0]), "relu")
        assert np.array_equal(out, [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert activation(np.array([0.0]), "sigmoid")[0] == 0.5

    def test_identity(self):
        x = np.array([-2.0, 3.0])
        assert np.array_equal(activation(x, "identity"), x)

    def test_relu_grad_at_zero_is_zero(self):
        assert activation_grad(np.array([0.0]), "relu")[0] == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            activation(np.ones(2), "tanh")

    @pytest.mark.parametrize("kind", ["relu", "sigmoid", "identity"])
    def test_grad_matches_finite_differences(self, kind):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(100) * 2.0
        if kind == "relu":
            x = x[np.abs(x) > 1e-3]   # stay off the kink
        h = 1e-6
        fd = (activation(x + h, kind) - activation(x - h, kind)) / (2 * h)
        assert np.max(np.abs(activation_grad(x, kind) - fd)) <= 1e-6


class TestAdam:
    def test_zero_grad_no_decay_keeps_params(self):
        p = np.array([1.0, -2.0])
        state = AdamState.zeros_like(p)
        new_p, _ = adam_step(p, np.zeros(2), state, lr=1e-3)
        assert np.array_equal(new_p, p)

    def test_first_step_formula(self):
        p = np.array([0.0])
        state = AdamState.zeros_like(p)
        new_p, new_state = adam_step(p, np.array([0.5]), state, lr=1e-3)
        expected = -1e-3 * 0.5 / (0.5 + 1e-8)
        assert abs(new_p[0] - expected) <= 1e-15
        assert new_state.t == 1

    def test_odd_symmetry(self):
        p = np.zeros(3)
        g = np.array([0.3, -0.7, 1.1])
        state = AdamState.zeros_like(p)
        up, _ = adam_step(p, g, state, lr=1e-2)
        down, _ = adam_step(p, -g, state, lr=1e-2)
        assert np.allclose(up, -down, atol=1e-15)

    def test_lr_zero_never_moves(self):
        rng = np.random.default_rng(4)
        p = rng.standard_normal((3, 2))
        state = AdamState.zeros_like(p)
        for _ in range(5):
            new_p, state = adam_step(p, rng.standard_normal((3, 2)), state,
                                     lr=0.0, weight_decay=0.5)
            assert np.array_equal(new_p, p)
            p = new_p

    def test_weight_decay_enters_gradient(self):
        p = np.array([2.0])
        state = AdamState.zeros_like(p)
        new_p, _ = adam_step(p, np.zeros(1), state, lr=1e-3, weight_decay=0.1)
        # g' = 0.1 * 2 = 0.2, first step is -lr * sign-ish
        expected = 2.0 - 1e-3 * 0.2 / (0.2 + 1e-8)
        assert abs(new_p[0] - expected) <= 1e-12

    def test_non_finite_gradient_rejected(self):
        state = AdamState.zeros_like(np.zeros(1))
        with pytest.raises(ValueError, match="non-finite"):
            adam_step(np.zeros(1), np.array([np.nan]), state, lr=1e-3)

    def test_pure_inputs_untouched(self):
        p = np.ones(2)
        g = np.ones(2)
        state = AdamState.zeros_like(p)
        adam_step(p, g, state, lr=1e-2)
        assert np.array_equal(p, np.ones(2))
        assert state.t == 0
        assert np.array_equal(state.m, np.zeros(2))


class TestPrng:
    def test_same_seed_same_stream(self):
        a = Prng(42).gen.random(10)
        b = Prng(42).gen.random(10)
        assert np.array_equal(a, b)

    def test_substreams_independent_of_consumption(self):
        r1 = Prng(7)
        r1.gen.random(100)
        a = r1.substream("x").gen.random(5)
        b = Prng(7).substream("x").gen.random(5)
        assert np.array_equal(a, b)

    def test_distinct_labels_distinct_streams(self):
        r = Prng(7)
        assert not np.array_equal(r.substream("a").gen.random(5),
                                  r.substream("b").gen.random(5))

    def test_nested_substreams(self):
        a = Prng(1).substream("x").substream("y").gen.random(3)
        b = Prng(1).substream("x").substream("y").gen.random(3)
        assert np.array_equal(a, b)


class TestAsDense:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            as_dense([[1.0, np.inf]])

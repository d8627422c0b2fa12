"""Autodiff core: op semantics against hand values and independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bivex import _kernels as K
from bivex import tensor as T
from bivex.gradcheck import check, max_rel_error, numeric_grad
from bivex.tensor import DimensionError, Tape, TapeReuseError, Tensor


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[3.0], [4.0]]

    def test_hand_arithmetic(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        err = check(lambda: T.tensor_sum(T.matmul(a, b)), [a, b])
        assert err <= 1e-4

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(5, 2, 3))
        b = rng.normal(size=(5, 3, 4))
        got = T.matmul(Tensor(a), Tensor(b)).data
        want = np.stack([a[i] @ b[i] for i in range(5)])
        np.testing.assert_allclose(got, want, rtol=1e-12)


class TestConv2d:
    def test_pointwise_scaling(self):
        x = Tensor(np.ones((1, 3, 3)))
        f = Tensor(np.full((1, 1, 1, 1), 2.0))
        out = T.conv2d(x, f, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 2.0))

    def test_averaging_filter_equals_direct_sum(self):
        rng = np.random.default_rng(0)
        img = rng.normal(size=(1, 3, 3))
        f = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
        out = T.conv2d(Tensor(img), f, stride=1, padding=0)
        assert out.shape == (1, 1, 1)
        np.testing.assert_allclose(out.data[0, 0, 0], img.mean(), rtol=1e-12)

    def test_non_integral_extent_is_error(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))), stride=2, padding=0)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), padding=0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_filter_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
        f = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 5, 5)))
        err = check(lambda: T.tensor_sum(T.mul(T.conv2d(x, f, padding=1), w)), [f, x])
        assert err <= 1e-4

    def test_strided_conv_matches_direct_loop(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 2, 6, 8))
        f = rng.normal(size=(3, 2, 2, 2))
        out = T.conv2d(Tensor(x), Tensor(f), stride=2, padding=0).data
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                patch = x[0, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                np.testing.assert_allclose(out[0, :, i, j], np.tensordot(f, patch, axes=3), rtol=1e-10)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_strided_gradients(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 2, 6, 8)), requires_grad=True)
        f = Tensor(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
        err = check(lambda: T.tensor_sum(T.conv2d(x, f, stride=2, padding=0)), [x, f])
        assert err <= 1e-4


class TestMaxpool:
    def test_simple_window(self):
        out = T.maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
        assert out.data.tolist() == [[[4.0]]]

    def test_tie_routes_to_first_position(self):
        x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            out = T.maxpool2d(x, 2, 2)
            loss = T.tensor_sum(out)
        tape.backward(loss)
        expected = np.zeros((1, 2, 2))
        expected[0, 0, 0] = 1.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 6, 6))
        out = T.maxpool2d(Tensor(x), 2, 2, stride=2).data
        for i in range(3):
            for j in range(3):
                assert out[0, i, j] == x[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()

    def test_window_too_large(self):
        with pytest.raises(DimensionError):
            T.maxpool2d(Tensor(np.ones((1, 2, 2))), 3, 3)

    def test_floor_division_extent(self):
        out = T.maxpool2d(Tensor(np.ones((1, 7, 7))), 2, 2)
        assert out.shape == (1, 3, 3)

    def test_overlapping_stride_gradients(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 5, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(1, 3, 3)))
        err = check(lambda: T.tensor_sum(T.mul(T.maxpool2d(x, 3, 3, stride=1), w)), [x])
        assert err <= 1e-4


class TestLstmStep:
    def _zero_params(self, d_in, d_h):
        return T.LstmParams(
            w_x=Tensor(np.zeros((4 * d_h, d_in))),
            w_h=Tensor(np.zeros((4 * d_h, d_h))),
            b=Tensor(np.zeros(4 * d_h)),
        )

    def test_all_zero(self):
        p = self._zero_params(3, 4)
        y, (h, c) = T.lstm_step(Tensor(np.zeros(3)), (Tensor(np.zeros(4)), Tensor(np.zeros(4))), p)
        np.testing.assert_array_equal(h.data, np.zeros(4))
        np.testing.assert_array_equal(c.data, np.zeros(4))
        assert y is h

    def test_forget_gate_saturation(self):
        # forget bias 100 saturates f to 1, so c' ~= c + i.g
        d = 4
        rng = np.random.default_rng(0)
        p = T.LstmParams(
            w_x=Tensor(rng.normal(size=(4 * d, d)) * 0.3),
            w_h=Tensor(np.zeros((4 * d, d))),
            b=Tensor(np.concatenate([np.zeros(d), np.full(d, 100.0), np.zeros(2 * d)])),
        )
        x = Tensor(rng.normal(size=d))
        c0 = Tensor(rng.normal(size=d))
        _, (_, c1) = T.lstm_step(x, (Tensor(np.zeros(d)), c0), p)
        pre = p.w_x.data @ x.data + p.b.data
        i = 1.0 / (1.0 + np.exp(-pre[:d]))
        g = np.tanh(pre[2 * d : 3 * d])
        np.testing.assert_allclose(c1.data, c0.data + i * g, atol=1e-10)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        d_h, d_in = 8, 5
        p = T.LstmParams(
            w_x=Tensor(rng.normal(size=(4 * d_h, d_in)) * 0.5, requires_grad=True),
            w_h=Tensor(rng.normal(size=(4 * d_h, d_h)) * 0.5, requires_grad=True),
            b=Tensor(rng.normal(size=4 * d_h) * 0.5, requires_grad=True),
        )
        x = Tensor(rng.normal(size=d_in), requires_grad=True)
        h0 = Tensor(rng.normal(size=d_h), requires_grad=True)
        c0 = Tensor(rng.normal(size=d_h), requires_grad=True)
        w = Tensor(rng.normal(size=d_h))

        def loss():
            y, _ = T.lstm_step(x, (h0, c0), p)
            return T.tensor_sum(T.mul(y, w))

        assert check(loss, [p.w_x, p.w_h, p.b, x, h0, c0]) <= 1e-4

    def test_shape_mismatch(self):
        p = self._zero_params(3, 4)
        with pytest.raises(DimensionError):
            T.lstm_step(Tensor(np.zeros(5)), (Tensor(np.zeros(4)), Tensor(np.zeros(4))), p)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, np.full(3, 1 / 3), rtol=1e-15)

    def test_stability_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-9)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        xd = rng.normal(size=7)
        y = T.softmax(Tensor(xd)).data
        jac = np.diag(y) - np.outer(y, y)
        for row in range(7):
            x = Tensor(xd.copy(), requires_grad=True)
            with Tape() as tape:
                out = T.softmax(x)
            tape.backward(out, seed=np.eye(7)[row])
            numeric = numeric_grad(lambda: float(np.exp(x.data - x.data.max()).__getitem__(row) / np.exp(x.data - x.data.max()).sum()), x)
            assert max_rel_error(x.grad, numeric) <= 1e-4
            np.testing.assert_allclose(x.grad, jac[row], atol=1e-10)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-30, 30))
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, values, shift):
        y1 = T.softmax(Tensor(np.asarray(values))).data
        y2 = T.softmax(Tensor(np.asarray(values) + shift)).data
        assert abs(y1.sum() - 1.0) <= 1e-6
        assert np.all(y1 >= 0)
        np.testing.assert_allclose(y1, y2, atol=1e-9)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.cross_entropy(Tensor(np.zeros((5, 36))), np.arange(5) % 36)
        np.testing.assert_allclose(loss.item(), np.log(36.0), rtol=1e-12)

    def test_saturated_correct_logits(self):
        logits = np.zeros((3, 10))
        tgts = [2, 5, 7]
        for r, t_ in enumerate(tgts):
            logits[r, t_] = 100.0
        assert T.cross_entropy(Tensor(logits), tgts).item() < 1e-6

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        logits = Tensor(rng.normal(size=(4, 10)), requires_grad=True)
        targets = rng.integers(0, 10, size=4)
        assert check(lambda: T.cross_entropy(logits, targets), [logits]) <= 1e-4

    def test_weights_mask_rows(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(4, 6))
        tg = rng.integers(0, 6, size=4)
        full = T.cross_entropy(Tensor(logits[:2]), tg[:2]).item()
        masked = T.cross_entropy(Tensor(logits), tg, weights=[1.0, 1.0, 0.0, 0.0]).item()
        np.testing.assert_allclose(masked, full, rtol=1e-12)


class TestTape:
    def test_two_consumers_sum(self):
        xd = np.asarray([1.5, -2.0, 0.5])
        x1 = Tensor(xd.copy(), requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x1, x1))
        tape.backward(loss)
        both = x1.grad.copy()

        x2 = Tensor(xd.copy(), requires_grad=True)
        fixed = Tensor(xd.copy())
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x2, fixed))
        tape.backward(loss)
        np.testing.assert_allclose(both, 2 * x2.grad, rtol=1e-15)

    def test_reuse_raises(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            y = T.tensor_sum(x)
        tape.backward(y)
        with pytest.raises(TapeReuseError):
            tape.backward(y)

    def test_non_scalar_needs_seed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = T.scale(x, 2.0)
        with pytest.raises(DimensionError):
            tape.backward(y)

    def test_dead_branch_is_ignored(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            _dead = T.mul(x, x)
            loss = T.tensor_sum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_forward_determinism(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 6))
        f = rng.normal(size=(2, 1, 3, 3))
        a = T.conv2d(Tensor(x[None]), Tensor(f), padding=1).data
        b = T.conv2d(Tensor(x[None]), Tensor(f), padding=1).data
        assert np.array_equal(a, b)


class TestFusedKernels:
    """The jitted kernels must agree with their numpy twins exactly (f64)."""

    def test_im2col_variants_agree(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 5, 7, 3))
        a = K.im2col_pad_np(x, 3, 3, 1, 1, 1, 1)
        b = K._im2col_pad_jit(x, 3, 3, 1, 1, 1, 1)
        assert np.array_equal(a, b)

    def test_maxpool_variants_agree(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 6, 8, 3))
        y = K.maxpool_fwd_np(x, 2, 2)
        assert np.array_equal(y, K._maxpool_fwd_jit(x, 2, 2))
        g = rng.normal(size=y.shape)
        assert np.array_equal(K.maxpool_bwd_np(x, y, g, 2, 2), K._maxpool_bwd_jit(x, y, g, 2, 2))

    def test_bias_relu_variants_agree(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 8))
        b = rng.normal(size=8)
        y = K.bias_relu_fwd_np(x, b)
        assert np.array_equal(y, K._bias_relu_fwd_jit(x, b))
        g = rng.normal(size=y.shape)
        dx_n, db_n = K.bias_relu_bwd_np(g, y)
        dx_j, db_j = K._bias_relu_bwd_jit(g, y)
        assert np.array_equal(dx_n, dx_j)
        np.testing.assert_allclose(db_n, db_j, rtol=1e-12)

    def test_bias_relu_op_equals_composition(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(4, 5, 6, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        fused = T.bias_relu(x, b).data
        manual = np.maximum(x.data + b.data, 0.0)
        np.testing.assert_allclose(fused, manual, rtol=1e-15)
        assert check(lambda: T.tensor_sum(T.bias_relu(x, b)), [x, b]) <= 1e-4

    def test_additive_score_gradients(self):
        rng = np.random.default_rng(4)
        proj = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
        q = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        v = Tensor(rng.normal(size=3), requires_grad=True)
        manual = np.tanh(proj.data + q.data[:, None, :]) @ v.data
        np.testing.assert_allclose(T.additive_score(proj, q, v).data, manual, rtol=1e-12)
        assert check(lambda: T.tensor_sum(T.additive_score(proj, q, v)), [proj, q, v]) <= 1e-4


class TestFiniteness:
    def test_ops_stay_finite_on_extreme_inputs(self):
        big = Tensor(np.asarray([-1e6, -100.0, 0.0, 100.0, 1e6]))
        for op in (T.sigmoid, T.tanh, T.relu, T.softmax):
            assert np.all(np.isfinite(op(big).data)), op.__name__

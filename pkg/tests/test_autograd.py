import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dynshuffle.autograd as ag
from dynshuffle.autograd import (BatchNormState, Tape, Tensor, backward,
                                 finite_diff_check)
from dynshuffle.errors import (ConfigurationError, DimensionError, InputError,
                               NumericError, UsageError)


def t(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        a = t(np.random.default_rng(0).normal(size=(3, 3)))
        assert np.allclose(ag.matmul(t(np.eye(3)), a).data, a.data)

    def test_hand_2x2(self):
        out = ag.matmul(t([[1, 2], [3, 4]]), t([[5, 6], [7, 8]]))
        assert np.array_equal(out.data, [[19, 22], [43, 50]])

    def test_zero(self):
        a = t(np.random.default_rng(1).normal(size=(2, 4)))
        assert np.array_equal(ag.matmul(t(np.zeros((3, 2))), a).data, np.zeros((3, 4)))

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ag.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))

    def test_backward_rule(self, rng):
        a = t(rng.normal(size=(3, 4)), grad=True)
        b = t(rng.normal(size=(4, 2)), grad=True)
        g = rng.normal(size=(3, 2)).astype(np.float32)
        with Tape() as tape:
            out = ag.matmul(a, b)
            loss = ag.sum_all(ag.mul(out, Tensor(g)))
        backward(loss, tape)
        assert np.allclose(a.grad, g @ b.data.T, atol=1e-6)
        assert np.allclose(b.grad, a.data.T @ g, atol=1e-6)


class TestConv:
    def test_identity_1x1(self, rng):
        x = t(rng.normal(size=(2, 3, 5, 5)))
        w = t(np.eye(3).reshape(3, 3, 1, 1))
        assert np.allclose(ag.conv2d_grouped(x, w).data, x.data)

    def test_allones_3x3_sums(self, rng):
        x = t(rng.normal(size=(1, 1, 3, 3)))
        w = t(np.ones((1, 1, 3, 3)))
        out = ag.conv2d_grouped(x, w)
        assert out.shape == (1, 1, 1, 1)
        assert np.isclose(out.data.sum(), x.data.sum(), atol=1e-5)

    def test_groups_equal_split_concat(self, rng):
        # grouped conv must equal independent per-group convolutions, exactly
        x = t(rng.normal(size=(2, 6, 7, 7)))
        w = t(rng.normal(size=(8, 3, 3, 3)))
        both = ag.conv2d_grouped(x, w, groups=2, stride=1, pad=1).data
        xa, xb = t(x.data[:, :3]), t(x.data[:, 3:])
        wa, wb = t(w.data[:4]), t(w.data[4:])
        ya = ag.conv2d_grouped(xa, wa, pad=1).data
        yb = ag.conv2d_grouped(xb, wb, pad=1).data
        assert np.array_equal(both, np.concatenate([ya, yb], axis=1))

    def test_depthwise_matches_manual(self, rng):
        x = t(rng.normal(size=(1, 4, 5, 5)))
        w = t(rng.normal(size=(4, 1, 3, 3)))
        out = ag.conv2d_grouped(x, w, groups=4, pad=1).data
        for c in range(4):
            ref = ag.conv2d_grouped(t(x.data[:, c:c + 1]), t(w.data[c:c + 1]),
                                    pad=1).data
            assert np.allclose(out[:, c:c + 1], ref, atol=1e-6)

    def test_bad_groups(self):
        with pytest.raises(ConfigurationError):
            ag.conv2d_grouped(t(np.zeros((1, 5, 4, 4))), t(np.zeros((4, 2, 1, 1))),
                              groups=2)

    def test_conv1d_table_lengths(self):
        # published Conv1D rows: (L, k, s, p) -> Lout
        for length, k, s, p, lout in [(20, 6, 4, 1, 5), (80, 26, 4, 11, 20),
                                      (40, 13, 5, 4, 8), (234, 39, 6, 36, 45)]:
            x = t(np.zeros((1, 1, length)))
            w = t(np.zeros((3, 1, k)))
            assert ag.conv1d(x, w, stride=s, pad=p).shape == (1, 3, lout)

    def test_conv1d_identity_kernel(self, rng):
        x = t(rng.normal(size=(2, 1, 9)))
        w = t(np.ones((1, 1, 1)))
        assert np.allclose(ag.conv1d(x, w).data, x.data)

    def test_conv1d_kernel_too_long(self):
        with pytest.raises(ConfigurationError):
            ag.conv1d(t(np.zeros((1, 1, 4))), t(np.zeros((1, 1, 8))), pad=1)


class TestBatchNorm:
    def test_constant_input_gives_offset(self):
        st = BatchNormState(3)
        x = t(np.full((4, 3, 2, 2), 7.0))
        offs = t([1.0, -2.0, 0.5])
        out = ag.batchnorm(x, t(np.ones(3)), offs, st, training=True)
        assert np.allclose(out.data, np.broadcast_to(offs.data.reshape(1, 3, 1, 1),
                                                     out.shape), atol=1e-4)

    def test_standardized_passthrough(self, rng):
        x = rng.normal(size=(512, 2)).astype(np.float32)
        x = (x - x.mean(0)) / x.std(0)
        st = BatchNormState(2)
        out = ag.batchnorm(t(x), t(np.ones(2)), t(np.zeros(2)), st, training=True)
        assert np.allclose(out.data, x, atol=1e-4)

    def test_moments_match_params(self, rng):
        scale = np.asarray([1.5, 0.5], dtype=np.float32)
        offset = np.asarray([0.3, -0.7], dtype=np.float32)
        st = BatchNormState(2)
        x = t(rng.normal(2.0, 3.0, size=(2048, 2)))
        out = ag.batchnorm(x, Tensor(scale), Tensor(offset), st, training=True).data
        # same-batch moments are exact up to the epsilon floor
        assert np.allclose(out.mean(axis=0), offset, atol=1e-4)
        assert np.allclose(out.var(axis=0), scale ** 2, atol=1e-4)

    def test_running_stats_update(self, rng):
        st = BatchNormState(2)
        x = t(rng.normal(1.0, 2.0, size=(64, 2)))
        ag.batchnorm(x, t(np.ones(2)), t(np.zeros(2)), st, training=True)
        assert np.allclose(st.running_mean,
                           0.1 * x.data.mean(0), atol=1e-5)

    def test_eval_before_train_uses_init_stats(self, rng):
        st = BatchNormState(2)
        x = t(rng.normal(size=(4, 2)))
        out = ag.batchnorm(x, t(np.ones(2)), t(np.zeros(2)), st, training=False)
        assert np.allclose(out.data, x.data / np.sqrt(1 + st.eps), atol=1e-6)


class TestSmallOps:
    def test_relu(self):
        assert np.array_equal(ag.relu(t([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_global_avg_pool_constant(self):
        x = t(np.full((2, 3, 4, 4), 2.5))
        assert np.allclose(ag.global_avg_pool(x).data, 2.5)

    def test_affine_identity(self, rng):
        x = t(rng.normal(size=(4, 3)))
        out = ag.affine(x, t(np.eye(3)), t(np.zeros(3)))
        assert np.allclose(out.data, x.data)

    def test_row_softmax_uniform(self):
        out = ag.row_softmax(t(np.zeros((2, 5))))
        assert np.allclose(out.data, 0.2)

    def test_row_softmax_closed_form(self):
        out = ag.row_softmax(t([[0.0, np.log(2.0)]]))
        assert np.allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-6)

    def test_row_softmax_shift_invariance(self, rng):
        x = rng.normal(size=(3, 6)).astype(np.float32)
        a = ag.row_softmax(t(x)).data
        b = ag.row_softmax(t(x + 100.0)).data
        assert np.allclose(a, b, atol=1e-6)

    def test_cross_entropy_uniform(self):
        out = ag.cross_entropy_mean(t(np.zeros((3, 7))), np.array([0, 3, 6]))
        assert np.isclose(float(out.data), np.log(7), atol=1e-6)

    def test_cross_entropy_confident(self):
        logits = np.full((2, 4), -20.0, dtype=np.float32)
        logits[0, 1] = 20.0
        logits[1, 2] = 20.0
        out = ag.cross_entropy_mean(t(logits), np.array([1, 2]))
        assert float(out.data) < 1e-5

    def test_cross_entropy_hand_case(self):
        logits = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]], dtype=np.float32)
        labels = np.array([1, 2])
        z = logits - logits.max(1, keepdims=True)
        expect = np.mean(np.log(np.exp(z).sum(1)) - z[np.arange(2), labels])
        out = ag.cross_entropy_mean(t(logits), labels)
        assert np.isclose(float(out.data), expect, atol=1e-6)

    def test_cross_entropy_bad_label(self):
        with pytest.raises(InputError):
            ag.cross_entropy_mean(t(np.zeros((2, 3))), np.array([0, 3]))


class TestKron:
    def test_identity_left(self, rng):
        a = rng.normal(size=(3, 4)).astype(np.float32)
        out = ag.kron(t(np.eye(1)), t(a))
        assert np.array_equal(out.data, a)

    def test_swap_blocks(self):
        out = ag.kron(t([[0, 1], [1, 0]]), t(np.eye(2)))
        assert np.array_equal(out.data.argmax(axis=1), [2, 3, 0, 1])

    def test_shape_law(self, rng):
        out = ag.kron(t(rng.normal(size=(2, 5))), t(rng.normal(size=(3, 4))))
        assert out.shape == (6, 20)

    def test_matches_numpy(self, rng):
        a = rng.normal(size=(3, 2)).astype(np.float32)
        b = rng.normal(size=(2, 4)).astype(np.float32)
        assert np.allclose(ag.kron(t(a), t(b)).data, np.kron(a, b), atol=1e-6)

    def test_rank2_required(self):
        with pytest.raises(DimensionError):
            ag.kron(t(np.zeros(3)), t(np.zeros((2, 2))))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
           st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_mixed_product_property(self, m, p, q, seed):
        # (A⊗B)(C⊗D) = (AC)⊗(BD)
        r = np.random.default_rng(seed)
        a, c = r.normal(size=(m, m)), r.normal(size=(m, m))
        b, d = r.normal(size=(p, q)), r.normal(size=(q, p))
        left = np.kron(a, b) @ np.kron(c, d)
        right = np.kron(a @ c, b @ d)
        got = ag.matmul(ag.kron(t(a), t(b)), ag.kron(t(c), t(d))).data
        assert np.allclose(got, right, atol=1e-5)
        assert np.allclose(left, right, atol=1e-5)


class TestBackwardEngine:
    def test_sum_gradient_ones(self, rng):
        x = t(rng.normal(size=(3, 4)), grad=True)
        with Tape() as tape:
            loss = ag.sum_all(x)
        backward(loss, tape)
        assert np.array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_quadratic_gradient(self, rng):
        x = t(rng.normal(size=5), grad=True)
        with Tape() as tape:
            loss = ag.scale(ag.sum_all(ag.mul(x, x)), 0.5)
        backward(loss, tape)
        assert np.allclose(x.grad, x.data, atol=1e-6)

    def test_non_scalar_loss_rejected(self, rng):
        x = t(rng.normal(size=3), grad=True)
        with Tape() as tape:
            y = ag.mul(x, x)
        with pytest.raises(UsageError):
            backward(y, tape)

    def test_double_backward_accumulates(self, rng):
        x = t(rng.normal(size=4), grad=True)
        with Tape() as tape:
            loss = ag.sum_all(ag.mul(x, x))
        backward(loss, tape)
        g1 = x.grad.copy()
        backward(loss, tape)
        assert np.allclose(x.grad, 2 * g1, atol=1e-6)

    def test_backward_linearity(self, rng):
        xv = rng.normal(size=(3, 3)).astype(np.float32)
        w = rng.normal(size=(3, 3)).astype(np.float32)

        def grad_of(alpha, beta):
            x = Tensor(xv.copy(), requires_grad=True)
            with Tape() as tape:
                f = ag.sum_all(ag.matmul(x, Tensor(w)))
                g = ag.sum_all(ag.mul(x, x))
                loss = ag.add(ag.scale(f, alpha), ag.scale(g, beta))
            backward(loss, tape)
            return x.grad

        ga = grad_of(1.0, 0.0)
        gb = grad_of(0.0, 1.0)
        gc = grad_of(0.7, -0.3)
        assert np.allclose(gc, 0.7 * ga - 0.3 * gb, atol=1e-6)

    def test_no_tape_records_nothing(self, rng):
        x = t(rng.normal(size=3), grad=True)
        y = ag.mul(x, x)
        assert not y.requires_grad


class TestFiniteDiff:
    def test_sum_exact(self, rng):
        err = finite_diff_check(lambda v: ag.sum_all(v), t(rng.normal(size=(3, 3))))
        assert err < 1e-10

    def test_matmul_sum(self, rng):
        w = Tensor(rng.normal(size=(4, 2)).astype(np.float32))
        err = finite_diff_check(lambda v: ag.sum_all(ag.matmul(v, w)),
                                t(rng.normal(size=(3, 4))))
        assert err < 1e-4

    def test_relu_off_kink(self, rng):
        x = rng.normal(size=8)
        x = np.where(np.abs(x) < 0.1, x + np.sign(x) * 0.3, x).astype(np.float32)
        err = finite_diff_check(lambda v: ag.sum_all(ag.relu(v)), Tensor(x))
        assert err < 1e-4

    def test_nonfinite_raises(self):
        def bad(v):
            return ag.sum_all(ag.sqrt(v))

        with pytest.raises(NumericError):
            finite_diff_check(bad, t([-1.0]))

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=10, deadline=None)
    def test_primitive_battery_random(self, seed):
        r = np.random.default_rng(seed)
        w = Tensor(r.normal(size=(4, 3)).astype(np.float32))
        err = finite_diff_check(
            lambda v: ag.sum_all(ag.row_softmax(ag.matmul(v, w))),
            Tensor(r.normal(size=(2, 4)).astype(np.float32)))
        assert err < 1e-4


class TestPooling:
    def test_max_pool(self):
        x = t(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        out = ag.max_pool2d(x, 2, 2)
        assert np.array_equal(out.data.reshape(2, 2), [[5, 7], [13, 15]])

    def test_avg_pool(self):
        x = t(np.ones((1, 2, 4, 4)))
        out = ag.avg_pool2d(x, 2, 2)
        assert np.allclose(out.data, 1.0)

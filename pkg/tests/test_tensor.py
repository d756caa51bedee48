import numpy as np
import pytest

from cuedseq.tensor import (
    Tape,
    Tensor,
    add,
    backward,
    bmm,
    concat,
    conv2d,
    cross_entropy,
    div,
    elementwise,
    exp,
    gather_cols,
    linear,
    log,
    log_softmax_rows,
    logaddexp,
    matmul,
    mul,
    permute,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_axis,
    softmax_rows,
    sqrt,
    tanh,
    tensor_from,
    tmean,
    tsum,
    zero_grads,
)

from oracles import check_gradients, rel_err


class TestTensorFrom:
    def test_zero_case(self):
        t = tensor_from([0, 0, 0, 0], [2, 2])
        assert t.shape == (2, 2)
        assert np.all(t.data == 0)

    def test_identity_construction(self):
        t = tensor_from([1, 2, 3], [3])
        np.testing.assert_array_equal(t.data, [1.0, 2.0, 3.0])
        assert t.requires_grad is False

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            tensor_from([1, 2, 3], [2, 2])

    def test_scalar_shape(self):
        t = tensor_from([5.0], [])
        assert t.item() == 5.0


class TestForwardOps:
    def test_matmul_identity(self):
        eye = Tensor(np.eye(2))
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(matmul(eye, b).data, b.data)

    def test_matmul_direct(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(matmul(a, b).data, [[3.0], [7.0]])

    def test_matmul_dim_mismatch(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_relu_sign_cases(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_tanh_origin(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5
        assert tanh(Tensor([0.0])).data[0] == 0.0

    def test_elementwise_shape_mismatch(self):
        with pytest.raises(ValueError):
            elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_elementwise_dispatch(self):
        a = Tensor([1.0, -2.0])
        assert np.all(elementwise("relu", a).data == [1.0, 0.0])
        assert np.all(elementwise("scale", a, 2.0).data == [2.0, -4.0])
        with pytest.raises(ValueError):
            elementwise("nope", a)

    def test_conv2d_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        k = Tensor(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(conv2d(x, k).data, x.data)

    def test_conv2d_ones(self):
        x = Tensor(np.ones((1, 4, 4)))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = conv2d(x, k, stride=2)
        assert out.shape == (1, 2, 2)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 4.0))

    def test_conv2d_kernel_too_large(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 5, 5))))

    def test_conv2d_batched_matches_single(self):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=(4, 2, 6, 6))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        batched = conv2d(Tensor(xs), k, stride=2, padding=1).data
        for i in range(4):
            single = conv2d(Tensor(xs[i]), k, stride=2, padding=1).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)


class TestSoftmax:
    def test_uniform(self):
        out = softmax_rows(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 5))
        c = rng.normal(size=(4, 1))
        a = softmax_rows(Tensor(x)).data
        b = softmax_rows(Tensor(x + c)).data
        assert np.max(np.abs(a - b)) < 1e-12

    def test_log_ratios(self):
        out = softmax_rows(Tensor(np.log([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = rng.normal(scale=10, size=(20, 7))
        s = softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=1), np.ones(20), atol=1e-9)


class TestCrossEntropy:
    def test_uniform_two_classes(self):
        loss = cross_entropy(Tensor([[0.0, 0.0]]), [1])
        assert abs(loss.item() - np.log(2.0)) < 1e-12

    def test_saturating(self):
        loss = cross_entropy(Tensor([[50.0, 0.0, 0.0]]), [0])
        assert loss.item() < 1e-8

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(3, 4))
        targets = [2, 0, 3]
        expected = 0.0
        for row, t in zip(logits, targets):
            expected += -np.log(np.exp(row[t]) / np.exp(row).sum())
        expected /= 3
        got = cross_entropy(Tensor(logits), targets).item()
        assert abs(got - expected) < 1e-10

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(mul(x, x))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-14)

    def test_constant_loss_gives_zero_grad(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(scale(x, 0.0))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = mul(x, x)
        with pytest.raises(ValueError):
            backward(y, tape)

    def test_consumed_tape_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(x)
        backward(loss, tape)
        with pytest.raises(RuntimeError):
            backward(loss, tape)

    def test_independent_subgraphs(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = add(tsum(mul(a, a)), tsum(mul(b, b)))
        backward(loss, tape)
        ga, gb = a.grad.copy(), b.grad.copy()

        zero_grads([a, b])
        with Tape() as t1:
            l1 = tsum(mul(a, a))
        backward(l1, t1)
        with Tape() as t2:
            l2 = tsum(mul(b, b))
        backward(l2, t2)
        np.testing.assert_array_equal(ga, a.grad)
        np.testing.assert_array_equal(gb, b.grad)

    def test_no_tape_means_no_records(self):
        x = Tensor([1.0], requires_grad=True)
        y = mul(x, x)
        assert y.requires_grad
        assert Tape.active() is None


def _well_conditioned(seed, shape, low=0.2, high=1.5, signs=True):
    rng = np.random.default_rng(seed)
    mag = rng.uniform(low, high, size=shape)
    if signs:
        mag *= rng.choice([-1.0, 1.0], size=shape)
    return Tensor(mag, requires_grad=True)


class TestGradientsAgainstFiniteDifferences:
    """Central-difference checks for every differentiable primitive."""

    @pytest.mark.parametrize("seed", range(5))
    def test_binary_ops(self, seed):
        a = _well_conditioned(seed, (3, 4))
        b = _well_conditioned(seed + 100, (3, 4))
        for op in (add, sub_, mul, div):
            err = check_gradients(lambda: tsum(op(a, b)), [a, b], rng=np.random.default_rng(seed))
            assert err < 1e-6, op

    @pytest.mark.parametrize("seed", range(5))
    def test_unary_ops(self, seed):
        x = _well_conditioned(seed, (4, 3))
        for op in (relu, sigmoid, tanh, exp):
            err = check_gradients(lambda: tsum(op(x)), [x], rng=np.random.default_rng(seed))
            assert err < 1e-6, op
        pos = _well_conditioned(seed, (4, 3), signs=False)
        for op in (log, sqrt):
            err = check_gradients(lambda: tsum(op(pos)), [pos], rng=np.random.default_rng(seed))
            assert err < 1e-6, op

    @pytest.mark.parametrize("seed", range(5))
    def test_matmul_grad(self, seed):
        a = _well_conditioned(seed, (3, 4))
        b = _well_conditioned(seed + 1, (4, 2))
        err = check_gradients(lambda: tsum(matmul(a, b)), [a, b], rng=np.random.default_rng(seed))
        assert err < 1e-6

    def test_bmm_permute_reshape_grad(self):
        a = _well_conditioned(0, (2, 3, 4))
        b = _well_conditioned(1, (2, 4, 3))

        def loss():
            prod = bmm(a, b)
            return tsum(mul(permute(prod, (1, 0, 2)), permute(prod, (1, 0, 2))))

        assert check_gradients(loss, [a, b]) < 1e-6

    def test_concat_slice_grad(self):
        a = _well_conditioned(2, (2, 3))
        b = _well_conditioned(3, (2, 2))

        def loss():
            c = concat([a, b], axis=1)
            s = slice_axis(c, 1, 1, 4)
            return tsum(mul(s, s))

        assert check_gradients(loss, [a, b]) < 1e-6

    def test_softmax_grads(self):
        x = _well_conditioned(4, (3, 5))
        assert check_gradients(lambda: tsum(mul(softmax_rows(x), x)), [x]) < 1e-6
        assert check_gradients(lambda: tsum(mul(log_softmax_rows(x), x)), [x]) < 1e-6

    def test_logaddexp_gather_grad(self):
        a = _well_conditioned(5, (2, 4))
        b = _well_conditioned(6, (2, 4))

        def loss():
            la = logaddexp(a, b)
            return tsum(gather_cols(la, [0, 2, 2]))

        assert check_gradients(loss, [a, b]) < 1e-6

    def test_sum_axis_grads(self):
        x = _well_conditioned(7, (3, 4, 2))
        assert check_gradients(lambda: tsum(mul(tsum(x, axis=1), tsum(x, axis=1))), [x]) < 1e-6
        assert check_gradients(lambda: tsum(mul(tmean(x, axis=(0, 2), keepdims=True), x)), [x]) < 1e-6

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2)])
    def test_conv2d_grad(self, stride, padding):
        x = _well_conditioned(8, (2, 2, 7, 7))
        k = _well_conditioned(9, (3, 2, 3, 3))
        err = check_gradients(
            lambda: tsum(mul(conv2d(x, k, stride, padding), conv2d(x, k, stride, padding))),
            [x, k],
        )
        assert err < 1e-5

    def test_cross_entropy_grad(self):
        logits = _well_conditioned(10, (4, 5))
        err = check_gradients(lambda: cross_entropy(logits, [0, 3, 1, 4]), [logits])
        assert err < 1e-6

    def test_linear_grad(self):
        x = _well_conditioned(11, (3, 4))
        w = _well_conditioned(12, (4, 2))
        b = _well_conditioned(13, (2,))
        assert check_gradients(lambda: tsum(mul(linear(x, w, b), linear(x, w, b))), [x, w, b]) < 1e-6


def sub_(a, b):
    from cuedseq.tensor import sub

    return sub(a, b)


class TestBroadcastInternals:
    def test_bias_row_broadcast(self):
        x = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = tsum(add(x, b))
        backward(loss, tape)
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

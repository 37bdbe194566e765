"""Tensor engine tests: forward oracles, gradient checks, graph semantics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketch3d import autodiff as ad
from sketch3d.autodiff import ShapeMismatchError, Tensor, grad_check


def conv2d_direct(x, w, b, stride, padding):
    """Direct-loop convolution oracle, independent of the im2col path."""
    bsz, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((bsz, cout, oh, ow))
    for n in range(bsz):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, co, i, j] = (patch * w[co]).sum()
            if b is not None:
                out[n, co] += b[co]
    return out


class TestForwardOracles:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = Tensor(np.eye(2))
        assert np.array_equal(ad.matmul(a, eye).data, a.data)

    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor([0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one_and_positive(self, rng):
        x = Tensor(rng.normal(size=(6, 9)) * 20)
        s = ad.softmax(x, axis=1).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
        assert (s > 0).all()

    def test_conv2d_all_ones_kernel_sums_input(self, rng):
        x = rng.normal(size=(1, 1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(w), None, stride=1, padding=0)
        assert out.shape == (1, 1, 1, 1)
        np.testing.assert_allclose(out.item(), x.sum(), rtol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_conv2d_matches_direct_loops(self, rng, stride, padding):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=(4,))
        got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
        want = conv2d_direct(x, w, b, stride, padding)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_shape_mismatch_diagnostics_name_op_and_shapes(self):
        with pytest.raises(ShapeMismatchError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        with pytest.raises(ShapeMismatchError, match="conv2d"):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_finite_outputs_on_extreme_inputs(self):
        x = Tensor(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
        for op in (ad.sigmoid, ad.tanh, ad.softplus, lambda t: ad.softmax(t, 0)):
            assert np.isfinite(op(x).data).all()


class TestBackward:
    def test_square_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        y = ad.reduce_sum(ad.mul(x, x))
        y.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_sigmoid_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        ad.sigmoid(x).backward()
        np.testing.assert_allclose(x.grad, 0.25, rtol=1e-12)

    def test_backward_rejects_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.mul(x, x))

    def test_gradient_accumulation_is_exact_sum(self, rng):
        x0 = rng.normal(size=(4, 4))

        def f(t):
            return ad.reduce_sum(ad.mul(t, t))

        def g(t):
            return ad.reduce_sum(ad.exp(t * 0.1))

        xa = Tensor(x0.copy(), requires_grad=True)
        ad.backward(ad.add(f(xa), g(xa)))
        xf = Tensor(x0.copy(), requires_grad=True)
        ad.backward(f(xf))
        xg = Tensor(x0.copy(), requires_grad=True)
        ad.backward(g(xg))
        np.testing.assert_array_equal(xa.grad, xf.grad + xg.grad)

    def test_each_node_visited_once_diamond_graph(self, rng):
        # y = sum((x*2) + (x*3)): grad must be exactly 5, not 10
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        y = ad.reduce_sum(ad.add(x * 2.0, x * 3.0))
        y.backward()
        np.testing.assert_array_equal(x.grad, np.full(3, 5.0))

    def test_composite_conv_relu_sum_matches_finite_differences(self, rng):
        x0 = rng.normal(size=(1, 1, 4, 4))
        w = Tensor(rng.normal(size=(2, 1, 3, 3)))

        def fn(t):
            return ad.reduce_sum(ad.relu(ad.conv2d(t, w, None, 1, 1)))

        assert grad_check(fn, Tensor(x0), eps=1e-3) < 1e-4

    def test_deep_chain_does_not_hit_recursion_limit(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = x
        for _ in range(3000):
            y = y * 1.0001
        ad.backward(ad.reduce_sum(y))
        assert x.grad is not None


class TestGradCheckContract:
    def test_linear_function_error_tiny(self, rng):
        err = grad_check(lambda t: ad.reduce_sum(t), Tensor(rng.normal(size=(5,))))
        assert err <= 1e-10

    def test_rejects_non_scalar_fn(self, rng):
        with pytest.raises(ValueError, match="scalar"):
            grad_check(lambda t: t * 2.0, Tensor(rng.normal(size=(3,))))

    def test_rejects_bad_eps(self, rng):
        with pytest.raises(ValueError, match="eps"):
            grad_check(lambda t: ad.reduce_sum(t), Tensor(np.ones(2)), eps=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_broadcast_backward_matches_fd(seed):
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(3, 4))
    b = Tensor(rng.normal(size=(4,)))

    def fn(t):
        return ad.reduce_sum(ad.mul(ad.add(t, b), b))

    assert grad_check(fn, Tensor(a0), eps=1e-3) < 1e-4


def test_tensor_shape_data_invariant(rng):
    t = Tensor(rng.normal(size=(3, 5)))
    assert int(np.prod(t.shape)) == t.data.size


def test_grad_shape_matches_tensor_shape(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    ad.backward(ad.reduce_mean(ad.tanh(x)))
    assert x.grad.shape == x.shape

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sean import tensor as T
from sean.gradcheck import check_gradients
from sean.tensor import ShapeError, Tensor


def conv_loop_oracle(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, c, y * stride + dy, xx * stride + dx] * w[o, c, dy, dx]
                    out[i, o, y, xx] = acc
    return out


def weighted_sum(t, weights):
    return T.sum(T.mul(t, Tensor(weights)))


# -- conv2d -------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 4, 5))
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    assert np.array_equal(out.data, x)


def test_conv_all_ones_hand_values():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), pad=1)
    expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=float)
    assert np.array_equal(out.data[0, 0], expected)


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1), (2, 0)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    assert np.max(np.abs(out.data - conv_loop_oracle(x, w, b, stride, pad))) < 1e-12


@settings(max_examples=15, deadline=None)
@given(
    h=st.integers(3, 8), w=st.integers(3, 8), k=st.sampled_from([1, 3, 5]),
    stride=st.integers(1, 2), seed=st.integers(0, 1000),
)
def test_conv_oracle_property(h, w, k, stride, seed):
    rng = np.random.default_rng(seed)
    pad = k // 2
    x = rng.standard_normal((1, 2, h, w))
    wt = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    out = T.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, pad=pad)
    assert np.max(np.abs(out.data - conv_loop_oracle(x, wt, b, stride, pad))) < 1e-12


def test_conv_linearity():
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((2, 2, 3, 6, 6))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    a, b = 1.7, -0.3
    lhs = T.conv2d(Tensor(a * x + b * y), w, None, pad=1).data
    rhs = a * T.conv2d(Tensor(x), w, None, pad=1).data + b * T.conv2d(Tensor(y), w, None, pad=1).data
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_conv_shape_errors_name_dimension():
    with pytest.raises(ShapeError, match="input channels"):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="odd"):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2))))


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5)])
def test_conv_gradients(stride, pad, k):
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, k, k)), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    probe = rng.standard_normal(T.conv2d(x, w, b, stride=stride, pad=pad).shape)
    err = check_gradients(lambda: weighted_sum(T.conv2d(x, w, b, stride=stride, pad=pad), probe), [x, w, b])
    assert err < 1e-4


# -- upsample / pooling -----------------------------------------------------------

def test_upsample_factor_one_is_identity():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    assert np.array_equal(T.upsample_nearest(Tensor(x), 1).data, x)


def test_upsample_replicates_blocks():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    assert np.array_equal(T.upsample_nearest(Tensor(x), 2).data[0, 0], expected)


def test_upsample_backward_sums_blocks():
    x = Tensor(np.zeros((1, 2, 2, 3)), requires_grad=True)
    T.sum(T.upsample_nearest(x, 2)).backward()
    assert np.array_equal(x.grad, np.full((1, 2, 2, 3), 4.0))


def test_upsample_zero_factor_rejected():
    with pytest.raises(ValueError):
        T.upsample_nearest(Tensor(np.zeros((1, 1, 2, 2))), 0)


def test_avg_pool_gradient():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((1, 2, 4, 6)), requires_grad=True)
    probe = rng.standard_normal((1, 2, 2, 3))
    assert check_gradients(lambda: weighted_sum(T.avg_pool2d(x, 2), probe), [x]) < 1e-4


# -- elementwise ------------------------------------------------------------------

def test_relu_and_lrelu_values():
    assert T.relu(Tensor(-1.0)).item() == 0.0
    assert T.relu(Tensor(2.0)).item() == 2.0
    assert T.lrelu(Tensor(-1.0), 0.2).item() == pytest.approx(-0.2, abs=1e-15)
    assert T.elementwise("lrelu", Tensor(-1.0)).item() == pytest.approx(-0.2, abs=1e-15)


def test_tanh_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    T.tanh(x).backward()
    h = 1e-5
    fd = (np.tanh(h) - np.tanh(-h)) / (2 * h)
    assert x.grad == 1.0
    assert abs(x.grad - fd) < 1e-8


@pytest.mark.parametrize("kind", ["relu", "lrelu", "tanh", "sigmoid", "sqrt", "abs"])
def test_pointwise_gradients(kind):
    rng = np.random.default_rng(5)
    data = rng.uniform(0.2, 2.0, (2, 3, 2, 2)) * rng.choice([-1, 1], (2, 3, 2, 2))
    if kind == "sqrt":
        data = np.abs(data)
    x = Tensor(data, requires_grad=True)
    fn = {"relu": T.relu, "lrelu": T.lrelu, "tanh": T.tanh, "sigmoid": T.sigmoid,
          "sqrt": T.sqrt, "abs": T.absolute}[kind]
    probe = rng.standard_normal(data.shape)
    assert check_gradients(lambda: weighted_sum(fn(x), probe), [x]) < 1e-4


def test_channel_broadcast_binary_ops_gradients():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
    v = Tensor(rng.uniform(0.5, 2.0, 3), requires_grad=True)
    s = Tensor(np.array(0.7), requires_grad=True)
    probe = rng.standard_normal((2, 3, 2, 2))

    def f():
        y = T.div(T.sub(T.mul(x, v), v), v)
        return weighted_sum(T.add(T.mul(s, y), v), probe)

    assert check_gradients(f, [x, v, s]) < 1e-4


def test_non_broadcastable_shapes_rejected():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3, 2, 2))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_layout_ops_gradients():
    rng = np.random.default_rng(7)
    a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 1, 4)), requires_grad=True)
    idx = np.array([[0, 2], [1, 1]])

    def f():
        c = T.concat([a, b], axis=1)
        t = T.transpose(c, (2, 0, 1))
        g = T.take(t, idx, axis=2)
        e = T.einsum("kij,ij->k", T.reshape(g, (4, 2, 4)), Tensor(rng_fixed))
        return T.sum(T.mul(e, e)) + T.mean(T.broadcast_to(b, (2, 3, 4))) + T.sum(a[1:, :2])

    rng_fixed = np.random.default_rng(8).standard_normal((2, 4))
    assert check_gradients(f, [a, b]) < 1e-4


# -- instance norm ------------------------------------------------------------------

def test_instance_norm_constant_slice_is_zero():
    out = T.instance_norm(Tensor(np.full((1, 2, 3, 3), 5.0)))
    assert np.all(out.data == 0.0)


def test_instance_norm_two_values():
    out = T.instance_norm(Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2)), eps=1e-12)
    assert np.allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-9)


def test_instance_norm_statistics():
    x = np.random.default_rng(9).standard_normal((2, 3, 5, 5)) * 3 + 1
    out = T.instance_norm(Tensor(x), eps=1e-5).data
    assert np.abs(out.mean(axis=(2, 3))).max() < 1e-12
    assert np.abs(out.var(axis=(2, 3)) - 1).max() < 1e-4
    # with eps = 1e-5 the variance is var / (var + eps)
    assert np.abs(out.var(axis=(2, 3)) - x.var(axis=(2, 3)) / (x.var(axis=(2, 3)) + 1e-5)).max() < 1e-12


def test_instance_norm_gradient():
    rng = np.random.default_rng(10)
    x = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
    probe = rng.standard_normal((2, 2, 3, 3))
    assert check_gradients(lambda: weighted_sum(T.instance_norm(x), probe), [x]) < 1e-4


# -- backward --------------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    data = np.random.default_rng(11).standard_normal(5)
    x = Tensor(data, requires_grad=True)
    T.sum(T.mul(x, x)).backward()
    assert np.array_equal(x.grad, 2 * data)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        T.mul(x, x).backward()


def test_backward_twice_doubles_gradients():
    rng = np.random.default_rng(12)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    loss = T.sum(T.tanh(T.conv2d(x, w, None, pad=1)))
    loss.backward()
    first_x, first_w = x.grad.copy(), w.grad.copy()
    loss.backward()
    assert np.array_equal(x.grad, 2 * first_x)
    assert np.array_equal(w.grad, 2 * first_w)


def test_shared_subgraph_gradient():
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)

    def f():
        y = T.tanh(x)
        return T.sum(T.mul(y, T.lrelu(y)))

    assert check_gradients(f, [x]) < 1e-4


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad and y.is_leaf


def test_outputs_stay_finite():
    rng = np.random.default_rng(14)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)) * 50, requires_grad=True)
    w = Tensor(rng.standard_normal((3, 3, 3, 3)), requires_grad=True)
    out = T.instance_norm(T.tanh(T.conv2d(x, w, None, pad=1)))
    T.sum(T.sigmoid(out)).backward()
    assert np.all(np.isfinite(out.data)) and np.all(np.isfinite(x.grad)) and np.all(np.isfinite(w.grad))

import numpy as np
import pytest

from terrafuse import tensor as T
from terrafuse.gradcheck import check_gradients
from terrafuse.optim import AdamWState, NonFiniteGradientError, adamw_step
from terrafuse.tensor import Tensor

TOL = 1e-4


def rand(rng, *shape):
    return rng.standard_normal(shape)


# -- conv2d ---------------------------------------------------------------------


@pytest.mark.parametrize("x_shape,w_shape,pad,dil,expected", [
    ((1, 11, 64, 64), (16, 11, 3, 3), 1, 1, (1, 16, 64, 64)),
    ((1, 8, 64, 64), (8, 8, 3, 3), 2, 2, (1, 8, 64, 64)),
])
def test_conv2d_shapes(x_shape, w_shape, pad, dil, expected):
    out = T.conv2d(Tensor(np.zeros(x_shape)), Tensor(np.zeros(w_shape)), Tensor(np.zeros(w_shape[0])),
                   stride=1, padding=pad, dilation=dil)
    assert out.shape == expected


def test_conv2d_output_size_formula():
    for h, k, s, p, d in [(7, 3, 2, 1, 1), (10, 3, 1, 0, 3), (9, 2, 3, 2, 2)]:
        out = T.conv2d(Tensor(np.ones((1, 1, h, h))), Tensor(np.ones((1, 1, k, k))), None, s, p, d)
        assert out.shape[2] == (h + 2 * p - d * (k - 1) - 1) // s + 1


def test_conv2d_channel_mismatch_names_axis():
    with pytest.raises(ValueError, match="channel axis"):
        T.conv2d(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((4, 2, 3, 3))))


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x, w, b = rand(rng, 2, 3, 7, 6), rand(rng, 4, 3, 3, 3), rand(rng, 4)
    stride, pad, dil = 2, 2, 2
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, dil).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    acc = b[o]
                    for c in range(3):
                        for u in range(3):
                            for v in range(3):
                                acc += w[o, c, u, v] * xp[n, c, i * stride + u * dil, j * stride + v * dil]
                    ref[n, o, i, j] = acc
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("stride,pad,dil", [(1, 1, 1), (1, 2, 2), (2, 1, 1)])
def test_conv2d_gradients(seed, stride, pad, dil):
    rng = np.random.default_rng(seed)
    errs = check_gradients(lambda x, w, b: T.conv2d(x, w, b, stride, pad, dil),
                           [rand(rng, 1, 2, 6, 6), rand(rng, 3, 2, 3, 3), rand(rng, 3)], seed)
    assert max(errs) < TOL


# -- conv_transpose2d -------------------------------------------------------------


def test_conv_transpose_shape():
    out = T.conv_transpose2d(Tensor(np.zeros((1, 32, 16, 16))), Tensor(np.zeros((32, 16, 2, 2))),
                             Tensor(np.zeros(16)), stride=2)
    assert out.shape == (1, 16, 32, 32)


def test_conv_transpose_identity_weight_scales():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5))
    out = T.conv_transpose2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.5)), stride=1)
    np.testing.assert_array_equal(out.data, 2.5 * x)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("stride,pad,k,size", [(2, 0, 2, 8), (1, 1, 3, 7), (2, 1, 3, 7)])
def test_conv_transpose_is_adjoint_of_conv(seed, stride, pad, k, size):
    rng = np.random.default_rng(seed)
    w = rand(rng, 3, 2, k, k)  # conv: 2 -> 3 channels; transpose: 3 -> 2
    x = rand(rng, 2, 2, size, size)
    cx = T.conv2d(Tensor(x), Tensor(w), None, stride, pad).data
    y = rand(rng, *cx.shape)
    ty = T.conv_transpose2d(Tensor(y), Tensor(w), None, stride, pad).data
    assert ty.shape == x.shape
    assert abs((cx * y).sum() - (x * ty).sum()) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_conv_transpose_gradients(seed):
    rng = np.random.default_rng(seed)
    errs = check_gradients(lambda x, w, b: T.conv_transpose2d(x, w, b, stride=2, padding=0),
                           [rand(rng, 1, 3, 4, 4), rand(rng, 3, 2, 2, 2), rand(rng, 2)], seed)
    assert max(errs) < TOL


# -- maxpool ------------------------------------------------------------------------


def test_maxpool_hand_example():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out = T.maxpool2d(Tensor(x), 2, 2)
    np.testing.assert_array_equal(out.data[0, 0], [[5, 7], [13, 15]])


def test_maxpool_ties_route_to_first_element():
    x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
    out = T.maxpool2d(x, 2, 2)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2)))
    out.sum().backward()
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_maxpool_window_too_large():
    with pytest.raises(ValueError):
        T.maxpool2d(Tensor(np.zeros((1, 1, 3, 5))), 4)


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(seed)
    errs = check_gradients(lambda x: T.maxpool2d(x, 2, 2), [rand(rng, 1, 3, 8, 8)], seed)
    assert max(errs) < TOL


# -- bilinear upsample ----------------------------------------------------------------


def scalar_bilinear(img, out_h, out_w):
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))

    def src(o, n_in, n_out):
        s = (o + 0.5) * n_in / n_out - 0.5
        s = 0.0 if s < 0 else s
        i0 = int(s)
        if i0 > n_in - 1:
            i0 = n_in - 1
        i1 = i0 + 1 if i0 + 1 < n_in else n_in - 1
        return i0, i1, s - i0

    for i in range(out_h):
        y0, y1, ly = src(i, in_h, out_h)
        for j in range(out_w):
            x0, x1, lx = src(j, in_w, out_w)
            top = (1 - lx) * img[y0, x0] + lx * img[y0, x1]
            bottom = (1 - lx) * img[y1, x0] + lx * img[y1, x1]
            out[i, j] = (1 - ly) * top + ly * bottom
    return out


def test_upsample_constant_and_identity():
    x = np.full((1, 2, 2, 2), 3.5)
    np.testing.assert_array_equal(T.bilinear_upsample(Tensor(x), 4, 4).data, np.full((1, 2, 4, 4), 3.5))
    y = np.random.default_rng(0).standard_normal((1, 2, 5, 5))
    np.testing.assert_array_equal(T.bilinear_upsample(Tensor(y), 5, 5).data, y)


def test_upsample_matches_scalar_oracle_exactly():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = T.bilinear_upsample(Tensor(img[None, None]), 4, 4).data[0, 0]
    np.testing.assert_array_equal(out, scalar_bilinear(img, 4, 4))
    r = np.array([0, 0.25, 0.75, 1.0])
    np.testing.assert_array_equal(out, r[None, :] + 2 * r[:, None])


def test_upsample_random_against_oracle():
    rng = np.random.default_rng(1)
    img = rng.standard_normal((3, 5))
    out = T.bilinear_upsample(Tensor(img[None, None]), 8, 11).data[0, 0]
    np.testing.assert_allclose(out, scalar_bilinear(img, 8, 11), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_upsample_gradients(seed):
    rng = np.random.default_rng(seed)
    errs = check_gradients(lambda x: T.bilinear_upsample(x, 7, 9), [rand(rng, 1, 2, 3, 4)], seed)
    assert max(errs) < TOL


def test_upsample_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        T.bilinear_upsample(Tensor(np.zeros((1, 1, 2, 2))), 0, 4)


# -- batchnorm ------------------------------------------------------------------------


def test_batchnorm_standardized_input_unchanged():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = T.batchnorm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True)
    np.testing.assert_allclose(out.data, x, rtol=1e-5)


def test_batchnorm_eval_is_affine():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 4, 4))
    g, b = np.array([1.0, 2.0, -0.5]), np.array([0.1, 0.0, 3.0])
    out = T.batchnorm2d(Tensor(x), Tensor(g), Tensor(b), np.zeros(3), np.ones(3), False, eps=0.0)
    np.testing.assert_allclose(out.data, g.reshape(1, 3, 1, 1) * x + b.reshape(1, 3, 1, 1), atol=1e-12)


def test_batchnorm_running_stats_update():
    x = np.random.default_rng(0).standard_normal((2, 2, 3, 3)) + 5
    rm, rv = np.zeros(2), np.ones(2)
    T.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True, momentum=0.9)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


def test_batchnorm_channel_mismatch():
    with pytest.raises(ValueError, match="gamma"):
        T.batchnorm2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(3)),
                      np.zeros(3), np.ones(3), True)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(seed, training):
    rng = np.random.default_rng(seed)
    rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)

    def fn(x, g, b):
        return T.batchnorm2d(x, g, b, rm.copy(), rv.copy(), training)

    errs = check_gradients(fn, [rand(rng, 2, 3, 3, 3), rand(rng, 3), rand(rng, 3)], seed)
    assert max(errs) < TOL


# -- softmax and plumbing ops ------------------------------------------------------------


def test_softmax_examples():
    p = T.softmax_channels(Tensor(np.zeros((1, 3, 1, 1)))).data
    np.testing.assert_allclose(p.ravel(), [1 / 3] * 3)
    p = T.softmax_channels(Tensor(np.array([100.0, 0, 0]).reshape(1, 3, 1, 1))).data
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.ravel(), [1, 0, 0], atol=1e-40)
    z = np.random.default_rng(0).standard_normal((4, 3, 6, 6)) * 20
    np.testing.assert_allclose(T.softmax_channels(Tensor(z)).data.sum(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_gradients(seed):
    rng = np.random.default_rng(seed)
    assert max(check_gradients(T.softmax_channels, [rand(rng, 2, 3, 3, 3)], seed)) < TOL


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", ["relu", "add", "mul", "div", "concat", "gap", "sum_axis"])
def test_plumbing_gradients(seed, name):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 2, 3, 4, 4), rand(rng, 1, 3, 1, 4)
    cases = {
        "relu": (T.relu, [a]),
        "add": (T.add, [a, b]),
        "mul": (T.mul, [a, b]),
        "div": (T.div, [a, np.abs(b) + 1.0]),
        "concat": (lambda x, y: T.concat([x, y], axis=1), [a, rand(rng, 2, 2, 4, 4)]),
        "gap": (T.global_avg_pool, [a]),
        "sum_axis": (lambda x: x.sum(axis=(0, 2)), [a]),
    }
    fn, inputs = cases[name]
    assert max(check_gradients(fn, inputs, seed)) < TOL


def test_plumbing_shapes():
    a = Tensor(np.zeros((2, 3, 4, 4)))
    assert T.concat([a, Tensor(np.zeros((2, 5, 4, 4)))]).shape == (2, 8, 4, 4)
    assert T.global_avg_pool(a).shape == (2, 3, 1, 1)
    assert T.relu(a).shape == a.shape


def test_backward_is_linear_in_losses():
    rng = np.random.default_rng(0)
    x_data, w_data = rand(rng, 1, 2, 5, 5), rand(rng, 3, 2, 3, 3)

    def grads(which):
        x, w = Tensor(x_data, requires_grad=True), Tensor(w_data, requires_grad=True)
        out = T.conv2d(x, w, None, padding=1)
        l1 = (T.relu(out) * out).sum()
        l2 = T.global_avg_pool(out).sum() * 3.0
        loss = {"1": l1, "2": l2, "both": l1 + l2}[which]
        loss.backward()
        return x.grad, w.grad

    g1, g2, g12 = grads("1"), grads("2"), grads("both")
    for a, b, c in zip(g1, g2, g12):
        np.testing.assert_allclose(a + b, c, atol=1e-6)


def test_shared_node_gradient_accumulates():
    x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [5.0, -5.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert T.is_grad_enabled()


def test_float32_preserved_through_ops():
    x = Tensor(np.ones((1, 2, 4, 4), np.float32), requires_grad=True)
    w = Tensor(np.ones((2, 2, 3, 3), np.float32), requires_grad=True)
    out = T.softmax_channels(T.relu(T.conv2d(x, w, None, padding=1)))
    assert out.dtype == np.float32
    out.sum().backward()
    assert x.grad.dtype == np.float32


def test_forward_backward_bit_deterministic():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32), requires_grad=True)
        out = T.maxpool2d(T.relu(T.conv2d(x, w, None, 1, 2, 2)), 2)
        out.sum().backward()
        return out.data, x.grad, w.grad

    for a, b in zip(run(), run()):
        assert a.tobytes() == b.tobytes()


# -- AdamW ------------------------------------------------------------------------------


def test_adamw_zero_grad_no_decay_is_noop():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    adamw_step({"p": p}, AdamWState(weight_decay=0.0))
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_moves_by_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([1.0])
    adamw_step({"p": p}, AdamWState(lr=0.001))
    # m_hat = 1, v_hat = 1  ->  step = lr * 1 / (1 + eps)
    np.testing.assert_allclose(p.data, [-0.001 / (1 + 1e-8)], rtol=1e-12)


def test_adamw_decoupled_decay():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([0.0])
    adamw_step({"p": p}, AdamWState(lr=0.001, weight_decay=0.1))
    np.testing.assert_allclose(p.data, [1 - 0.001 * 0.1], rtol=1e-12)


def test_adamw_matches_scalar_simulation():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal(5)
    p = Tensor(np.array([0.3]), requires_grad=True)
    state = AdamWState(lr=0.01, weight_decay=0.05)
    ref, m, v = 0.3, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        p.grad = np.array([g])
        adamw_step({"p": p}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * ((m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8) + 0.05 * ref)
    assert state.step == 5
    np.testing.assert_allclose(p.data, [ref], rtol=1e-12)


def test_adamw_nan_gradient_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([0.0, np.nan])
    with pytest.raises(NonFiniteGradientError, match="enc.weight"):
        adamw_step({"enc.weight": p}, AdamWState())
    np.testing.assert_array_equal(p.data, [0.0, 0.0])

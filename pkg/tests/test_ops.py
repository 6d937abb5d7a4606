import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sspl import ops
from sspl.errors import ConfigurationError, DimensionError
from sspl.gradcheck import grad_check
from sspl.tensor import Tensor, default_dtype


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def direct_conv(x, k, padding):
    """Six nested loops over (c_out, c_in, i, j, u, v)."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for c in range(c_in):
            for i in range(ho):
                for j in range(wo):
                    for u in range(kh):
                        for v in range(kw):
                            out[o, i, j] += xp[c, i + u, j + v] * k[o, c, u, v]
    return out


def delta_kernel(c):
    k = np.zeros((c, c, 3, 3))
    for i in range(c):
        k[i, i, 1, 1] = 1.0
    return k


def test_conv2d_delta_kernel_is_identity(rng):
    x = rng.normal(size=(2, 5, 5))
    out = ops.conv2d(t64(x), t64(delta_kernel(2)), padding=1)
    assert np.array_equal(out.data, x)


def test_conv2d_ones_counts_overlap():
    out = ops.conv2d(t64(np.ones((1, 5, 5))), t64(np.ones((1, 1, 3, 3))), padding=1).data[0]
    assert out[2, 2] == 9 and out[0, 0] == 4 and out[0, 2] == 6


def test_conv2d_matches_direct_summation(rng):
    x, k = rng.normal(size=(2, 8, 8)), rng.normal(size=(3, 2, 3, 3))
    assert np.allclose(ops.conv2d(t64(x), t64(k), padding=1).data, direct_conv(x, k, 1), atol=1e-5)


def test_conv2d_strided_matches_subsampled_direct(rng):
    x, k = rng.normal(size=(2, 7, 7)), rng.normal(size=(3, 2, 3, 3))
    full = direct_conv(x, k, 1)
    assert np.allclose(ops.conv2d(t64(x), t64(k), stride=2, padding=1).data, full[:, ::2, ::2], atol=1e-10)


def test_conv2d_non_integral_output():
    with pytest.raises(DimensionError):
        ops.conv2d(t64(np.ones((1, 6, 6))), t64(np.ones((1, 1, 3, 3))), stride=2, padding=0)


def test_conv_transpose_delta_kernel_is_identity(rng):
    x = rng.normal(size=(2, 4, 4))
    assert np.allclose(ops.conv_transpose2d(t64(x), t64(delta_kernel(2)), padding=1).data, x)


@given(seed=st.integers(0, 2**31 - 1), stride=st.sampled_from([1, 2]))
def test_conv_transpose_is_adjoint_of_conv(seed, stride):
    r = np.random.default_rng(seed)
    side = 8 if stride == 1 else 9
    x = r.normal(size=(1, 3, side, side))
    k = r.normal(size=(4, 3, 3, 3))
    y_shape = ops.conv2d(t64(x), t64(k), stride=stride, padding=1).shape
    y = r.normal(size=y_shape)
    lhs = float((ops.conv2d(t64(x), t64(k), stride=stride, padding=1).data * y).sum())
    back = ops.conv_transpose2d(t64(y), t64(k), stride=stride, padding=1)
    rhs = float((x * back.data).sum())
    assert abs(lhs - rhs) < 1e-5 * max(1.0, abs(lhs))


def test_conv_transpose_stride_two_doubles():
    out = ops.conv_transpose2d(t64(np.ones((1, 1, 4, 4))), t64(np.ones((1, 1, 3, 3))), stride=2, padding=1, output_padding=1)
    assert out.shape == (1, 1, 8, 8)


def test_max_pool_block():
    assert ops.max_pool2d(t64([[[[1, 2], [3, 4]]]])).data.item() == 4


def test_max_pool_odd_dims():
    with pytest.raises(DimensionError):
        ops.max_pool2d(t64(np.ones((1, 1, 3, 4))))


def test_max_pool_gradient_routes_to_argmax():
    x = t64([[[[1, 5], [3, 4]]]], grad=True)
    ops.max_pool2d(x).sum().backward()
    assert np.array_equal(x.grad, [[[[0, 1], [0, 0]]]])


def test_bilinear_constant_preserved():
    out = ops.bilinear_resize(t64(np.full((3, 5), 0.7)), (11, 2))
    assert np.allclose(out.data, 0.7)


def test_bilinear_two_to_four_matches_formula():
    src = np.array([[0.0, 1.0], [1.0, 2.0]])

    def sample(i, j):
        # half-pixel centres, clamped at the borders
        y = min(max((i + 0.5) * 0.5 - 0.5, 0.0), 1.0)
        x = min(max((j + 0.5) * 0.5 - 0.5, 0.0), 1.0)
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
        fy, fx = y - y0, x - x0
        top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
        bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
        return top * (1 - fy) + bottom * fy

    oracle = np.array([[sample(i, j) for j in range(4)] for i in range(4)])
    assert np.allclose(ops.bilinear_resize(t64(src), (4, 4)).data, oracle)
    assert np.allclose(oracle[0], [0.0, 0.25, 0.75, 1.0])


def test_pool_resize_modes():
    x = t64(np.arange(16.0).reshape(1, 1, 4, 4))
    assert ops.pool_resize(x, "max_pool_2x2").shape == (1, 1, 2, 2)
    assert ops.pool_resize(x, "bilinear_resize", (8, 8)).shape == (1, 1, 8, 8)
    with pytest.raises(ConfigurationError):
        ops.pool_resize(x, "nearest")


def test_activation_definitions():
    assert np.array_equal(ops.activation(t64([-1.0, 2.0]), "relu").data, [0, 2])
    assert ops.activation(t64([0.0]), "sigmoid").data[0] == 0.5
    sm = ops.activation(t64(np.zeros((2, 2))), "softmax_over_all")
    assert np.allclose(sm.data, 0.25)


def test_gelu_close_to_exact():
    xs = [-3.0, -1.0, 0.0, 1.0, 3.0]
    exact = [0.5 * x * (1 + math.erf(x / math.sqrt(2))) for x in xs]
    approx = ops.gelu(t64(xs)).data
    assert np.max(np.abs(approx - exact)) < 1e-3


def test_unknown_activation():
    with pytest.raises(ConfigurationError):
        ops.activation(t64([1.0]), "swish")


def _bn_args(c, dtype=np.float64):
    return (
        Tensor(np.ones(c, dtype=dtype), requires_grad=True),
        Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
        np.zeros(c, dtype=dtype),
        np.ones(c, dtype=dtype),
    )


def test_batch_norm_training_standardises(rng):
    x = t64(rng.normal(3.0, 2.0, size=(6, 3, 4, 4)))
    out = ops.batch_norm(x, *_bn_args(3), training=True).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_batch_norm_neutral_inference_is_identity(rng):
    x = rng.normal(size=(2, 3, 2, 2))
    out = ops.batch_norm(t64(x), *_bn_args(3), training=False, eps=0.0).data
    assert np.allclose(out, x)


def test_batch_norm_updates_running_stats_only_in_training(rng):
    gamma, beta, rm, rv = _bn_args(2)
    x = t64(rng.normal(1.0, 1.0, size=(4, 2)))
    ops.batch_norm(x, gamma, beta, rm, rv, training=False)
    assert np.array_equal(rm, [0, 0])
    ops.batch_norm(x, gamma, beta, rm, rv, training=True)
    assert np.allclose(rm, 0.1 * x.data.mean(axis=0))


def test_batch_norm_needs_two_samples():
    with pytest.raises(ConfigurationError):
        ops.batch_norm(t64(np.ones((1, 2, 2, 2))), *_bn_args(2), training=True)


def test_batch_norm_gradients_32bit(rng):
    x = Tensor(rng.normal(size=(4, 2, 2, 2)).astype(np.float32))
    gamma, beta, rm, rv = _bn_args(2, np.float32)
    gamma.data[:] = [1.3, 0.7]
    w = Tensor(rng.normal(size=(4, 2, 2, 2)).astype(np.float32))
    f = lambda x, g, b: (ops.batch_norm(x, g, b, rm.copy(), rv.copy(), True) * w).sum()  # noqa: E731
    assert grad_check(f, [x, gamma, beta]) < 1e-3


def test_cosine_examples():
    assert ops.cosine_sim(t64([1, 2, 3]), t64([1, 2, 3])).item() == pytest.approx(1.0)
    assert ops.cosine_sim(t64([1, 0]), t64([0, 1])).item() == 0.0
    assert ops.cosine_sim(t64([1, 1]), t64([-1, -1])).item() == pytest.approx(-1.0)


def test_cosine_of_zero_vector_is_finite():
    x = t64([0.0, 0.0], grad=True)
    out = ops.cosine_sim(x, t64([1.0, 2.0]))
    out.backward()
    assert out.item() == 0.0 and np.all(np.isfinite(x.grad))


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_cosine_in_range(u, v):
    c = ops.cosine_sim(t64(u), t64(v)).item()
    assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12


def test_log_softmax_mask_excludes_entries():
    x = t64([[1.0, 2.0, 3.0]])
    mask = np.array([[True, False, True]])
    out = ops.log_softmax(x, axis=1, mask=mask).data
    assert out[0, 1] == 0
    assert np.isclose(np.exp(out[0, 0]) + np.exp(out[0, 2]), 1.0)


def _op_cases(r, dtype):
    def arr(*shape):
        return Tensor(r.normal(size=shape).astype(dtype))

    x4, k = arr(2, 2, 4, 4), arr(3, 2, 3, 3)
    w4 = arr(2, 3, 4, 4)
    # offsets keep relu away from its kink and the pool away from ties
    return {
        "matmul": (lambda a, b: (ops.matmul(a, b) ** 2).sum(), [arr(3, 4), arr(4, 2)]),
        "conv2d": (lambda x, k: (ops.conv2d(x, k, padding=1) * w4).sum(), [x4, k]),
        "conv_transpose2d": (
            lambda x, k: (ops.conv_transpose2d(x, k, stride=2, padding=1, output_padding=1) ** 2).sum(),
            [arr(1, 3, 2, 2), arr(3, 2, 3, 3)],
        ),
        "max_pool2d": (lambda x: (ops.max_pool2d(x) * ops.max_pool2d(x)).sum(), [Tensor((r.permutation(32).reshape(1, 2, 4, 4) * 0.1).astype(dtype))]),
        "bilinear": (lambda x: (ops.bilinear_resize(x, (5, 7)) ** 2).sum(), [arr(2, 3, 3)]),
        "relu": (lambda x: (ops.relu(x) ** 2).sum(), [Tensor((np.sign(r.normal(size=6)) * (0.5 + r.random(6))).astype(dtype))]),
        "gelu": (lambda x: (ops.gelu(x) ** 2).sum(), [arr(6)]),
        "sigmoid": (lambda x: (ops.sigmoid(x) ** 2).sum(), [arr(6)]),
        "tanh": (lambda x: (ops.tanh(x) ** 2).sum(), [arr(6)]),
        "softplus": (lambda x: (ops.softplus(x) ** 2).sum(), [arr(6)]),
        "softmax": (lambda x: (ops.softmax(x, axis=(-2, -1)) * Tensor(np.arange(9.0).reshape(3, 3).astype(dtype))).sum(), [arr(2, 3, 3)]),
        "log_softmax": (lambda x: (ops.log_softmax(x, axis=1) * Tensor(np.arange(8.0).reshape(2, 4).astype(dtype))).sum(), [arr(2, 4)]),
        "l2_normalize": (lambda x: (ops.l2_normalize(x, axis=1) * Tensor(np.arange(8.0).reshape(2, 4).astype(dtype))).sum(), [arr(2, 4)]),
        "cosine_sim": (lambda u, v: ops.cosine_sim(u, v, axis=-1).sum(), [arr(3, 5), arr(3, 5)]),
    }


OP_NAMES = sorted(_op_cases(np.random.default_rng(0), np.float64))


@pytest.mark.parametrize("name", OP_NAMES)
@given(seed=st.integers(0, 2**31 - 1))
def test_op_gradients_64bit(name, seed):
    f, inputs = _op_cases(np.random.default_rng(seed), np.float64)[name]
    with default_dtype(np.float64):
        assert grad_check(f, inputs) < 1e-6


@pytest.mark.parametrize("name", OP_NAMES)
@given(seed=st.integers(0, 2**31 - 1))
def test_op_gradients_32bit(name, seed):
    f, inputs = _op_cases(np.random.default_rng(seed), np.float32)[name]
    assert grad_check(f, inputs) < 1e-3

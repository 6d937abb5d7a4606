import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sspl import ops
from sspl.errors import DimensionError, NumericError, UsageError
from sspl.gradcheck import directional_check, grad_check
from sspl.tensor import (
    Tensor,
    backward,
    concat,
    default_dtype,
    getitem,
    no_grad,
    stack,
    stop_gradient,
    trace,
)


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_default_dtype_is_float32_and_switchable():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_matmul_identity_and_projector():
    b = t64([[1, 2], [3, 4]])
    assert np.array_equal(ops.matmul(t64(np.eye(2)), b).data, b.data)
    out = ops.matmul(t64([[1, 0], [0, 0]]), t64([[5, 6], [7, 8]]))
    assert np.array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    oracle = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                oracle[i, j] += a[i, k] * b[k, j]
    assert np.allclose(ops.matmul(t64(a), t64(b)).data, oracle, atol=1e-6)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ops.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


def test_backward_of_sum_is_ones():
    x = t64([1.0, -2.0, 3.0], grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, [1, 1, 1])


def test_backward_of_half_square_norm_is_x():
    x = t64([0.5, -1.5, 2.0], grad=True)
    backward(0.5 * (x * x).sum())
    assert np.allclose(x.grad, x.data)


def test_backward_rejects_non_scalar():
    x = t64([1.0, 2.0], grad=True)
    with pytest.raises(UsageError):
        backward(x * 2.0)


def test_stop_gradient_forward_identity_and_blocks():
    x = t64([1.0, 2.0, 3.0], grad=True)
    sg = stop_gradient(x)
    assert np.array_equal(sg.data, x.data)
    backward((sg * x).sum())
    # d/dx [SG(x) * x] = x, not 2x
    assert np.array_equal(x.grad, x.data)


def test_reused_node_accumulates():
    x = t64([2.0], grad=True)
    y = x * x
    backward((y + y).sum())
    assert np.allclose(x.grad, [8.0])


def test_trace_is_topological():
    x = t64([1.0, 2.0], grad=True)
    a = x * 2.0
    b = a + x
    c = (a * b).sum()
    order = trace(c)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_results_raise():
    with pytest.raises(NumericError):
        t64([0.0]).log()
    with pytest.raises(NumericError):
        t64([1.0]) / t64([0.0])


def test_no_grad_records_nothing():
    x = t64([1.0], grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


def test_getitem_concat_stack_gradients(rng):
    x = t64(rng.normal(size=(4, 3)))
    y = t64(rng.normal(size=(2, 3)))
    f = lambda a, b: (concat([getitem(a, (slice(1, 3),)), b], axis=0) ** 2).sum() + stack([a[0], b[1]]).sum()  # noqa: E731
    assert grad_check(f, [x, y]) < 1e-6


def test_grad_check_exact_on_linear(rng):
    c = t64(rng.normal(size=5))
    assert grad_check(lambda x: (x * c).sum(), t64(rng.normal(size=5))) < 1e-9


def test_grad_check_cosine_64bit(rng):
    c = t64(rng.normal(size=5))
    assert grad_check(lambda x: ops.cosine_sim(x, c), t64(rng.normal(size=5))) < 1e-4


UNARY = {
    "exp": lambda x: (x.exp() * 0.3).sum(),
    "log": lambda x: ((x * x + 1.0).log()).sum(),
    "sqrt": lambda x: ((x * x + 1.0).sqrt()).sum(),
    "pow": lambda x: ((x * x + 0.5) ** 1.5).sum(),
    "div": lambda x: (1.0 / (x * x + 1.0)).sum(),
    "mean": lambda x: (x.mean(axis=0) ** 2).sum(),
    "max": lambda x: (x.max(axis=1) * x.max(axis=1)).sum(),
    "min": lambda x: x.min(axis=0).sum() * 2.0,
    "transpose": lambda x: (x.T @ x).sum(),
    "reshape": lambda x: (x.reshape(-1) * Tensor(np.arange(12.0))).sum(),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(seed=st.integers(0, 2**31 - 1))
def test_elementwise_gradients_64bit(name, seed):
    x = t64(np.random.default_rng(seed).normal(size=(3, 4)))
    assert grad_check(UNARY[name], x) < 1e-6


@given(seed=st.integers(0, 2**31 - 1))
def test_broadcast_gradients(seed):
    r = np.random.default_rng(seed)
    a, b = t64(r.normal(size=(3, 1, 4))), t64(r.normal(size=(2, 4)))
    assert grad_check(lambda a, b: ((a + b) * (a - b) * b).sum(), [a, b]) < 1e-6


def test_directional_check_agrees_with_exact_gradient(rng):
    a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
    with default_dtype(np.float64):
        err = directional_check(lambda: (ops.tanh(ops.matmul(a, b)) ** 2).sum(), [a, b], rng)
    assert err < 1e-7


def test_directional_check_catches_a_wrong_backward(rng):
    from sspl.tensor import make_result

    def bad_square(x):
        # claims d(x^2)/dx = x instead of 2x
        return make_result(x.data**2, (x,), lambda g: (g * x.data,), "bad_square")

    x = Tensor(rng.normal(size=5))
    assert directional_check(lambda: bad_square(x).sum(), [x], rng) > 0.3

import numpy as np
import pytest

from colorlic import tensor as T
from colorlic.errors import NumericError, UsageError
from colorlic.optim import AdamState, adam_step, clip_grad_norm
from colorlic.tensor import Parameter, grad_check


def t64(a):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_default_precision_is_float32_and_switchable():
    assert T.tensor([1.0, 2.0]).dtype == np.float32
    with T.precision(np.float64):
        assert T.tensor([1.0]).dtype == np.float64
    assert T.tensor([1.0]).dtype == np.float32


def test_sum_gradient_is_ones_and_check_is_exact():
    x = t64(np.random.default_rng(0).random((3, 4)))
    assert grad_check(lambda: x.sum(), [x]) < 1e-9  # only rounding in the differences
    x.grad = None
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_broadcast_gradients_reduce_to_shape(rng):
    a = t64(rng.random((2, 3, 4)))
    b = t64(rng.random((3, 1)))
    assert grad_check(lambda: ((a * b + b) / (b + 1.0)).sum(), [a, b]) < 1e-7


@pytest.mark.parametrize(
    "fn",
    [
        T.exp, T.sigmoid, T.tanh, T.softplus, T.sin, T.cos, T.normal_cdf, T.square,
        lambda x: T.log(x + 2.0), lambda x: T.sqrt(x + 2.0), lambda x: T.power(x + 2.0, 1.7),
        lambda x: T.tabs(x), lambda x: T.relu(x), lambda x: T.amax(x, 1), lambda x: T.avg_pool2(x[None, None]),
        lambda x: T.transpose(x, (1, 0))[1:, ::2], lambda x: T.matmul(x, T.transpose(x, (1, 0))),
        lambda x: T.clamp(x, lo=-0.3, hi=0.4), lambda x: T.mean(x, 0),
    ],
)
def test_elementwise_and_shape_ops_pass_grad_check(fn, rng):
    x = t64(rng.uniform(-1, 1, (5, 6)))
    w = rng.standard_normal(fn(x).shape)
    assert grad_check(lambda: (fn(x) * w).sum(), [x]) < 1e-4


def test_atan2_grad(rng):
    y, x = t64(rng.uniform(-1, 1, 20)), t64(rng.uniform(0.2, 1, 20))
    assert grad_check(lambda: T.atan2(y, x).sum(), [y, x]) < 1e-6


def test_nonfinite_results_raise():
    with pytest.raises(NumericError):
        T.log(t64([0.0, 1.0]))
    with pytest.raises(NumericError):
        T.exp(t64([1000.0]))
    with pytest.raises(NumericError):
        t64([1.0]) / t64([0.0])


def test_zero_upstream_gradient_gives_zero_parameter_gradient(rng):
    w = t64(rng.random((3, 3)))
    out = T.tanh(T.matmul(w, w))
    out.backward(np.zeros(out.shape))
    np.testing.assert_array_equal(w.grad, 0.0)


def test_gradients_accumulate_over_shared_use(rng):
    x = t64(rng.random(4))
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_grad_check_requires_double_precision():
    x = T.Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(UsageError):
        grad_check(lambda: x.sum(), [x])


def test_straight_through_forwards_value_and_passes_gradient():
    x = t64([0.4, 1.6])
    y = T.straight_through(x, np.round(x.data))
    np.testing.assert_array_equal(y.data, [0.0, 2.0])
    (y * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


# -- Adam -----------------------------------------------------------------------------

def test_adam_zero_gradient_is_noop_but_counts_step():
    p = Parameter(np.array([1.0, -2.0]), "w")
    p.grad = np.zeros(2)
    state = adam_step({"w": p}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([0.5]), "w")
    p.grad = np.array([1.0])
    adam_step({"w": p}, AdamState())
    assert abs((0.5 - p.data[0]) - 1e-4) < 1e-9


def test_adam_descends_quadratic():
    p = Parameter(np.array([1.0]), "w")
    state = AdamState(lr=0.05)
    values = []
    for _ in range(10):
        p.grad = None
        loss = T.square(p).sum()
        values.append(loss.item())
        loss.backward()
        adam_step({"w": p}, state)
    assert all(b < a for a, b in zip(values, values[1:]))
    assert state.step == 10


def test_adam_missing_gradient_is_usage_error():
    p = Parameter(np.ones(2), "w")
    with pytest.raises(UsageError):
        adam_step({"w": p}, AdamState())


def test_clip_grad_norm_caps_global_norm():
    a, b = Parameter(np.zeros(2), "a"), Parameter(np.zeros(1), "b")
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm({"a": a, "b": b}, 1.0) == pytest.approx(5.0)
    assert np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2)) == pytest.approx(1.0)


def test_grad_check_fourth_order_differences_reduce_truncation():
    x = T.Tensor(np.linspace(-1, 2, 7), requires_grad=True)
    f = lambda: T.exp(x * 3.0).sum()
    second = grad_check(f, [x], h=1e-3)
    fourth = grad_check(f, [x], h=1e-3, order=4)
    assert fourth < second / 100
    with pytest.raises(UsageError):
        grad_check(f, [x], order=3)

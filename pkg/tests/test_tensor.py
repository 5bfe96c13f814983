import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from wmagin.gradcheck import numeric_gradient, relative_error
from wmagin.tensor import (
    DimensionError,
    Tensor,
    activation,
    concat,
    cross_entropy_logits,
    elementwise,
    matmul,
    reduce,
    softmax,
    softmax_rows,
    stack,
    take,
    unstack,
)


def grad_error(f, *arrays, step=1e-6):
    """Max relative error of backward() against central differences for scalar f(*tensors)."""
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    f(*ts).backward()
    worst = 0.0
    for t in ts:
        numeric = numeric_gradient(lambda: f(*ts).item(), t.data, step)
        worst = max(worst, float(relative_error(t.grad, numeric).max()))
    return worst


# ---- matmul ---------------------------------------------------------------
def test_matmul_identity():
    out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_hand_expansion():
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_gradient_random():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    w = rng.standard_normal((5, 3))
    assert grad_error(lambda x, y: (matmul(x, y) * w).sum(), a, b) < 1e-5


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_batched_matmul_gradient():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2))
    w = rng.standard_normal((2, 3, 2))
    assert grad_error(lambda x, y: (matmul(x, y) * w).sum(), a, b) < 1e-6


# ---- elementwise ----------------------------------------------------------
def test_add():
    assert elementwise(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), "add").data.tolist() == [4.0, 6.0]


def test_mul_by_zero_tensor():
    x = Tensor([1.5, -2.0, 3.0], requires_grad=True)
    z = Tensor(np.zeros(3), requires_grad=True)
    out = elementwise(x, z, "mul")
    out.sum().backward()
    np.testing.assert_array_equal(out.data, 0.0)
    np.testing.assert_array_equal(x.grad, 0.0)
    np.testing.assert_array_equal(z.grad, [1.5, -2.0, 3.0])


def test_sub_self_is_zero():
    x = Tensor([1.0, -7.0, 2.5])
    np.testing.assert_array_equal(elementwise(x, x, "sub").data, 0.0)


def test_leading_axis_broadcast_gradient():
    rng = np.random.default_rng(2)
    a, bias = rng.standard_normal((4, 3)), rng.standard_normal(3)
    assert grad_error(lambda x, b: ((x + b) * (x - b)).sum(), a, bias) < 1e-6


def test_non_broadcastable_raises():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


# ---- activations ----------------------------------------------------------
def test_activation_values():
    assert activation(Tensor(0.0), "sigmoid").item() == 0.5
    assert activation(Tensor(0.0), "tanh").item() == 0.0


def test_relu_negative_and_zero_subgradient():
    x = Tensor([-3.0, 0.0, 2.0], requires_grad=True)
    out = activation(x, "relu")
    out.sum().backward()
    assert out.data.tolist() == [0.0, 0.0, 2.0]
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "exp"])
def test_activation_gradients(kind):
    x = np.random.default_rng(3).standard_normal(6)
    assert grad_error(lambda t: activation(t, kind).sum(), x) < 1e-6


def test_sigmoid_extreme_inputs_finite():
    out = activation(Tensor([-800.0, 800.0]), "sigmoid").data
    assert np.all(np.isfinite(out))
    assert out.tolist() == [0.0, 1.0]


# ---- softmax --------------------------------------------------------------
def test_softmax_uniform():
    np.testing.assert_array_equal(softmax_rows(Tensor([[0.0, 0.0, 0.0, 0.0]])).data, [[0.25] * 4])


def test_softmax_large_equal_inputs():
    out = softmax_rows(Tensor([[1000.0, 1000.0]])).data
    np.testing.assert_array_equal(out, [[0.5, 0.5]])


def test_softmax_pair_value():
    # e^0.4 / (1 + e^0.4)
    hi = math.exp(0.4) / (1 + math.exp(0.4))
    out = softmax_rows(Tensor([[0.0, 0.4]])).data[0]
    assert abs(out[1] - hi) < 1e-12
    np.testing.assert_allclose(out, [0.40131, 0.59869], atol=1e-5)


def test_softmax_minus_inf_gets_zero_weight():
    x = Tensor([[0.3, -np.inf, 0.3]], requires_grad=True)
    out = softmax_rows(x)
    (out * Tensor([[1.0, 2.0, 3.0]])).sum().backward()
    assert out.data.tolist() == [[0.5, 0.0, 0.5]]
    assert np.all(np.isfinite(x.grad))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    out = softmax_rows(Tensor(x)).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


# ---- reductions -----------------------------------------------------------
def test_reduce_values_and_mean_gradient():
    assert reduce(Tensor([1.0, 2.0, 3.0]), 0, "sum").item() == 6.0
    assert reduce(Tensor([1.0, 2.0, 3.0]), 0, "mean").item() == 2.0
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    reduce(x, 0, "mean").backward()
    np.testing.assert_allclose(x.grad, [1 / 3] * 3)


def test_reduce_axis_out_of_range():
    with pytest.raises(DimensionError):
        reduce(Tensor(np.ones((2, 2))), 2, "sum")


# ---- cross entropy --------------------------------------------------------
def test_cross_entropy_uniform_logits():
    for label in range(4):
        assert abs(cross_entropy_logits(Tensor([[0.0] * 4]), [label]).item() - math.log(4)) < 1e-15


def test_cross_entropy_confident_logits():
    expected = math.log(math.exp(10) + 3) - 10  # log-sum-exp by hand
    got = cross_entropy_logits(Tensor([[10.0, 0.0, 0.0, 0.0]]), [0]).item()
    assert abs(got - expected) < 1e-15
    assert abs(got - 0.000136) < 1e-6


def test_cross_entropy_gradient():
    logits = np.random.default_rng(4).standard_normal((3, 4))
    assert grad_error(lambda t: cross_entropy_logits(t, [0, 3, 1]), logits) < 1e-5


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy_logits(Tensor([[0.0, 1.0]]), [2])


# ---- backward -------------------------------------------------------------
def test_backward_sum_gives_ones():
    x = Tensor(np.arange(5.0), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, 1.0)


def test_backward_square():
    x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_accumulates_until_reset():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_backward_deterministic():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((6, 5)), rng.standard_normal((5, 4))

    def run():
        x, y = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        softmax(matmul(x, y).tanh(), axis=0).mean().backward()
        return x.grad, y.grad

    (g1, h1), (g2, h2) = run(), run()
    assert np.array_equal(g1, g2) and np.array_equal(h1, h2)


def test_deep_chain_no_recursion_limit():
    x = Tensor([0.1], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0 + 0.0
    y.sum().backward()
    assert x.grad.tolist() == [1.0]


# ---- concat / stack / gather ----------------------------------------------
def test_concat_values_and_shapes():
    assert concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0).data.tolist() == [1.0, 2.0, 3.0]
    assert concat([Tensor(np.zeros((120, 128))), Tensor(np.zeros((120, 128)))], axis=1).shape == (120, 256)


def test_concat_gradient_split():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((2, 1)), requires_grad=True)
    (concat([a, b], axis=1) * Tensor(np.arange(8.0).reshape(2, 4))).sum().backward()
    assert a.grad.shape == (2, 3) and b.grad.shape == (2, 1)
    np.testing.assert_array_equal(a.grad, [[0, 1, 2], [4, 5, 6]])
    np.testing.assert_array_equal(b.grad, [[3], [7]])


def test_concat_shape_mismatch():
    with pytest.raises(DimensionError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_structural_ops_gradients():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((3, 4, 2))
    w = rng.standard_normal((3, 4, 2, 2))
    idx = np.array([[1, 3], [0, 2], [3, 3], [2, 1]])
    assert grad_error(lambda t: (take(t, idx, axis=-2) * w).sum(), a) < 1e-6
    assert grad_error(lambda t: (stack(unstack(t, axis=1)[::-1], axis=1) * a).sum(), a) < 1e-6
    assert grad_error(lambda t: (t[:, 1:3] * t[:, :2]).sum(), a) < 1e-6


# ---- properties -----------------------------------------------------------
@pytest.mark.parametrize("seed", range(10))
def test_random_gradient_check_all_ops(seed):
    """Every differentiable primitive at 1e-4 under the |ad-fd|/max(1,|fd|) metric."""
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 3))
    c = rng.standard_normal((3, 4))

    def f(x, y, z):
        h = matmul(x, y)                                   # 3x3
        h = activation(h, "tanh") + activation(h, "sigmoid") * activation(h * 0.1, "exp")
        h = softmax_rows(h) * reduce(z, 1, "mean", keepdims=True)
        h = concat([h, activation(z, "relu") - z * z], axis=1)
        return cross_entropy_logits(h, [0, 2, 5]) + reduce(h, 0, "sum").sum() * 0.1

    assert grad_error(f, a, b, c) < 1e-4


def test_chain_rule_composition():
    x = np.random.default_rng(7).standard_normal(5)
    # f(g(x)) checked as a whole, not stage by stage
    assert grad_error(lambda t: activation(activation(t * t, "sigmoid") * 3.0, "tanh").sum(), x) < 1e-6

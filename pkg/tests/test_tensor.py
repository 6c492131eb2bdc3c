import numpy as np
import pytest

from mdir import ops
from mdir.tensor import Tensor, no_grad


def test_sum_grad_is_ones():
    x = Tensor(np.random.rand(2, 3, 4), requires_grad=True)
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_power_rule():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ops.sum(ops.power(x, 2)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ops.mul(x, 2.0).backward()


def test_grad_accumulates_over_shared_use():
    # y = x*x + x  (diamond graph) -> dy/dx = 2x + 1
    x = Tensor(np.array([3.0, -1.0]), requires_grad=True)
    ops.sum(ops.add(ops.mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, [7.0, -1.0])


def test_broadcast_grad_unbroadcasts():
    a = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(np.full((1, 3, 1, 1), 2.0), requires_grad=True)
    ops.sum(ops.mul(a, b)).backward()
    assert b.grad.shape == (1, 3, 1, 1)
    np.testing.assert_allclose(b.grad, np.full((1, 3, 1, 1), 32.0))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.mul(x, 2.0)
    assert not y.requires_grad


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64


def test_grad_shape_matches_data(rng):
    x = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    ops.sum(ops.conv2d(x, w, padding=1)).backward()
    assert x.grad.shape == x.shape and w.grad.shape == w.shape


def test_operator_sugar():
    a, b = Tensor(np.array([2.0])), Tensor(np.array([3.0]))
    assert float((a + b).data[0]) == 5.0
    assert float((a * b).data[0]) == 6.0
    assert float((a - b).data[0]) == -1.0
    assert float((a / 4.0).data[0]) == 0.5
    with pytest.raises(TypeError):
        a / b
    assert float((-a).data[0]) == -2.0

import numpy as np
import pytest

from mdir import ops
from mdir.ldo import LDO, LdoConfig, dynamic_filter, dynamic_filter_unfold, fuse
from mdir.tensor import Tensor, no_grad

from _oracles import naive_depthwise


def make(C=8, k=3, seed=0):
    return LDO(LdoConfig(C, k)).initialize(seed)


@pytest.mark.parametrize("k", [3, 5, 7])
def test_filter_matches_naive(rng, backend, k):
    x = rng.standard_normal((2, 3, 6, 5))
    W = rng.uniform(-1, 1, (2, 3, k * k))
    ref = naive_depthwise(x, W, k)
    assert np.abs(dynamic_filter(Tensor(x), Tensor(W), k).data - ref).max() < 1e-9
    assert np.abs(dynamic_filter_unfold(Tensor(x), Tensor(W), k).data - ref).max() < 1e-9


def test_center_tap_is_identity(rng):
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    W = np.zeros((1, 2, 9), np.float32)
    W[..., 4] = 1
    np.testing.assert_array_equal(dynamic_filter(Tensor(x), Tensor(W), 3).data, x)


def test_filter_is_linear_in_input(rng):
    x1, x2 = rng.standard_normal((2, 1, 3, 6, 6))
    W = Tensor(rng.uniform(-1, 1, (1, 3, 25)))
    a, b = 0.3, -1.7
    lhs = dynamic_filter(Tensor(a * x1 + b * x2), W, 5).data
    rhs = a * dynamic_filter(Tensor(x1), W, 5).data + b * dynamic_filter(Tensor(x2), W, 5).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_filter_shift_equivariant_in_interior(rng):
    x = np.zeros((1, 1, 12, 12))
    x[0, 0, 4:7, 4:7] = rng.random((3, 3))
    W = Tensor(rng.uniform(-1, 1, (1, 1, 9)))
    y = dynamic_filter(Tensor(x), W, 3).data
    ys = dynamic_filter(Tensor(np.roll(x, (2, 1), axis=(2, 3))), W, 3).data
    np.testing.assert_allclose(np.roll(y, (2, 1), axis=(2, 3)), ys, atol=1e-12)


def test_shapes_and_ranges(rng):
    ldo = make(C=8, k=5)
    x = Tensor(rng.standard_normal((3, 8, 7, 9)))
    out, it = ldo(x, return_intermediates=True)
    assert out.shape == (3, 8, 7, 9)
    assert it.s.shape == (3, 8, 1, 1)
    assert it.s_prime.shape == (3, 2, 1, 1)
    assert it.W_dyn.shape == (3, 8, 25)
    assert it.X_unfold.shape == (3, 8, 25, 63)
    assert it.alpha.shape == it.beta.shape == (3, 8, 1, 1)
    assert np.all(np.abs(it.W_dyn.data) < 1)
    for g in (it.alpha.data, it.beta.data):
        assert np.all((g > 0) & (g < 1))


def test_zero_parameters_give_half_input(rng):
    ldo = make()
    for p in ldo.parameters():
        p.data[...] = 0
    x = rng.standard_normal((2, 8, 5, 5)).astype(np.float32)
    out = ldo(Tensor(x)).data
    np.testing.assert_allclose(out, 0.5 * x, atol=1e-7)


def test_kernels_depend_only_on_channel_means(rng):
    ldo = make().eval()
    x = rng.standard_normal((1, 8, 6, 6))
    # same per-channel means, different spatial layout
    y = x[:, :, ::-1, :].copy()
    with no_grad():
        np.testing.assert_allclose(ldo.generate_kernels(Tensor(x)).data,
                                   ldo.generate_kernels(Tensor(y)).data, atol=1e-6)


def test_fuse_formula(rng):
    x, O = rng.random((2, 1, 2, 3, 3))
    a, b = rng.random((2, 1, 2, 1, 1))
    np.testing.assert_allclose(fuse(Tensor(x), Tensor(O), Tensor(a), Tensor(b)).data, a * O + b * x)


def test_config_validation():
    with pytest.raises(ValueError):
        LdoConfig(8, kernel_size=4)
    with pytest.raises(ValueError):
        LdoConfig(6, reduction=4)


def test_gradients_reach_all_parameters(rng):
    ldo = make().astype(np.float64)
    x = Tensor(rng.standard_normal((4, 8, 5, 5)), requires_grad=True)
    ops.sum(ops.mul(ldo(x), ldo(x))).backward()
    for name, p in ldo.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name
    assert x.grad.shape == x.shape

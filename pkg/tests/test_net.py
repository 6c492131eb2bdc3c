import numpy as np
import pytest

from mdir import ops
from mdir.classifier import DegradationClassifier
from mdir.losses import total_loss
from mdir.net import MDIRNet, NetConfig, ResidualBlock
from mdir.tensor import Tensor, no_grad

from _oracles import randomize_zero_weights


def conv(cin, cout, k):
    return cout * cin * k * k + cout


def census(C=16, blocks=3, k=3, r=4, feat=64, ldo=True, cfe=True):
    """Parameter count of the architecture, written out by hand."""
    w = [C, 2 * C, 4 * C]

    def stage(c):
        n = blocks * 2 * conv(c, c, 3)
        if ldo:
            h = c // r
            n += conv(c, c, 3)                                      # conv before LDO
            n += conv(c, h, 1) + 2 * h + conv(h, c * k * k, 1)      # kernel generator
            n += (c * h + h) + (h * 2 * c + 2 * c)                  # gate MLP
        return n

    n = conv(3, C, 3)
    n += 2 * sum(stage(c) for c in w)
    n += conv(w[0], w[1], 3) + conv(w[1], w[2], 3)
    n += conv(2 * w[0], w[0], 1) + conv(2 * w[1], w[1], 1) + conv(w[2], w[2], 1)
    n += (w[1] * w[0] * 4 + w[0]) + (w[2] * w[1] * 4 + w[1])
    n += sum(conv(c, 3, 3) for c in w)
    if cfe:
        n += sum(feat * c for c in w)
    return n


def test_parameter_census():
    assert MDIRNet(NetConfig()).num_parameters() == census()
    assert MDIRNet(NetConfig(use_ldo=False, use_cfe=False)).num_parameters() == census(ldo=False, cfe=False)
    assert MDIRNet(NetConfig.full_size()).num_parameters() == census(C=32, blocks=7)


def test_census_stable_across_seeds():
    a = MDIRNet().initialize(0).num_parameters()
    assert a == MDIRNet().initialize(5).num_parameters()


@pytest.mark.parametrize("H,W", [(32, 32), (48, 64), (64, 48), (64, 64)])
def test_scale_ladder(H, W):
    net = MDIRNet().initialize(0)
    x = Tensor(np.random.rand(1, 3, H, W))
    with no_grad():
        pyr = net.encode(net.stem(x))
        out = net(x, features=Tensor(np.random.rand(1, 64, H // 8, W // 8)))
    assert [p.shape for p in pyr] == [(1, 16, H, W), (1, 32, H // 2, W // 2), (1, 64, H // 4, W // 4)]
    assert [p.shape for p in out.predictions] == [(1, 3, H, W), (1, 3, H // 2, W // 2), (1, 3, H // 4, W // 4)]


def test_doubling_resolution_doubles_ladder():
    net = MDIRNet().initialize(0)
    with no_grad():
        a = net.encode(net.stem(Tensor(np.zeros((1, 3, 32, 32)))))
        b = net.encode(net.stem(Tensor(np.zeros((1, 3, 64, 64)))))
    for p, q in zip(a, b):
        assert q.shape[-2:] == (2 * p.shape[-2], 2 * p.shape[-1])


def test_indivisible_size_rejected():
    with pytest.raises(ValueError):
        MDIRNet()(Tensor(np.zeros((1, 3, 30, 32))))
    with pytest.raises(ValueError):
        MDIRNet()(Tensor(np.zeros((3, 32, 32))))


def test_zero_input_is_finite():
    net = MDIRNet().initialize(0)
    with no_grad():
        out = net(Tensor(np.zeros((2, 3, 32, 32))), features=Tensor(np.zeros((2, 64, 4, 4))))
    assert all(np.all(np.isfinite(p.data)) for p in out.predictions)


def test_residual_block_zero_weights_is_identity(rng):
    b = ResidualBlock(4).initialize(0)
    for p in b.parameters():
        p.data[...] = 0
    x = rng.random((1, 4, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(b(Tensor(x)).data, x)


def test_forward_is_pure(rng):
    net = MDIRNet().initialize(0).eval()
    clf = DegradationClassifier().initialize(1)
    x = Tensor(rng.random((1, 3, 32, 32)))
    with no_grad():
        a = net(x, classifier=clf).finest.data
        b = net(x, classifier=clf).finest.data
    assert a.tobytes() == b.tobytes()
    assert a.shape == x.shape


def test_same_seed_same_weights():
    a, b = MDIRNet().initialize(3), MDIRNet().initialize(3)
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes(), n


def test_zero_init_heads_return_resized_input(rng):
    net = MDIRNet().initialize(0)
    x = rng.random((1, 3, 32, 32)).astype(np.float32)
    with no_grad():
        out = net(Tensor(x), features=Tensor(rng.random((1, 64, 4, 4))))
    np.testing.assert_allclose(out.finest.data, x, atol=1e-6)


def test_zero_features_equal_cfe_disabled(rng):
    on = MDIRNet(NetConfig(use_cfe=True)).initialize(0).eval()
    off = MDIRNet(NetConfig(use_cfe=False)).initialize(0).eval()
    randomize_zero_weights(on, rng)
    # the CFE projections are extra parameters; everything else is shared by name
    off.load_state_dict({k: v for k, v in on.state_dict().items() if not k.startswith("cfe")})
    x = Tensor(rng.random((1, 3, 32, 32)))
    with no_grad():
        a = on(x, features=Tensor(np.zeros((1, 64, 4, 4)))).predictions
        b = off(x).predictions
    for p, q in zip(a, b):
        assert p.data.tobytes() == q.data.tobytes()


def test_gradient_reaches_every_parameter(rng):
    # zero-init heads would block every upstream gradient
    net = randomize_zero_weights(MDIRNet().initialize(0), rng)
    x = Tensor(rng.random((2, 3, 32, 32)))
    out = net(x, features=Tensor(rng.random((2, 64, 4, 4))))
    total_loss(out.predictions, Tensor(rng.random((2, 3, 32, 32)))).backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and p.grad.shape == p.shape, name
        if name.endswith("wg_conv1.bias"):
            # a bias right before train-mode batchnorm cancels exactly
            assert np.abs(p.grad).max() < 1e-6, name
        else:
            assert np.any(p.grad != 0), name


def test_trains_with_ldo_generators_zeroed(rng):
    from mdir.optim import Adam
    net = MDIRNet(NetConfig(use_cfe=False)).initialize(0)
    for name, p in net.named_parameters():
        if "wg_conv2" in name:
            p.data[...] = 0
    opt = Adam(net.parameters(), lr=1e-3)
    x, y = Tensor(rng.random((2, 3, 16, 16))), Tensor(rng.random((2, 3, 16, 16)))
    losses = []
    for _ in range(15):
        opt.zero_grad()
        loss = total_loss(net(x).predictions, y)
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    assert np.isfinite(losses).all() and losses[-1] < losses[0]


def test_untrained_ldo_units_and_embeddings_are_identity(rng):
    net = MDIRNet().initialize(3)
    x = Tensor(rng.standard_normal((2, 16, 8, 8)))
    with no_grad():
        assert net.enc[0].ldo_unit(x).data.tobytes() == x.data.tobytes()
        emb = net.cfe[1].embed(Tensor(rng.random((2, 64, 2, 2))), 8, 8)
    assert emb.shape == (2, 32, 8, 8) and not np.any(emb.data)

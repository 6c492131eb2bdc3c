import numpy as np
import pytest

from mdir import ops
from mdir.cfe import CfeStage, Merge, inject
from mdir.tensor import Tensor


def stage(cf=64, cs=32, seed=0):
    return CfeStage(cf, cs, 1).initialize(seed)


def test_embedding_shape():
    emb = stage().embed(Tensor(np.random.rand(1, 64, 8, 8)), 32, 32)
    assert emb.shape == (1, 32, 32, 32)


def test_zero_features_zero_embedding():
    emb = stage().embed(Tensor(np.zeros((2, 64, 4, 4))), 16, 16)
    assert np.all(emb.data == 0)


def test_constant_features_constant_embedding():
    s = stage()
    emb = s.embed(Tensor(np.full((1, 64, 4, 4), 0.5)), 16, 12).data
    expected = 0.5 * s.proj.weight.data[:, :, 0, 0].sum(axis=1)
    np.testing.assert_allclose(emb[0], np.broadcast_to(expected[:, None, None], (32, 16, 12)), rtol=1e-5)


def test_inject_zero_embedding_is_exact(rng):
    m = Merge(24, 16).initialize(0)
    enc, prev = Tensor(rng.random((1, 16, 8, 8))), Tensor(rng.random((1, 8, 8, 8)))
    plain = inject(enc, prev, None, m).data
    zero = inject(enc, prev, Tensor(np.zeros((1, 16, 8, 8))), m).data
    assert plain.tobytes() == zero.tobytes()
    assert plain.tobytes() == m(enc, prev).data.tobytes()


def test_inject_subtraction_oracle(rng):
    m = Merge(24, 16).initialize(1)
    enc, prev = Tensor(rng.random((2, 16, 8, 8))), Tensor(rng.random((2, 8, 8, 8)))
    emb = rng.standard_normal((2, 16, 8, 8)).astype(np.float32)
    diff = inject(enc, prev, Tensor(emb), m).data - m(enc, prev).data
    assert np.abs(diff - emb).max() < 1e-6


def test_concat_width_before_projection():
    m = Merge(24, 16)
    assert m.proj.weight.shape == (16, 24, 1, 1)


def test_deepest_stage_without_previous(rng):
    m = Merge(16, 16).initialize(0)
    out = inject(Tensor(rng.random((1, 16, 4, 4))), None, None, m)
    assert out.shape == (1, 16, 4, 4)


def test_spatial_mismatch_raises(rng):
    m = Merge(24, 16)
    with pytest.raises(ValueError):
        inject(Tensor(rng.random((1, 16, 8, 8))), Tensor(rng.random((1, 8, 4, 4))), None, m)
    with pytest.raises(ValueError):
        inject(Tensor(rng.random((1, 16, 8, 8))), Tensor(rng.random((1, 8, 8, 8))),
               Tensor(np.zeros((1, 16, 4, 4))), m)


def test_embedding_gradient_is_identity(rng):
    m = Merge(16, 16).initialize(0)
    emb = Tensor(rng.random((1, 16, 4, 4)), requires_grad=True)
    ops.sum(inject(Tensor(rng.random((1, 16, 4, 4))), None, emb, m)).backward()
    np.testing.assert_array_equal(emb.grad, np.ones_like(emb.data))


@pytest.mark.parametrize("size", [32, 40, 64])
def test_stage_shapes_across_sizes(size):
    from mdir.net import MDIRNet, NetConfig
    net = MDIRNet(NetConfig()).initialize(0)
    feat = Tensor(np.random.rand(1, 64, size // 8, size // 8))
    pyr = net.encode(net.stem(Tensor(np.random.rand(1, 3, size, size))))
    for e, p in zip(net.embeddings(feat, pyr), pyr):
        assert e.shape == p.shape


def test_stages_have_independent_parameters():
    from mdir.net import MDIRNet, NetConfig
    net = MDIRNet(NetConfig()).initialize(0)
    ids = {id(s.proj.weight) for s in net.cfe}
    assert len(ids) == 3

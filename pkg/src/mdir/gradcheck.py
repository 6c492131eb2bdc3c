"""Central finite-difference verification of analytic gradients (float64).

Each case builds a function of a few input arrays; the output is reduced to a
scalar with fixed random weights so every output entry contributes. The
relative error is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Module
from .tensor import Tensor

PER_OP_TOL = 1e-6
COMPOSED_TOL = 1e-5


def _scalarize(out, rng_weights):
    return ops.sum(ops.mul(out, Tensor(rng_weights)))


def numeric_grad(f, arrays, idx, h=1e-5, entries=None):
    """Central differences of scalar ``f(*arrays)`` w.r.t. arrays[idx]."""
    a = arrays[idx]
    flat = a.reshape(-1)
    positions = range(flat.size) if entries is None else entries
    g = np.zeros(flat.size)
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = f(*arrays)
        flat[i] = old - h
        fm = f(*arrays)
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(a.shape)


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_function(fn, arrays, seed=0, h=1e-5, max_entries=None):
    """Compare analytic and numeric gradients of ``fn(*tensors) -> Tensor``.

    Returns the worst relative error over all inputs. When ``max_entries`` is
    set, only that many randomly chosen entries per input are differenced
    (the analytic gradient is compared on the same entries).
    """
    rng = np.random.default_rng([seed, 0x5EED])  # salted: builders use [seed, case]
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    weights = rng.standard_normal(probe.shape)

    def scalar(*arrs):
        return float(_scalarize(fn(*[Tensor(a) for a in arrs]), weights).data)

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    _scalarize(fn(*tensors), weights).backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        entries = None
        if max_entries is not None and t.size > max_entries:
            entries = rng.choice(t.size, max_entries, replace=False)
        num = numeric_grad(scalar, arrays, i, h, entries)
        ana = np.zeros(t.shape) if t.grad is None else t.grad
        if entries is not None:
            num, ana = num.reshape(-1)[entries], ana.reshape(-1)[entries]
        worst = max(worst, relative_error(ana, num))
    return worst


def check_module(module, fn, inputs, seed=0, steps=(1e-4, 1e-5, 1e-6), floor=1e-4):
    """Directional-derivative check for every parameter tensor and input.

    For each tensor a random unit direction ``v`` is drawn; the analytic
    ``<grad, v>`` is compared with ``(f(x + h v) - f(x - h v)) / 2h``. Two
    forward passes per tensor and step keep whole-network checks cheap.

    The error is ``|a - n| / max(|a|, |n|, floor)``, minimised over the steps:
    large steps can straddle a ReLU kink, small ones drown tiny derivatives in
    roundoff. ``floor`` covers structurally zero gradients (a bias feeding a
    batch-statistics normalisation) where a ratio of two noise values means
    nothing.
    """
    rng = np.random.default_rng([seed, 0x5EED])  # salted: builders use [seed, case]
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    weights = rng.standard_normal(fn(*[Tensor(a) for a in inputs]).shape)

    def scalar():
        return float(_scalarize(fn(*[Tensor(a) for a in inputs]), weights).data)

    module.zero_grad()
    tensors = [Tensor(a.copy(), requires_grad=True) for a in inputs]
    _scalarize(fn(*tensors), weights).backward()

    worst = 0.0
    targets = [(p.data, p.grad) for p in module.parameters()]
    targets += [(a, t.grad) for a, t in zip(inputs, tensors)]
    for arr, grad in targets:
        v = rng.standard_normal(arr.shape)
        v /= np.linalg.norm(v)
        ana = 0.0 if grad is None else float(np.sum(grad * v))
        old = arr.copy()
        best = np.inf
        for h in steps:
            arr[...] = old + h * v
            fp = scalar()
            arr[...] = old - h * v
            fm = scalar()
            num = (fp - fm) / (2 * h)
            best = min(best, abs(ana - num) / max(abs(ana), abs(num), floor))
        arr[...] = old
        worst = max(worst, best)
    return worst


# ------------------------------------------------------------------ the suite

@dataclass
class CaseResult:
    name: str
    kind: str        # "op" or "composed"
    cases: int
    max_rel_error: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def _away_from_zero(rng, shape, margin=0.05):
    """Random values with |v| >= margin, so kinks of relu/abs are not straddled."""
    v = rng.uniform(margin, 1.0, size=shape)
    return v * rng.choice([-1.0, 1.0], size=shape)


def op_cases():
    """(name, builder) pairs; builder(rng) -> (fn, arrays)."""
    def elementwise(op):
        return lambda rng: (op, [_away_from_zero(rng, (rng.integers(3, 11),))])

    def binary(op):
        def build(rng):
            n = rng.integers(3, 11)
            return op, [rng.standard_normal(n), rng.standard_normal(n)]
        return build

    def conv(rng):
        k = int(rng.choice([1, 3, 5]))
        s = int(rng.choice([1, 2]))
        x = rng.standard_normal((2, 2, 5, 5))
        w = rng.standard_normal((2, 2, k, k))
        b = rng.standard_normal(2)
        return (lambda x, w, b: ops.conv2d(x, w, b, s, (k - 1) // 2)), [x, w, b]

    def convT(rng):
        return ops.conv_transpose2x, [rng.standard_normal((1, 2, 2, 3)),
                                      rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3)]

    def unfold(rng):
        k = int(rng.choice([3, 5]))
        return (lambda x: ops.unfold(x, k)), [rng.standard_normal((2, 3, 3))]

    def fold(rng):
        k = 3
        return (lambda c: ops.fold(c, (3, 3), k, normalize=True)), [rng.standard_normal((1, 2, 9, 9))]

    def dyn(rng):
        k = int(rng.choice([3, 5, 7]))
        return (lambda x, w: ops.dynamic_filter(x, w, k)), [rng.standard_normal((1, 2, 4, 4)),
                                                              rng.uniform(-1, 1, (1, 2, k * k))]

    def bn(rng):
        x = rng.standard_normal((4, 2, 2, 2))
        rm, rv = np.zeros(2), np.ones(2)
        return (lambda x, g, b: ops.batchnorm(x, g, b, rm.copy(), rv.copy(), True)), \
            [x, rng.uniform(0.5, 1.5, 2), rng.standard_normal(2)]

    def bn_eval(rng):
        rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)
        return (lambda x, g, b: ops.batchnorm(x, g, b, rm, rv, False)), \
            [rng.standard_normal((2, 2, 1, 1)), rng.standard_normal(2), rng.standard_normal(2)]

    def resize(rng):
        Ho, Wo = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        return (lambda x: ops.bilinear_resize(x, Ho, Wo)), [rng.standard_normal((1, 2, 3, 3))]

    def fft(rng):
        return ops.fft2, [rng.standard_normal((1, 2, 3))]

    def linear(rng):
        return ops.linear, [rng.standard_normal((2, 3)), rng.standard_normal((4, 3)), rng.standard_normal(4)]

    def concat(rng):
        return (lambda a, b: ops.concat([a, b], axis=1)), [rng.standard_normal((1, 2, 2, 2)),
                                                            rng.standard_normal((1, 1, 2, 2))]

    def split(rng):
        return (lambda a: ops.split(a, [1, 2], axis=1)[1]), [rng.standard_normal((2, 3))]

    def gap(rng):
        return ops.global_avg_pool, [rng.standard_normal((1, 3, 2, 3))]

    def reshape(rng):
        return (lambda a: ops.reshape(a, (3, 2))), [rng.standard_normal((2, 3))]

    def bce(rng):
        y = rng.integers(0, 2, 4).astype(float)
        return (lambda z: ops.bce_with_logits(z, y)), [rng.standard_normal((2, 4)) * 3]

    def l1(rng):
        n = rng.integers(3, 11)
        a = rng.standard_normal(n)
        return ops.l1_loss, [a, a + _away_from_zero(rng, (n,))]

    return [
        ("add", binary(ops.add)), ("sub", binary(ops.sub)), ("mul", binary(ops.mul)),
        ("scalar_mul", elementwise(lambda x: ops.mul(x, 2.5))),
        ("power", elementwise(lambda x: ops.power(x, 2))),
        ("relu", elementwise(ops.relu)), ("tanh", elementwise(ops.tanh)),
        ("sigmoid", elementwise(ops.sigmoid)), ("abs", elementwise(ops.abs)),
        ("sum", elementwise(ops.sum)), ("mean", elementwise(ops.mean)),
        ("l1_loss", l1), ("reshape", reshape), ("concat", concat), ("split", split),
        ("linear", linear), ("conv2d", conv), ("conv_transpose2x", convT),
        ("unfold", unfold), ("fold", fold), ("dynamic_filter", dyn),
        ("global_avg_pool", gap), ("batchnorm_train", bn), ("batchnorm_eval", bn_eval),
        ("bilinear_resize", resize), ("fft2", fft), ("bce_with_logits", bce),
    ]


class _CfePair(Module):
    def __init__(self, stage, merge):
        self.stage, self.merge = stage, merge


def composed_cases():
    """(name, builder) pairs; builder(seed) -> (module, fn, inputs)."""
    from .cfe import CfeStage, Merge, inject
    from .classifier import DegradationClassifier
    from .ldo import LDO, LdoConfig
    from .net import MDIRNet, NetConfig, ResidualBlock

    def ldo(seed):
        rng = np.random.default_rng(seed)
        m = LDO(LdoConfig(4, int(rng.choice([3, 5])), 2)).initialize(seed).astype(np.float64)
        if seed % 2:
            m.eval()
        return m, m, [rng.standard_normal((4, 4, 5, 5))]

    def residual(seed):
        rng = np.random.default_rng(seed)
        m = ResidualBlock(3).initialize(seed).astype(np.float64)
        return m, m, [rng.standard_normal((1, 3, 5, 5))]

    def cfe(seed):
        rng = np.random.default_rng(seed)
        both = _CfePair(CfeStage(4, 3, 1), Merge(6, 3)).initialize(seed).astype(np.float64)

        def fn(feat, enc, prev):
            return inject(enc, prev, both.stage.embed(feat, 4, 4), both.merge)

        return both, fn, [rng.standard_normal((1, 4, 2, 2)), rng.standard_normal((1, 3, 4, 4)),
                          rng.standard_normal((1, 3, 4, 4))]

    def classifier(seed):
        rng = np.random.default_rng(seed)
        m = DegradationClassifier().initialize(seed).astype(np.float64)
        return m, (lambda x: m(x).logits), [rng.uniform(0, 1, (1, 3, 16, 16))]

    def network(seed):
        rng = np.random.default_rng(seed)
        cfg = NetConfig(base_channels=4, res_blocks=1, kernel_size=3, reduction=2, feat_channels=4)
        m = MDIRNet(cfg).initialize(seed).astype(np.float64).eval()
        # heads, LDO-unit convs and CFE projections start at zero; randomize
        # them so the whole graph is exercised
        for name, p in m.named_parameters():
            if name.endswith("weight") and not np.any(p.data):
                p.data[...] = rng.standard_normal(p.shape) * 0.1

        def fn(img, feat):
            out = m(img, features=feat)
            return ops.concat([ops.reshape(p, (p.size,)) for p in out.predictions], axis=0)

        return m, fn, [rng.uniform(0, 1, (2, 3, 8, 8)), rng.standard_normal((2, 4, 1, 1))]

    return [("ldo", ldo), ("residual_block", residual), ("cfe_inject", cfe),
            ("classifier", classifier), ("mdir_net", network)]


def run_suite(n_cases=20, seed=0, log=None):
    """Run every op and composed check ``n_cases`` times. Returns CaseResults."""
    results = []
    for name, build in op_cases():
        t0, worst = time.perf_counter(), 0.0
        for c in range(n_cases):
            rng = np.random.default_rng([seed, c])
            fn, arrays = build(rng)
            worst = max(worst, check_function(fn, arrays, seed=c))
        results.append(CaseResult(name, "op", n_cases, worst, PER_OP_TOL, time.perf_counter() - t0))
        if log:
            log(results[-1])
    for name, build in composed_cases():
        t0, worst = time.perf_counter(), 0.0
        for c in range(n_cases):
            module, fn, inputs = build(seed * 1000 + c)
            worst = max(worst, check_module(module, fn, inputs, seed=c))
        results.append(CaseResult(name, "composed", n_cases, worst, COMPOSED_TOL, time.perf_counter() - t0))
        if log:
            log(results[-1])
    return results

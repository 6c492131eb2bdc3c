"""Local dynamic optimization: input-conditioned depthwise filtering.

The block pools its input to a per-channel context vector, turns that into one
k x k kernel per channel (squashed with tanh so both low- and high-pass shapes
are reachable), filters the input with those kernels and blends the result
back with the input through sigmoid gates predicted from the same context.
"""
from dataclasses import dataclass

from . import ops
from .nn import BatchNorm, Conv2d, Linear, Module


@dataclass(frozen=True)
class LdoConfig:
    channels: int
    kernel_size: int = 3
    reduction: int = 4

    def __post_init__(self):
        if self.kernel_size not in (3, 5, 7):
            raise ValueError(f"kernel_size must be 3, 5 or 7, got {self.kernel_size}")
        if self.channels % self.reduction:
            raise ValueError(f"channels ({self.channels}) not divisible by reduction ({self.reduction})")


@dataclass
class LdoIntermediates:
    s: object
    s_prime: object
    w: object
    W_dyn: object
    X_unfold: object
    O: object
    alpha: object
    beta: object
    F_out: object


class LDO(Module):
    def __init__(self, cfg: LdoConfig):
        self.cfg = cfg
        C, k, r = cfg.channels, cfg.kernel_size, cfg.reduction
        hidden = C // r
        self.wg_conv1 = Conv2d(C, hidden, 1)
        self.wg_bn = BatchNorm(hidden)
        self.wg_conv2 = Conv2d(hidden, C * k * k, 1)
        self.mlp_fc1 = Linear(C, hidden)
        self.mlp_fc2 = Linear(hidden, 2 * C)

    def _kernels(self, s):
        s_prime = ops.relu(self.wg_bn(self.wg_conv1(s)))
        w = self.wg_conv2(s_prime)
        return s_prime, w, ops.tanh(w)

    def generate_kernels(self, x):
        """(N, C, H, W) -> W_dyn of shape (N, C, k*k)."""
        N, C = x.shape[:2]
        _, _, W_dyn = self._kernels(ops.global_avg_pool(x))
        return ops.reshape(W_dyn, (N, C, self.cfg.kernel_size ** 2))

    def gates(self, s):
        """sigmoid(MLP(s)) split into (alpha, beta), each (N, C, 1, 1)."""
        N, C = s.shape[:2]
        h = ops.relu(self.mlp_fc1(ops.reshape(s, (N, C))))
        ab = ops.sigmoid(self.mlp_fc2(h))
        alpha, beta = ops.split(ab, [C, C], axis=1)
        return ops.reshape(alpha, (N, C, 1, 1)), ops.reshape(beta, (N, C, 1, 1))

    def forward(self, x, return_intermediates=False):
        N, C = x.shape[:2]
        k = self.cfg.kernel_size
        s = ops.global_avg_pool(x)
        s_prime, w, W_flat = self._kernels(s)
        W_dyn = ops.reshape(W_flat, (N, C, k * k))
        O = ops.dynamic_filter(x, W_dyn, k)
        alpha, beta = self.gates(s)
        F_out = ops.add(ops.mul(alpha, O), ops.mul(beta, x))
        if not return_intermediates:
            return F_out
        return F_out, LdoIntermediates(
            s=s, s_prime=s_prime, w=w, W_dyn=W_dyn,
            X_unfold=ops.unfold(x.detach(), k), O=O,
            alpha=alpha, beta=beta, F_out=F_out,
        )


def dynamic_filter(x, W_dyn, k):
    """Apply per-channel kernels ``W_dyn`` (N, C, k*k) to ``x`` (N, C, H, W)."""
    return ops.dynamic_filter(x, W_dyn, k)


def dynamic_filter_unfold(x, W_dyn, k):
    """Same result as :func:`dynamic_filter`, written literally as
    unfold -> multiply -> sum over the k*k axis."""
    N, C, H, W = x.shape
    prod = ops.mul(ops.unfold(x, k), ops.reshape(W_dyn, (N, C, k * k, 1)))
    return ops.reshape(ops.sum_axis(prod, 2), (N, C, H, W))


def fuse(x, O, alpha, beta):
    return ops.add(ops.mul(alpha, O), ops.mul(beta, x))

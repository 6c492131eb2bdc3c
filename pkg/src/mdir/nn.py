"""Parameters, modules and the basic layers.

Initialization is keyed by parameter *name*: each parameter draws from an RNG
seeded with ``(seed, crc32(name))``. Two models that share a sub-structure
(e.g. ablation variants with and without LDO) therefore start with
bit-identical weights for the parts they share.
"""
import zlib

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ("init", "fan_in")

    def __init__(self, shape, init="kaiming", fan_in=None, dtype=DEFAULT_DTYPE):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.init = init
        self.fan_in = fan_in

    def reset(self, rng):
        if self.init == "zeros":
            self.data[...] = 0
        elif self.init == "ones":
            self.data[...] = 1
        elif self.init == "he":
            # kaiming-normal for ReLU stacks: std = sqrt(2 / fan_in)
            self.data[...] = rng.standard_normal(self.shape) * np.sqrt(2.0 / self.fan_in)
        elif self.init == "kaiming":
            # kaiming-uniform, fan-in mode, a=sqrt(5): bound = 1/sqrt(fan_in)
            bound = 1.0 / np.sqrt(self.fan_in)
            self.data[...] = rng.uniform(-bound, bound, size=self.shape)
        else:
            raise ValueError(f"unknown init {self.init!r}")
        self.grad = None


def param_rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class Module:
    training = True

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{key}.{i}.")

    def named_buffers(self):
        for mname, mod in self.named_modules():
            for bname, arr in getattr(mod, "buffers", {}).items():
                yield (f"{mname}.{bname}" if mname else bname), arr

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def initialize(self, seed):
        for name, p in self.named_parameters():
            p.reset(param_rng(seed, name))
        for _, mod in self.named_modules():
            if hasattr(mod, "reset_buffers"):
                mod.reset_buffers()
        return self

    def train(self, mode=True):
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for _, mod in self.named_modules():
            for k, v in getattr(mod, "buffers", {}).items():
                mod.buffers[k] = v.astype(dtype)
        return self

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        state = {n: p.data for n, p in self.named_parameters()}
        state.update({f"buffer:{n}": b for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = [n for n in params if n not in state]
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for n, p in params.items():
            if state[n].shape != p.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=p.dtype)
        for n, buf in self.named_buffers():
            key = f"buffer:{n}"
            if key in state:
                buf[...] = state[key]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, bias=True, zero_init=False, init="kaiming"):
        self.stride, self.padding = stride, (k - 1) // 2
        fan_in = cin * k * k
        if zero_init:
            init = "zeros"
        self.weight = Parameter((cout, cin, k, k), init, fan_in)
        bias_init = "zeros" if init in ("zeros", "he") else init
        self.bias = Parameter((cout,), bias_init, fan_in) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2x(Module):
    """2x upsampling, kernel 2, stride 2."""

    def __init__(self, cin, cout):
        self.weight = Parameter((cin, cout, 2, 2), "kaiming", cout * 4)
        self.bias = Parameter((cout,), "kaiming", cout * 4)

    def forward(self, x):
        return ops.conv_transpose2x(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, fin, fout, bias=True):
        self.weight = Parameter((fout, fin), "kaiming", fin)
        self.bias = Parameter((fout,), "kaiming", fin) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1):
        self.momentum = momentum
        self.gamma = Parameter((channels,), "ones")
        self.beta = Parameter((channels,), "zeros")
        self.channels = channels
        self.reset_buffers()

    def reset_buffers(self):
        self.buffers = {
            "running_mean": np.zeros(self.channels, dtype=DEFAULT_DTYPE),
            "running_var": np.ones(self.channels, dtype=DEFAULT_DTYPE),
        }

    def forward(self, x):
        b = self.buffers
        return ops.batchnorm(x, self.gamma, self.beta, b["running_mean"], b["running_var"],
                             self.training, self.momentum)

"""Adam and the cosine learning-rate schedule."""
import logging
import math

import numpy as np

log = logging.getLogger(__name__)


def cosine_lr(step, total_steps, lr0=3e-4, lr_min=1e-6):
    """Cosine annealing from ``lr0`` at step 0 to ``lr_min`` at ``total_steps``.

    Steps outside [0, total_steps] are clamped (with a warning).
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        log.warning("lr step %s outside [0, %s]; clamping", step, total_steps)
        step = min(max(step, 0), total_steps)
    if step == 0:
        return float(lr0)
    if step == total_steps:
        return float(lr_min)
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * step / total_steps))


class Adam:
    """Adam without weight decay. Moments live in the parameter dtype."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr == 0:
                continue  # keep parameters bitwise unchanged
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def state_dict(self):
        state = {"t": self.t}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m
            state[f"v.{i}"] = v
        return state

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for i in range(len(self.params)):
            self.m[i][...] = state[f"m.{i}"]
            self.v[i][...] = state[f"v.{i}"]

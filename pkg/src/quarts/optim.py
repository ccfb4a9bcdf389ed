"""Adam optimizer over named parameter maps."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam with bias correction over a {name: Tensor} parameter map.

    Parameters without a gradient are skipped entirely (state untouched),
    so a parameter group that never receives gradients stays bitwise
    unchanged. The step counter increases by 1 per ``step`` call.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def decay_lr(self, factor: float) -> None:
        self.lr *= factor


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def assert_grads_clear(params: dict[str, Tensor]) -> None:
    """Guard against silent gradient accumulation across steps."""
    for name, p in params.items():
        if p.grad is not None:
            raise AssertionError(f"gradient not reset before backward: {name}")

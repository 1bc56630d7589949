"""Adam optimizer over the trainable slice of a ParamStore."""

from __future__ import annotations

import numpy as np

from .errors import IntegrityError
from .params import ParamStore


class Adam:
    """Standard Adam with bias correction.

    Only trainable parameters are touched; frozen tensors stay bit-identical
    no matter how many steps run.  A trainable parameter without a gradient
    at step time is an integrity error, not a silent no-op.
    """

    def __init__(self, store: ParamStore, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {
            name: np.zeros_like(t.data) for name, t in store.trainable_items()
        }
        self._v = {
            name: np.zeros_like(t.data) for name, t in store.trainable_items()
        }

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, tensor in self.store.trainable_items():
            if tensor.grad is None:
                raise IntegrityError(f"trainable parameter has no gradient: {name}")
            g = tensor.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        self.store.zero_grad()

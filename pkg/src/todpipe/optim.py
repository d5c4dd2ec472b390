"""Adam-style adaptive gradient descent over named parameter dicts."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam; beta1=0.9, beta2=0.999, eps=1e-8.

    Operates in place on a dict of float64 arrays; state is keyed by
    parameter name so the update is a pure function of the gradient stream.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for key, grad in grads.items():
            if key not in self._m:
                self._m[key] = np.zeros_like(params[key])
                self._v[key] = np.zeros_like(params[key])
            m = self._m[key]
            v = self._v[key]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            params[key] -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

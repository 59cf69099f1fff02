"""Full-batch Adam over a list of numpy arrays (updated in place)."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr  # float or callable(step) -> float
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def rate(self, epoch):
        return self.lr(epoch) if callable(self.lr) else float(self.lr)

    def step(self, grads, epoch=None):
        lr = self.rate(self.t if epoch is None else epoch)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if lr != 0.0:
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

"""First-order optimizer with per-parameter adaptive moments."""

import numpy as np


class Adam:
    """Standard Adam update with bias correction.

    Parameters are updated in the order given, so a list built from
    Module.named_parameters() makes runs reproducible. Moment buffers match
    each parameter's dtype.
    """

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

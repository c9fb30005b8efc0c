"""Adam optimizer."""

import numpy as np

from ..errors import NumericError


class Adam:
    """Bias-corrected Adam over a fixed list of :class:`Param` objects.

    Defaults: learning rate 1e-4, beta1 0.9, beta2 0.999, eps 1e-7.  ``step``
    consumes the gradients currently stored on the params and rejects
    non-finite gradients with a diagnostic naming the offending parameter.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for idx, p in enumerate(self.params):
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(
                    f"non-finite gradient for parameter {idx} ({p.name!r}) at step {self.t + 1}"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
        }

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.beta1 = state["beta1"]
        self.beta2 = state["beta2"]
        self.eps = state["eps"]
        self.t = state["t"]

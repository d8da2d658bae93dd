"""AdaBelief optimizer.

Tracks a first moment of the gradient and a second moment of the belief
(the squared deviation of the gradient from the first moment), both
bias-corrected:

    m <- b1*m + (1-b1)*g
    s <- b2*s + (1-b2)*(g-m)^2 + eps
    theta <- theta - lr * (m / (1-b1^t)) / (sqrt(s / (1-b2^t)) + eps)
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import OptimizerError


class AdaBelief:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.s = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        """Apply one update from the gradients currently stored on the parameters.

        Aborts (leaving parameters and moments untouched) if any gradient
        is non-finite, reporting the offending tensors.
        """
        grads = {}
        bad = []
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise OptimizerError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {p.data.shape}")
            if not np.all(np.isfinite(g)):
                bad.append(f"{name} ({np.count_nonzero(~np.isfinite(g))} non-finite)")
            grads[name] = g
        if bad:
            raise OptimizerError("aborting step on non-finite gradients: " + ", ".join(bad))
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            s = self.s[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            diff = g - m
            s *= self.beta2
            s += (1.0 - self.beta2) * diff * diff + self.eps
            p.data -= self.lr * (m / c1) / (np.sqrt(s / c2) + self.eps)

"""Adam with an L2 weight-decay term folded into the gradient."""

from __future__ import annotations

from typing import Dict, Iterable

import numpy as np

from .numerics import ParamSet


def adam_step(param, grad, m, v, lr, beta1=0.9, beta2=0.999, weight_decay=0.0, t=1, eps=1e-8):
    """One bias-corrected Adam update. Returns (new_param, new_m, new_v)."""
    if t < 1:
        raise ValueError(f"adam step counter must be >= 1, got {t}")
    g = grad + weight_decay * param if weight_decay else grad
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: ParamSet, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, decayed: Iterable[str] = ()):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decayed = set(decayed)
        self.m: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.t = 0

    def step(self, params: ParamSet, lr: float) -> None:
        self.t += 1
        for name in params:
            wd = self.weight_decay if name in self.decayed else 0.0
            params.values[name], self.m[name], self.v[name] = adam_step(
                params.values[name], params.grads[name], self.m[name], self.v[name],
                lr, self.beta1, self.beta2, wd, self.t, self.eps,
            )

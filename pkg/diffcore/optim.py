"""
Adam optimiser and cosine learning-rate decay
"""

import math
from typing import Dict

import numpy as np

from diffcore.nn import ParameterSet


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine decay from base_lr at step 0 to 0 at total_steps"""
    if total_steps <= 0:
        return base_lr
    progress = min(max(step, 0), total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam over every tensor of a ParameterSet"""

    def __init__(self, params: ParameterSet, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def step(self, lr: float) -> None:
        """
        Apply one update with the given learning rate

        Parameters without a gradient are treated as having zero gradient.
        """
        self.steps += 1
        bias1 = 1.0 - self.beta1 ** self.steps
        bias2 = 1.0 - self.beta2 ** self.steps
        for name, param in self.params.items():
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            if lr == 0.0:
                continue
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            param.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

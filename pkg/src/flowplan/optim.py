"""Adaptive-moment optimizer with bias correction and decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError


class Adam:
    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ContractError("betas must lie in (0, 1)")
        if not (0.0 < eps < 1e-2):
            raise ContractError("epsilon must lie in (0, 1e-2)")
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter '{name}' has no gradient")
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.weight_decay = float(state["weight_decay"])
        for name in self.m:
            self.m[name] = np.asarray(state["m"][name], dtype=np.float64).reshape(
                self.m[name].shape
            )
            self.v[name] = np.asarray(state["v"][name], dtype=np.float64).reshape(
                self.v[name].shape
            )


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm

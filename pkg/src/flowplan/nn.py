"""Small neural building blocks: linear layers, MLPs, attention blocks.

Parameters are Xavier-uniform initialized from a caller-supplied seeded
generator so that construction is fully reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, concat, softmax_attention


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class with recursive, deterministically ordered parameter access."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item
            elif isinstance(value, dict):
                for key in sorted(value):
                    item = value[key]
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full}.{key}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{key}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter '{name}'")
            arr = np.asarray(state[name], dtype=np.float64).reshape(p.shape)
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.weight = Tensor(xavier_uniform(rng, in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class MLP(Module):
    """Feed-forward stack with tanh hidden activations (smooth for grad checks)."""

    def __init__(self, dims, rng):
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.tanh()
        return x


class FeedForward(Module):
    def __init__(self, dim, hidden, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x):
        return self.fc2(self.fc1(x).tanh())


class CrossAttentionBlock(Module):
    """Single-head cross-attention with residual connection and feed-forward.

    Zeroing ``out_proj`` and ``ffn.fc2`` makes the block an exact identity
    on the queries, which the residual-structure tests rely on.
    """

    def __init__(self, dim_q, dim_kv, rng, hidden=None):
        hidden = hidden or 2 * dim_q
        self.q_proj = Linear(dim_q, dim_q, rng)
        self.k_proj = Linear(dim_kv, dim_q, rng)
        self.v_proj = Linear(dim_kv, dim_q, rng)
        self.out_proj = Linear(dim_q, dim_q, rng)
        self.ffn = FeedForward(dim_q, hidden, rng)

    def __call__(self, queries, context):
        attended = softmax_attention(
            self.q_proj(queries), self.k_proj(context), self.v_proj(context)
        )
        x = queries + self.out_proj(attended)
        return x + self.ffn(x)


class SelfAttentionBlock(CrossAttentionBlock):
    def __call__(self, tokens):
        return super().__call__(tokens, tokens)


def sinusoidal_embedding(s, dim):
    """Fixed sinusoidal embedding of a scalar in [0, 1]."""
    half = dim // 2
    freqs = np.exp(np.arange(half) * (-math.log(10000.0) / max(half - 1, 1)))
    angles = s * freqs * 1000.0
    return np.concatenate([np.sin(angles), np.cos(angles)])


def cross_entropy(logits, label):
    """Softmax cross-entropy of a 1-d logit tensor against an integer label."""
    log_probs = logits.log_softmax(axis=-1)
    return -log_probs[label]


def mse(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def l1(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"l1: shape mismatch {pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()

"""Adaptive-moment optimizer with decoupled weight decay and parameter groups."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


class AdamW:
    """``groups`` is a list of ``(params, lr)`` pairs.

    Each step first shrinks every parameter by ``1 - lr * weight_decay``,
    independent of its gradient, then applies the bias-corrected Adam update.
    Parameters whose ``grad`` is None are left untouched.
    """

    def __init__(self, groups, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.groups = []
        for params, lr in groups:
            if lr <= 0:
                raise ConfigurationError(f"learning rate must be positive, got {lr}")
            self.groups.append((list(params), float(lr)))
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.steps = 0
        self.m = {}
        self.v = {}

    def params(self):
        return [p for params, _ in self.groups for p in params]

    def step(self):
        self.steps += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.steps
        c2 = 1.0 - b2**self.steps
        for params, lr in self.groups:
            for p in params:
                if p.grad is None:
                    continue
                g = p.grad
                key = id(p)
                m = self.m.setdefault(key, np.zeros_like(p.data))
                v = self.v.setdefault(key, np.zeros_like(p.data))
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p.data *= 1.0 - lr * self.weight_decay
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def moments(self, named_params):
        """{name: (m, v)} for parameters that have taken a step."""
        out = {}
        for name, p in named_params:
            if id(p) in self.m:
                out[name] = (self.m[id(p)], self.v[id(p)])
        return out

    def load_moments(self, named_params, moments, steps):
        by_name = dict(named_params)
        self.m, self.v = {}, {}
        for name, (m, v) in moments.items():
            p = by_name[name]
            self.m[id(p)] = np.array(m, dtype=p.data.dtype)
            self.v[id(p)] = np.array(v, dtype=p.data.dtype)
        self.steps = steps

"""Adam with bias correction and per-epoch multiplicative learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay: float = 0.02
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Updates a name -> Tensor mapping in place.

    Gradients are zeroed after every ``step``.  ``end_epoch`` scales the
    learning rate by ``1 - decay``.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, decay=0.02):
        if learning_rate < 0 or decay < 0 or decay >= 1:
            raise ContractError("learning_rate must be >= 0 and decay in [0, 1)")
        self.params = dict(params)
        self.state = AdamState(learning_rate, beta1, beta2, epsilon, decay)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    @property
    def learning_rate(self):
        return self.state.learning_rate

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        s = self.state
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params.items():
            g = p.grad
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data -= s.learning_rate * (m / c1) / (np.sqrt(v / c2) + s.epsilon)
            p.grad = np.zeros_like(p.data)

    def end_epoch(self):
        self.state.learning_rate *= 1.0 - self.state.decay

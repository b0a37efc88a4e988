"""First-order optimisers operating on :class:`~hmtnet.tensor.Parameter` lists."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .tensor import Parameter


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[np.ndarray | None],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    state: AdamState | None = None,
) -> AdamState:
    """Apply one bias-corrected Adam update in place and return the new state."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    state = AdamState() if state is None else state
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g in zip(params, grads):
        if g is None:
            continue
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        if m.shape != p.shape:
            raise ConfigurationError(f"optimizer state for {p.name} has shape {m.shape}, param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 0.002,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float | None = None) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.lr if lr is None else lr,
                  self.betas, self.eps, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD:
    """Plain (optionally momentum) stochastic gradient descent."""

    def __init__(self, params: Sequence[Parameter], lr: float = 0.002, momentum: float = 0.0):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.momentum:
                v = self._velocity.setdefault(p.name, np.zeros_like(p.data))
                v *= self.momentum
                v += g
                g = v
            p.data -= (lr * g).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

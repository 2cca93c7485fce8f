"""Adam, Adagrad and RMSProp over :class:`~foresight.ndcore.Parameter` lists.

Optimizers never zero gradients; the training loop owns that.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .ndcore import Parameter


class PoisonedUpdateError(FloatingPointError):
    """A gradient contained NaN or inf; the named parameter was left untouched."""


class Optimizer:
    kind = "base"

    def __init__(self, params: Sequence[Parameter], lr: float, clip_norm: float | None = None):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm
        self.t = 0

    def _gradients(self) -> list[np.ndarray]:
        grads = []
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise PoisonedUpdateError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
            grads.append(p.grad)
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        return grads

    def step(self) -> None:
        grads = self._gradients()
        self.t += 1
        for k, (p, g) in enumerate(zip(self.params, grads)):
            p.data -= self._update(k, g)

    def _update(self, k: int, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float | None = None):
        super().__init__(params, lr, clip_norm)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, k, g):
        b1, b2 = self.beta1, self.beta2
        self.m[k] = b1 * self.m[k] + (1 - b1) * g
        self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
        m_hat = self.m[k] / (1 - b1 ** self.t)
        v_hat = self.v[k] / (1 - b2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Adagrad(Optimizer):
    kind = "adagrad"

    def __init__(self, params, lr: float = 1e-2, eps: float = 1e-8, clip_norm: float | None = None):
        super().__init__(params, lr, clip_norm)
        self.eps = eps
        self.accum = [np.zeros_like(p.data) for p in self.params]

    def _update(self, k, g):
        self.accum[k] += g * g
        return self.lr * g / (np.sqrt(self.accum[k]) + self.eps)


class RMSProp(Optimizer):
    kind = "rmsprop"

    def __init__(self, params, lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-8,
                 clip_norm: float | None = None):
        super().__init__(params, lr, clip_norm)
        self.rho, self.eps = rho, eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def _update(self, k, g):
        self.sq[k] = self.rho * self.sq[k] + (1 - self.rho) * g * g
        return self.lr * g / (np.sqrt(self.sq[k]) + self.eps)


OPTIMIZERS = {"adam": Adam, "adagrad": Adagrad, "rmsprop": RMSProp}


def make_optimizer(kind: str, params: Sequence[Parameter], lr: float = 1e-3,
                   clip_norm: float | None = None) -> Optimizer:
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}") from None
    return cls(params, lr=lr, clip_norm=clip_norm)


def adam_step(state: Adam, params: Sequence[Parameter] | None = None) -> Adam:
    """Apply one bias-corrected Adam update in place and return the state."""
    if params is not None and list(params) != state.params:
        raise ValueError("adam_step: parameter list does not match optimizer state")
    state.step()
    return state

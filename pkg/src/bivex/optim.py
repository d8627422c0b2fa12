"""Gradient clipping and the RMSProp update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bivex.tensor import Tensor

# Relative slack when deciding whether the global norm exceeds the limit;
# makes clip_gradients exactly idempotent despite rounding in the rescale.
_CLIP_SLACK = 1e-12


def global_grad_norm(params) -> float:
    total = 0.0
    for t in _tensors(params):
        if t.grad is not None:
            g = t.grad
            total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return float(np.sqrt(total))


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``.

    Returns the applied scale (1.0 when no clipping happened).
    """
    norm = global_grad_norm(params)
    if norm <= max_norm * (1.0 + _CLIP_SLACK) or norm == 0.0:
        return 1.0
    s = max_norm / norm
    for t in _tensors(params):
        if t.grad is not None:
            t.grad *= s
    return s


@dataclass
class RmsPropState:
    """Per-parameter running mean of squared gradients plus hyperparameters.

    Defaults: decay 0.9, epsilon 1e-8, learning rate 1e-3.
    """

    decay: float = 0.9
    epsilon: float = 1e-8
    learning_rate: float = 1e-3
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def mean_square(self, name: str, like: np.ndarray) -> np.ndarray:
        buf = self.v.get(name)
        if buf is None:
            buf = np.zeros_like(like)
            self.v[name] = buf
        return buf


def rmsprop_step(named_params: dict[str, Tensor], state: RmsPropState) -> None:
    """v <- rho*v + (1-rho)*g^2 ; p <- p - lr*g/(sqrt(v)+eps), in place."""
    rho = state.decay
    lr = state.learning_rate
    eps = state.epsilon
    for name, p in named_params.items():
        if p.grad is None:
            continue
        g = p.grad
        v = state.mean_square(name, p.data)
        v *= rho
        v += (1.0 - rho) * (g * g)
        p.data -= lr * g / (np.sqrt(v) + eps)


def zero_grads(params) -> None:
    for t in _tensors(params):
        t.zero_grad()


def _tensors(params):
    if isinstance(params, dict):
        return params.values()
    if isinstance(params, Tensor):
        return [params]
    return params

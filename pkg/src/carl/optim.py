"""RMSprop over a named set of parameters."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class RmspropState:
    lr: float = 0.001
    decay: float = 0.9
    eps: float = 1e-8
    accumulators: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError(f"decay must lie in [0, 1), got {self.decay}")


def rmsprop_step(params, grads, state):
    """Update ``params`` (name -> ndarray, in place) from ``grads``.

    acc <- decay*acc + (1-decay)*g**2 ;  p <- p - lr*g/(sqrt(acc) + eps)
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"rmsprop_step[{name}]", p.shape, g.shape)
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(p)
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p -= state.lr * g / (np.sqrt(acc) + state.eps)
    state.step += 1
    return params

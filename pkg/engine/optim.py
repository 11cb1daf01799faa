"""Adam optimizer over tensor_core leaf parameters."""

from dataclasses import dataclass, field

import numpy as np

from config import settings
from utils.errors import DimensionError


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name, plus the step count."""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr=settings.LEARNING_RATE, beta1=settings.ADAM_BETA1,
              beta2=settings.ADAM_BETA2, eps=settings.ADAM_EPS):
    """
    One bias-corrected Adam update, applied in place.

    params: dict name -> Tensor (updated through ``.data``)
    grads:  dict name -> ndarray shaped like the parameter
    state:  AdamState, moment buffers are created on first use
    """
    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, param in params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise DimensionError(f"gradient for '{name}' has shape {g.shape}, expected {param.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Stateful wrapper: reads ``.grad`` from each parameter and steps."""

    def __init__(self, params, lr=settings.LEARNING_RATE, betas=(settings.ADAM_BETA1, settings.ADAM_BETA2),
                 eps=settings.ADAM_EPS):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

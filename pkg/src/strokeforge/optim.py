"""Adam optimizer over name -> Tensor parameter maps."""

import numpy as np

from .autograd import NonFiniteError


class AdamState:
    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update.

    params : name -> Tensor, grads : name -> ndarray (same keys).
    Raises NonFiniteError naming the parameter if its gradient is not finite.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


class Adam:
    """Convenience wrapper reading gradients off the parameter tensors."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, grads=None):
        if grads is None:
            grads = {
                name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in self.params.items()
            }
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

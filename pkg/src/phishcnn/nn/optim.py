from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_DEFAULTS = {"learning_rate": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-7}


@dataclass
class LayerState:
    """Parameters of one layer together with their gradients and Adam moments."""

    weights: np.ndarray
    bias: np.ndarray
    weight_grad: np.ndarray = None
    bias_grad: np.ndarray = None
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        if self.weight_grad is None:
            self.weight_grad = np.zeros_like(self.weights)
        if self.bias_grad is None:
            self.bias_grad = np.zeros_like(self.bias)
        for name, p in (("weights", self.weights), ("bias", self.bias)):
            self.adam_m.setdefault(name, np.zeros_like(p))
            self.adam_v.setdefault(name, np.zeros_like(p))
        if self.weight_grad.shape != self.weights.shape or self.bias_grad.shape != self.bias.shape:
            raise ValueError("gradient shapes must match parameter shapes")


def adam_update(param, grad, m, v, t, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7):
    """One bias-corrected Adam update for step ``t`` (1-based).

    Returns ``(new_param, new_m, new_v)``.
    """
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - learning_rate * m_hat / (np.sqrt(v_hat) + epsilon), m, v


def adam_step(state: LayerState, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7) -> LayerState:
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    t = state.step_count + 1
    new = {}
    for name, grad in (("weights", state.weight_grad), ("bias", state.bias_grad)):
        p = getattr(state, name)
        new[name] = adam_update(p, grad, state.adam_m[name], state.adam_v[name], t,
                                learning_rate, beta1, beta2, epsilon)
    return LayerState(
        weights=new["weights"][0], bias=new["bias"][0],
        weight_grad=state.weight_grad, bias_grad=state.bias_grad,
        adam_m={k: v[1] for k, v in new.items()}, adam_v={k: v[2] for k, v in new.items()},
        step_count=t,
    )


class Adam:
    """Adam over every trainable tensor of a list of layers, updated in place."""

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate, self.beta1, self.beta2, self.epsilon = learning_rate, beta1, beta2, epsilon
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, layers) -> None:
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for i, layer in enumerate(layers):
            for name, p in layer.params.items():
                key = (i, name)
                g = layer.grads[name]
                if key not in self.m:
                    self.m[key] = np.zeros_like(p)
                    self.v[key] = np.zeros_like(p)
                m, v = self.m[key], self.v[key]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * (g * g)
                p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

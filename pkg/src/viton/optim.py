"""Adam with the try-on training defaults."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
LEARNING_RATE = 0.0002


class MissingGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    learning_rate: float = LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, state):
    """Apply one bias-corrected Adam update in place.

    Every parameter must carry a populated ``grad``; moments are created
    lazily on the first call.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name or i} has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = (p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(
            p.data.dtype
        )
    return params, state


class Adam:
    """Convenience wrapper pairing a parameter list with its :class:`AdamState`."""

    def __init__(self, params, **kwargs):
        self.params = list(params)
        self.state = AdamState(**kwargs)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)
